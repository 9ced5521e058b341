pub mod audit;
pub mod bench;
pub mod commands;
pub mod flows;
pub mod hostsched;
pub mod ids;
pub mod netmodel;
pub mod platform;
pub mod provisioner;
pub mod scalar;
pub mod scenario;
pub mod securefs;

pub use scalar::Scalar;

/// Element type of the default benchmark kernels.
pub type Real = f64;
pub type Triad = bench::triad::Triad<Real>;
pub type Triad32 = bench::triad::Triad<f32>;
pub type CrSolver = bench::cg::CrSolver<Real>;
pub type CrSolver32 = bench::cg::CrSolver<f32>;
pub type Solve = bench::cg::Solve<Real>;
