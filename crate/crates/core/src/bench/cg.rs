//! Krylov solve of the 7-point Laplacian.
//!
//! The solver is the conjugate residual variant of CG. For a symmetric
//! positive definite operator it minimizes the residual norm over the
//! growing Krylov space, so the reported residual sequence is monotone up to
//! round-off, which plain CG does not guarantee.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BenchError;
use crate::scalar::Scalar;

pub const MIN_DIM: usize = 8;
/// Allowed per-step residual growth, relative to the initial residual, for
/// double precision.
pub const MONOTONE_TOL: f64 = 1e-12;

/// `-Δ` on an `nx × ny × nz` grid with zero Dirichlet boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Laplacian7 {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Laplacian7 {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn rows(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    /// Stored nonzeros: the diagonal plus one entry per interior neighbor.
    pub fn nnz(&self) -> usize {
        let (x, y, z) = (self.nx, self.ny, self.nz);
        x * y * z + 2 * ((x - 1) * y * z + x * (y - 1) * z + x * y * (z - 1))
    }

    pub fn apply<T: Scalar>(&self, v: &[T], out: &mut [T]) {
        let six = T::from_f64_exact(6.0);
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = self.index(i, j, k);
                    let mut s = six * v[idx];
                    if i > 0 {
                        s -= v[idx - 1];
                    }
                    if i + 1 < nx {
                        s -= v[idx + 1];
                    }
                    if j > 0 {
                        s -= v[idx - nx];
                    }
                    if j + 1 < ny {
                        s -= v[idx + nx];
                    }
                    if k > 0 {
                        s -= v[idx - nx * ny];
                    }
                    if k + 1 < nz {
                        s -= v[idx + nx * ny];
                    }
                    out[idx] = s;
                }
            }
        }
    }

    /// Flops of one operator application: one multiply per stored entry and
    /// one add per entry beyond the first in each row.
    pub fn apply_flops(&self) -> u64 {
        (2 * self.nnz() - self.rows()) as u64
    }

    /// Dense row-major copy, for small validation problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.rows();
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        let mut a = vec![vec![0.0; n]; n];
        for c in 0..n {
            e[c] = 1.0;
            self.apply(&e, &mut col);
            for r in 0..n {
                a[r][c] = col[r];
            }
            e[c] = 0.0;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solve<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// `‖r_k‖` for k = 0..=iterations.
    pub residuals: Vec<T>,
    pub flops: u64,
    pub converged: bool,
}

impl<T: Scalar> Solve<T> {
    pub fn relative_residual(&self) -> T {
        let r0 = self.residuals[0];
        if r0 == T::zero() {
            T::zero()
        } else {
            *self.residuals.last().expect("r0 recorded") / r0
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

#[derive(Debug, Clone, Copy)]
pub struct CrSolver<T> {
    pub op: Laplacian7,
    pub rtol: T,
    pub max_iters: usize,
}

impl<T: Scalar> CrSolver<T> {
    pub fn new(op: Laplacian7, rtol: T, max_iters: usize) -> Self {
        Self { op, rtol, max_iters }
    }

    /// Solves `A x = b` from `x = 0`. Fails with `Diverged` if any step
    /// raises the residual norm by more than the round-off allowance.
    pub fn solve(&self, b: &[T]) -> Result<Solve<T>, BenchError> {
        let n = self.op.rows();
        let nf = n as u64;
        let mut x = vec![T::zero(); n];
        let mut r = b.to_vec();
        let mut ar = vec![T::zero(); n];
        self.op.apply(&r, &mut ar);
        let mut p = r.clone();
        let mut ap = ar.clone();
        let mut rar = dot(&r, &ar);
        let r0 = dot(&r, &r).sqrt();
        let mut flops = self.op.apply_flops() + 4 * nf;
        let mut residuals = vec![r0];
        let tol = self.rtol * r0;
        // Single precision cannot resolve 1e-12; fall back to a few ulps.
        let slack = T::from_f64_exact(MONOTONE_TOL).max(T::epsilon() * T::from_f64_exact(10.0)) * r0;
        if r0 == T::zero() {
            return Ok(Solve {
                x,
                iterations: 0,
                residuals,
                flops,
                converged: true,
            });
        }
        for it in 1..=self.max_iters {
            let apap = dot(&ap, &ap);
            if apap == T::zero() {
                break;
            }
            let alpha = rar / apap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            self.op.apply(&r, &mut ar);
            let rar_new = dot(&r, &ar);
            let beta = rar_new / rar;
            rar = rar_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
                ap[i] = ar[i] + beta * ap[i];
            }
            let rn = dot(&r, &r).sqrt();
            // dots: (Ap,Ap), (r,Ar), (r,r); updates: x, r, p, Ap.
            flops += self.op.apply_flops() + 3 * 2 * nf + 4 * 2 * nf;
            let prev = *residuals.last().expect("r0 recorded");
            if rn > prev + slack || !rn.is_finite() {
                return Err(BenchError::Diverged {
                    iteration: it,
                    residual: rn.to_f64().unwrap_or(f64::NAN),
                    previous: prev.to_f64().unwrap_or(f64::NAN),
                });
            }
            residuals.push(rn);
            if rn <= tol {
                return Ok(Solve {
                    x,
                    iterations: it,
                    residuals,
                    flops,
                    converged: true,
                });
            }
        }
        Ok(Solve {
            x,
            iterations: residuals.len() - 1,
            residuals,
            flops,
            converged: false,
        })
    }
}

/// `b = A x*` for a seeded random `x*` in [-1, 1).
pub fn manufactured_rhs<T: Scalar>(op: &Laplacian7, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<T> = (0..op.rows())
        .map(|_| T::from_f64_exact(rng.gen_range(-1.0..1.0)))
        .collect();
    let mut b = vec![T::zero(); op.rows()];
    op.apply(&xs, &mut b);
    (b, xs)
}

pub const CG_RTOL: f64 = 1e-6;

/// Five timed solves; returns GFlop/s per solve.
pub fn measure<T: Scalar>(
    grid: (usize, usize, usize),
    max_iters: usize,
    seed: u64,
    runs: usize,
) -> Result<Vec<f64>, BenchError> {
    let (nx, ny, nz) = grid;
    if nx.min(ny).min(nz) < MIN_DIM {
        return Err(BenchError::InvalidSize(format!(
            "cg grid dims must be >= {MIN_DIM}, got {nx}x{ny}x{nz}"
        )));
    }
    if max_iters == 0 {
        return Err(BenchError::InvalidSize("max_iters must be positive".into()));
    }
    let op = Laplacian7::new(nx, ny, nz);
    let (b, _) = manufactured_rhs::<T>(&op, seed);
    let solver = CrSolver::new(op, T::from_f64_exact(CG_RTOL), max_iters);
    let mut out = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let s = solver.solve(&b)?;
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        out.push(s.flops as f64 / secs / 1e9);
    }
    Ok(out)
}
