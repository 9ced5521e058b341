//! Benchmark kernels and the efficiency report.
//!
//! Each kernel is timed five times. Efficiency compares the mean of a
//! candidate result with the mean of a baseline result, oriented so that
//! values above 1 favour the candidate.

pub mod cg;
pub mod comm;
pub mod io;
pub mod triad;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::IoMode;

use crate::scalar::Scalar;

/// Timed repetitions per benchmark.
pub const RUNS: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("need at least 2 lanes, got {0}")]
    InvalidLanes(usize),
    #[error("residual rose at iteration {iteration}: {previous:e} -> {residual:e}")]
    Diverged {
        iteration: usize,
        residual: f64,
        previous: f64,
    },
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("incorrect result: {0}")]
    Incorrect(String),
    #[error("results are not comparable: {0}")]
    ConfigMismatch(String),
    #[error("invalid result: {0}")]
    InvalidResult(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kernel {
    StreamTriad,
    Cg,
    Latency,
    AllReduce,
    IoWrite,
    IoRead,
}

impl Kernel {
    pub fn metric(self) -> Metric {
        match self {
            Kernel::StreamTriad | Kernel::IoWrite | Kernel::IoRead => Metric::MBps,
            Kernel::Cg => Metric::GFlops,
            Kernel::Latency | Kernel::AllReduce => Metric::Microseconds,
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "streamtriad" | "triad" | "stream" => Ok(Kernel::StreamTriad),
            "cg" | "hpcg" => Ok(Kernel::Cg),
            "latency" => Ok(Kernel::Latency),
            "allreduce" => Ok(Kernel::AllReduce),
            "iowrite" | "write" => Ok(Kernel::IoWrite),
            "ioread" | "read" => Ok(Kernel::IoRead),
            _ => Err(format!("unknown kernel `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    MBps,
    GFlops,
    #[serde(rename = "us")]
    Microseconds,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Microseconds)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub nodes: u32,
    pub procs: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, u64>,
}

impl BenchConfig {
    pub fn new(nodes: u32, procs: u32) -> Self {
        Self {
            nodes,
            procs,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: u64) -> Self {
        self.params.insert(key.to_owned(), value);
        self
    }
}

impl fmt::Display for BenchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let node = if self.nodes == 1 { "node" } else { "nodes" };
        write!(f, "{} {node} / {} procs", self.nodes, self.procs)?;
        for (k, v) in &self.params {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub name: Kernel,
    pub config: BenchConfig,
    pub metric: Metric,
    pub runs: Vec<f64>,
}

impl BenchmarkResult {
    pub fn new(name: Kernel, config: BenchConfig, runs: Vec<f64>) -> Result<Self, BenchError> {
        let r = Self {
            name,
            config,
            metric: name.metric(),
            runs,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.runs.len() != RUNS {
            return Err(BenchError::InvalidResult(format!(
                "{} has {} runs, expected {RUNS}",
                self.name,
                self.runs.len()
            )));
        }
        if self.runs.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(BenchError::InvalidResult(format!(
                "{} has a non-positive or non-finite run",
                self.name
            )));
        }
        if self.metric != self.name.metric() {
            return Err(BenchError::InvalidResult(format!("{} reported in {:?}", self.name, self.metric)));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.runs.iter().sum::<f64>() / self.runs.len() as f64
    }
}

pub fn run_stream_triad(n: usize, threads: usize) -> Result<BenchmarkResult, BenchError> {
    let runs = triad::measure::<f64>(n, threads, RUNS)?;
    BenchmarkResult::new(
        Kernel::StreamTriad,
        BenchConfig::new(1, threads as u32).with("n", n as u64),
        runs,
    )
}

pub fn run_cg(grid: (usize, usize, usize), max_iters: usize) -> Result<BenchmarkResult, BenchError> {
    let runs = cg::measure::<f64>(grid, max_iters, 0, RUNS)?;
    BenchmarkResult::new(
        Kernel::Cg,
        BenchConfig::new(1, 1)
            .with("nx", grid.0 as u64)
            .with("ny", grid.1 as u64)
            .with("nz", grid.2 as u64),
        runs,
    )
}

pub const LATENCY_ITERS: usize = 2000;
pub const ALLREDUCE_ITERS: usize = 200;

pub fn run_latency(lanes: usize, bytes: usize) -> Result<BenchmarkResult, BenchError> {
    if bytes != 0 && bytes != 8 {
        return Err(BenchError::InvalidSize(format!("latency messages are 0 or 8 bytes, got {bytes}")));
    }
    let runs = comm::measure_latency(lanes, bytes, LATENCY_ITERS, RUNS)?;
    BenchmarkResult::new(
        Kernel::Latency,
        BenchConfig::new(1, lanes as u32).with("bytes", bytes as u64),
        runs,
    )
}

pub fn run_allreduce(lanes: usize) -> Result<BenchmarkResult, BenchError> {
    let runs = comm::measure_allreduce::<f64>(lanes, ALLREDUCE_ITERS, RUNS)?;
    BenchmarkResult::new(Kernel::AllReduce, BenchConfig::new(1, lanes as u32), runs)
}

pub fn run_io(path: &Path, total_mb: u64, lanes: usize, mode: IoMode) -> Result<BenchmarkResult, BenchError> {
    let runs = io::measure(path, total_mb, lanes, mode, RUNS)?;
    let kernel = match mode {
        IoMode::Write => Kernel::IoWrite,
        IoMode::Read => Kernel::IoRead,
    };
    BenchmarkResult::new(kernel, BenchConfig::new(1, lanes as u32).with("mb", total_mb), runs)
}

/// Candidate over baseline for throughput, baseline over candidate for
/// times, so that values above 1 favour the candidate.
pub fn ratio<T: Scalar>(baseline_mean: T, candidate_mean: T, metric: Metric) -> T {
    if metric.higher_is_better() {
        candidate_mean / baseline_mean
    } else {
        baseline_mean / candidate_mean
    }
}

pub fn efficiency(baseline: &BenchmarkResult, candidate: &BenchmarkResult) -> Result<f64, BenchError> {
    baseline.validate()?;
    candidate.validate()?;
    if baseline.name != candidate.name || baseline.config != candidate.config || baseline.metric != candidate.metric {
        return Err(BenchError::ConfigMismatch(format!(
            "{} [{}] vs {} [{}]",
            baseline.name, baseline.config, candidate.name, candidate.config
        )));
    }
    Ok(ratio(baseline.mean(), candidate.mean(), baseline.metric))
}

/// Baseline mean implied by a candidate mean and a reported efficiency.
pub fn implied_baseline<T: Scalar>(candidate_mean: T, efficiency: T, metric: Metric) -> T {
    if metric.higher_is_better() {
        candidate_mean / efficiency
    } else {
        candidate_mean * efficiency
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub name: Kernel,
    pub config: BenchConfig,
    pub efficiency: f64,
}

impl EfficiencyRow {
    /// Efficiency as printed: two decimals.
    pub fn rounded(&self) -> String {
        format!("{:.2}", self.efficiency)
    }
}

/// Pairs baseline and candidate results position by position.
pub fn report(baseline: &[BenchmarkResult], candidate: &[BenchmarkResult]) -> Result<Vec<EfficiencyRow>, BenchError> {
    if baseline.len() != candidate.len() {
        return Err(BenchError::ConfigMismatch(format!(
            "{} baseline results vs {} candidate results",
            baseline.len(),
            candidate.len()
        )));
    }
    baseline
        .iter()
        .zip(candidate)
        .map(|(b, c)| {
            Ok(EfficiencyRow {
                name: b.name,
                config: b.config.clone(),
                efficiency: efficiency(b, c)?,
            })
        })
        .collect()
}

pub fn render_text(rows: &[EfficiencyRow]) -> String {
    let header = ["Benchmark", "Config", "Efficiency"];
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|r| [r.name.to_string(), r.config.to_string(), r.rounded()])
        .collect();
    let w0 = cells.iter().map(|c| c[0].len()).chain([header[0].len()]).max().unwrap_or(0);
    let w1 = cells.iter().map(|c| c[1].len()).chain([header[1].len()]).max().unwrap_or(0);
    let mut out = format!("{:<w0$}  {:<w1$}  {}\n", header[0], header[1], header[2]);
    for c in cells {
        out.push_str(&format!("{:<w0$}  {:<w1$}  {:>10}\n", c[0], c[1], c[2]));
    }
    out
}

pub fn render_json(rows: &[EfficiencyRow]) -> String {
    let rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "name": r.name,
                "config": r.config,
                "efficiency": r.rounded().parse::<f64>().expect("formatted float"),
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "rows": rows })).expect("json")
}

/// Synthetic result pairs whose means realize a fixed table of ratios.
pub mod fixtures {
    use super::*;

    /// Kernel, nodes, procs, baseline mean, target efficiency.
    const ROWS: [(Kernel, u32, u32, f64, f64); 19] = [
        (Kernel::StreamTriad, 1, 32, 120_000.0, 0.98),
        (Kernel::Cg, 1, 32, 30.0, 0.96),
        (Kernel::Cg, 2, 64, 60.0, 0.97),
        (Kernel::Cg, 4, 128, 120.0, 0.97),
        (Kernel::Cg, 8, 256, 240.0, 0.96),
        (Kernel::Latency, 1, 2, 0.40, 0.95),
        (Kernel::Latency, 2, 2, 1.10, 0.92),
        (Kernel::AllReduce, 1, 32, 4.0, 0.95),
        (Kernel::AllReduce, 2, 64, 6.0, 0.98),
        (Kernel::AllReduce, 4, 128, 8.0, 0.96),
        (Kernel::AllReduce, 8, 256, 10.0, 0.92),
        (Kernel::IoWrite, 1, 16, 4_000.0, 0.98),
        (Kernel::IoWrite, 2, 32, 8_000.0, 0.65),
        (Kernel::IoWrite, 4, 64, 14_000.0, 0.63),
        (Kernel::IoWrite, 8, 128, 21_131.0, 0.55),
        (Kernel::IoRead, 1, 16, 5_000.0, 1.01),
        (Kernel::IoRead, 2, 32, 10_000.0, 0.96),
        (Kernel::IoRead, 4, 64, 20_000.0, 0.98),
        (Kernel::IoRead, 8, 128, 38_000.0, 0.94),
    ];

    /// Run spreads whose mean is exactly 1.
    const BASE_SPREAD: [f64; RUNS] = [0.98, 1.01, 1.0, 0.99, 1.02];
    const CAND_SPREAD: [f64; RUNS] = [1.01, 0.99, 1.0, 1.02, 0.98];

    /// Candidate mean reported for the largest write configuration.
    pub const IO_WRITE_8_NODE_CANDIDATE: f64 = 11_622.0;

    fn config(kernel: Kernel, nodes: u32, procs: u32) -> BenchConfig {
        let c = BenchConfig::new(nodes, procs);
        match kernel {
            Kernel::StreamTriad => c.with("n", 2_000_000_000),
            Kernel::Latency => c.with("bytes", 0),
            _ => c,
        }
    }

    /// Baseline and candidate result lists, aligned by position.
    pub fn table1() -> (Vec<BenchmarkResult>, Vec<BenchmarkResult>) {
        let mut base = Vec::new();
        let mut cand = Vec::new();
        for &(kernel, nodes, procs, b, eff) in &ROWS {
            let c = if kernel == Kernel::IoWrite && nodes == 8 {
                IO_WRITE_8_NODE_CANDIDATE
            } else if kernel.metric().higher_is_better() {
                b * eff
            } else {
                b / eff
            };
            let cfg = config(kernel, nodes, procs);
            base.push(
                BenchmarkResult::new(kernel, cfg.clone(), BASE_SPREAD.iter().map(|s| s * b).collect())
                    .expect("fixture runs are positive"),
            );
            cand.push(
                BenchmarkResult::new(kernel, cfg, CAND_SPREAD.iter().map(|s| s * c).collect())
                    .expect("fixture runs are positive"),
            );
        }
        (base, cand)
    }
}
