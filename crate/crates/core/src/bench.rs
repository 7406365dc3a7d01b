//! Timing harness for the link-count and group-count sweeps.
//!
//! Workloads are fully determined by the seed: chain `m` of a cell with `n`
//! links is drawn from ChaCha stream `n`, and the joint inputs of every repeat
//! come from a per-cell stream that does not depend on the algorithm, so each
//! algorithm sees identical problems. Inputs are uniform in `[−1, 1]`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{
    abia_forward_dynamics, batch_forward_dynamics, forward_dynamics, jsiia_forward_dynamics, Algorithm,
    DynamicsError, FdProblem,
};
use crate::inverse::inverse_dynamics;
use crate::model::{random_chain, JointVector, RobotChain};
use crate::parallel::with_workers;

pub const CSV_HEADER: [&str; 7] = [
    "algo",
    "n_links",
    "n_groups",
    "repeats",
    "worker_count",
    "mean_us",
    "stddev_us",
];

const WARMUP_CALLS: usize = 3;
/// One spot-check per this many repeats (the first repeat is always checked).
const SPOT_CHECK_EVERY: usize = 100;
const SPOT_CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    LinkSweep,
    GroupSweep,
}

impl FromStr for BenchMode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "link" | "link-sweep" => Ok(BenchMode::LinkSweep),
            "group" | "group-sweep" => Ok(BenchMode::GroupSweep),
            _ => Err(BenchError::Config(format!("unknown mode `{s}` (expected link or group)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchAlgo {
    Forward(Algorithm),
    InverseDynamics,
}

impl BenchAlgo {
    pub fn name(self) -> &'static str {
        match self {
            BenchAlgo::Forward(a) => a.name(),
            BenchAlgo::InverseDynamics => "invdyn",
        }
    }
}

impl fmt::Display for BenchAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchAlgo {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "jsiia" => Ok(BenchAlgo::Forward(Algorithm::Jsiia)),
            "abia" => Ok(BenchAlgo::Forward(Algorithm::Abia)),
            "cfa" => Ok(BenchAlgo::Forward(Algorithm::Cfa)),
            "invdyn" => Ok(BenchAlgo::InverseDynamics),
            _ => Err(BenchError::Config(format!(
                "unknown algorithm `{s}` (expected jsiia, abia, cfa or invdyn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub mode: BenchMode,
    pub algos: Vec<BenchAlgo>,
    /// Chain lengths. In group mode every group member has each of these lengths.
    pub link_counts: Vec<usize>,
    /// Problems per batch; ignored in link mode.
    pub group_counts: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub workers: usize,
    pub output_path: Option<PathBuf>,
    pub spot_check: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            mode: BenchMode::LinkSweep,
            algos: vec![
                BenchAlgo::Forward(Algorithm::Jsiia),
                BenchAlgo::Forward(Algorithm::Abia),
                BenchAlgo::Forward(Algorithm::Cfa),
            ],
            link_counts: vec![10, 50, 100, 200],
            group_counts: vec![1, 10, 100, 1000],
            repeats: 1000,
            seed: 42,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            output_path: None,
            spot_check: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: &str| Err(BenchError::Config(m.to_string()));
        if self.algos.is_empty() {
            return fail("at least one algorithm is required");
        }
        if self.link_counts.is_empty() {
            return fail("link counts must not be empty");
        }
        if self.link_counts.contains(&0) {
            return fail("link counts must be at least 1");
        }
        if self.mode == BenchMode::GroupSweep {
            if self.group_counts.is_empty() {
                return fail("group counts must not be empty in group mode");
            }
            if self.group_counts.contains(&0) {
                return fail("group counts must be at least 1");
            }
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub algo: String,
    pub n_links: usize,
    pub n_groups: usize,
    pub repeats: usize,
    pub worker_count: usize,
    pub mean_us: f64,
    pub stddev_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub algo: String,
    pub n_links: usize,
    pub n_groups: usize,
    pub message: String,
}

impl fmt::Display for CellFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} n_links={} n_groups={}: {}",
            self.algo, self.n_links, self.n_groups, self.message
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The `members` chains of `n` links used by every cell of that length.
pub fn bench_chains(seed: u64, n: usize, members: usize) -> Vec<RobotChain> {
    let mut rng = stream_rng(seed, n as u64);
    let seeds: Vec<u64> = (0..members).map(|_| rng.next_u64()).collect();
    seeds.into_par_iter().map(|s| random_chain(n, s)).collect()
}

fn uniform(n: usize, rng: &mut ChaCha8Rng) -> JointVector {
    JointVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0))
}

/// Joint inputs `(q, q̇, τ or q̈)` for one problem.
type Inputs = (JointVector, JointVector, JointVector);

fn draw_inputs(chains: &[RobotChain], rng: &mut ChaCha8Rng) -> Vec<Inputs> {
    chains
        .iter()
        .map(|c| (uniform(c.n(), rng), uniform(c.n(), rng), uniform(c.n(), rng)))
        .collect()
}

fn rel_diff(a: &JointVector, b: &JointVector) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(f64::MIN_POSITIVE)
}

/// Cross-check one problem against an independent algorithm.
fn spot_check(algo: BenchAlgo, chain: &RobotChain, x: &Inputs, result: &JointVector) -> Result<(), String> {
    let (q, qd, u) = x;
    let (reference, label) = match algo {
        BenchAlgo::Forward(Algorithm::Abia) => (jsiia_forward_dynamics(chain, q, qd, u), "jsiia"),
        BenchAlgo::Forward(_) => (abia_forward_dynamics(chain, q, qd, u), "abia"),
        BenchAlgo::InverseDynamics => {
            // u is q̈ here: FD(ID(q̈)) must return it.
            let back = abia_forward_dynamics(chain, q, qd, result).map_err(|e| e.to_string())?;
            let err = rel_diff(&back, u);
            return if err <= SPOT_CHECK_TOL {
                Ok(())
            } else {
                Err(format!("spot check: FD(ID(q̈)) differs from q̈ by {err:.3e}"))
            };
        }
    };
    let reference = reference.map_err(|e| e.to_string())?;
    let err = rel_diff(result, &reference);
    if err <= SPOT_CHECK_TOL {
        Ok(())
    } else {
        Err(format!("spot check: disagrees with {label} by {err:.3e}"))
    }
}

fn solve_all(algo: BenchAlgo, chains: &[RobotChain], inputs: &[Inputs]) -> Vec<Result<JointVector, DynamicsError>> {
    match algo {
        BenchAlgo::Forward(a) if chains.len() == 1 => {
            let (q, qd, t) = &inputs[0];
            vec![forward_dynamics(a, &chains[0], q, qd, t)]
        }
        BenchAlgo::Forward(a) => {
            let problems: Vec<FdProblem<'_>> = chains
                .iter()
                .zip(inputs)
                .map(|(chain, (q, qd, t))| FdProblem {
                    chain,
                    q: q.clone(),
                    qdot: qd.clone(),
                    tau: t.clone(),
                })
                .collect();
            batch_forward_dynamics(&problems, a)
        }
        BenchAlgo::InverseDynamics if chains.len() == 1 => {
            let (q, qd, a) = &inputs[0];
            vec![Ok(inverse_dynamics(&chains[0], q, qd, a))]
        }
        BenchAlgo::InverseDynamics => chains
            .par_iter()
            .zip(inputs)
            .map(|(c, (q, qd, a))| Ok(inverse_dynamics(c, q, qd, a)))
            .collect(),
    }
}

fn mean_stddev(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_cell(
    config: &BenchConfig,
    algo: BenchAlgo,
    chains: &[RobotChain],
    n: usize,
    groups: usize,
) -> Result<BenchRecord, String> {
    let mut rng = stream_rng(config.seed, ((n as u64) << 32) | groups as u64);
    let warm = draw_inputs(chains, &mut rng);
    for _ in 0..WARMUP_CALLS {
        for r in solve_all(algo, chains, &warm) {
            r.map_err(|e| e.to_string())?;
        }
    }
    let mut samples = Vec::with_capacity(config.repeats);
    for k in 0..config.repeats {
        let inputs = draw_inputs(chains, &mut rng);
        let start = Instant::now();
        let results = solve_all(algo, chains, &inputs);
        let elapsed = start.elapsed();
        samples.push(elapsed.as_secs_f64() * 1e6);

        let mut solved = Vec::with_capacity(results.len());
        for r in results {
            solved.push(r.map_err(|e| e.to_string())?);
        }
        if config.spot_check && k % SPOT_CHECK_EVERY == 0 {
            spot_check(algo, &chains[0], &inputs[0], &solved[0])?;
        }
    }
    let (mean_us, stddev_us) = mean_stddev(&samples);
    Ok(BenchRecord {
        algo: algo.name().to_string(),
        n_links: n,
        n_groups: groups,
        repeats: config.repeats,
        worker_count: config.workers,
        mean_us,
        stddev_us,
    })
}

/// Run every `(algo, n, groups)` cell. Failing cells are reported in
/// `failures` and do not stop the sweep.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchOutcome, BenchError> {
    config.validate()?;
    let groups = match config.mode {
        BenchMode::LinkSweep => vec![1],
        BenchMode::GroupSweep => config.group_counts.clone(),
    };
    let max_groups = groups.iter().copied().max().unwrap_or(1);
    let mut outcome = BenchOutcome::default();
    with_workers(config.workers, || {
        for &n in &config.link_counts {
            let chains = bench_chains(config.seed, n, max_groups);
            for &g in &groups {
                for &algo in &config.algos {
                    match run_cell(config, algo, &chains[..g], n, g) {
                        Ok(r) => outcome.records.push(r),
                        Err(message) => outcome.failures.push(CellFailure {
                            algo: algo.name().to_string(),
                            n_links: n,
                            n_groups: g,
                            message,
                        }),
                    }
                }
            }
        }
    });
    Ok(outcome)
}

/// Write records as CSV to any writer, header first.
pub fn write_csv<W: std::io::Write>(records: &[BenchRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write records as CSV, header first, even when there are no records.
pub fn emit_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<(), BenchError> {
    let path = path.as_ref();
    let err = |source| BenchError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(|e| err(e.into()))?;
    write_csv(records, std::io::BufWriter::new(file)).map_err(err)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>, BenchError> {
    let path = path.as_ref();
    let err = |source| BenchError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(err)
}

/// Least-squares slope of `ln(mean_us)` against `ln(n_links)`.
pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let xy: Vec<(f64, f64)> = points.iter().map(|&(n, t)| ((n as f64).ln(), t.ln())).collect();
    let k = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / k;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = xy.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xy.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}
