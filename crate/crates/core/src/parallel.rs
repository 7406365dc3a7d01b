//! Data-parallel helpers and dependency-depth instrumentation.
//!
//! Every parallel map here writes element `i` from a fixed formula of the
//! inputs, so results do not depend on how many workers run it.

use rayon::prelude::*;

/// Below this many items a map runs inline on the calling worker.
pub const PAR_THRESHOLD: usize = 64;
const MIN_CHUNK: usize = 16;

/// `(0..n).map(f).collect()`, fanned out over the current rayon pool for large `n`.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().with_min_len(MIN_CHUNK).map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Run `f` inside a dedicated pool of `workers` threads.
pub fn with_workers<T: Send, F: FnOnce() -> T + Send>(workers: usize, f: F) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("failed to build worker pool");
    pool.install(f)
}

/// `⌈log₂ n⌉`, with `ceil_log2(0) = ceil_log2(1) = 0`.
pub fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// How a phase's per-link work depends on itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    /// Independent per-link work: one dependent step.
    Parallel,
    /// Balanced tree of `rounds` barrier-separated steps (scan, odd-even elimination).
    Tree { rounds: usize },
    /// A loop where link `i` waits on link `i ± 1`.
    Sequential { steps: usize },
}

impl PhaseKind {
    pub fn depth(&self) -> usize {
        match *self {
            PhaseKind::Parallel => 1,
            PhaseKind::Tree { rounds } => rounds,
            PhaseKind::Sequential { steps } => steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phase {
    pub name: &'static str,
    pub kind: PhaseKind,
}

/// Ordered record of the phases an algorithm executed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DepthTrace {
    pub phases: Vec<Phase>,
}

impl DepthTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, name: &'static str, kind: PhaseKind) {
        self.phases.push(Phase { name, kind });
    }

    pub fn parallel(&mut self, name: &'static str) {
        self.record(name, PhaseKind::Parallel);
    }

    /// Critical-path length in dependent steps.
    pub fn total_depth(&self) -> usize {
        self.phases.iter().map(|p| p.kind.depth()).sum()
    }

    pub fn sequential_phases(&self) -> impl Iterator<Item = &Phase> {
        self.phases
            .iter()
            .filter(|p| matches!(p.kind, PhaseKind::Sequential { .. }))
    }

    pub fn tree_rounds(&self, name: &str) -> Vec<usize> {
        self.phases
            .iter()
            .filter(|p| p.name == name)
            .filter_map(|p| match p.kind {
                PhaseKind::Tree { rounds } => Some(rounds),
                _ => None,
            })
            .collect()
    }
}
