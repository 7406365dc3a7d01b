//! Inclusive parallel scan and block bi-diagonal solves built on it.
//!
//! The scan is the Kogge–Stone (Hillis–Steele) form: `⌈log₂ n⌉` rounds, each
//! a data-parallel map reading only the previous round's buffer. Lanes whose
//! left partner falls before index 0 pass through unchanged, which is the same
//! as combining with an identity element on the left.
//!
//! A block bi-diagonal system with unit diagonal,
//!
//! ```text
//! x_0 = c_0,    x_i = B_{i-1}·x_{i-1} + c_i
//! ```
//!
//! is a scan over affine maps `x ↦ B·x + c`. The combine `a_{i-1} ⊕ a_i` is the
//! composition `a_i ∘ a_{i-1}`, i.e. the later element multiplies on the left.
//! Getting this backwards yields prefixes of the reversed product and no error.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::parallel::map_indices;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScanError {
    #[error("bi-diagonal system has {rhs} right-hand sides but {coupling} coupling blocks (expected {expected})")]
    Dimension {
        rhs: usize,
        coupling: usize,
        expected: usize,
    },
    #[error("expected a {expected:?} system, got {got:?}")]
    WrongOrientation {
        expected: Orientation,
        got: Orientation,
    },
}

/// Result of an inclusive scan together with the number of combine rounds it took.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput<E> {
    pub values: Vec<E>,
    pub rounds: usize,
}

/// Inclusive scan `out[i] = a_0 ⊕ a_1 ⊕ … ⊕ a_i`.
///
/// `combine(left, right)` computes `left ⊕ right`, where `left` covers the
/// earlier indices. Requires associativity.
pub fn scan_inclusive<E, F>(elements: &[E], combine: F) -> ScanOutput<E>
where
    E: Clone + Send + Sync,
    F: Fn(&E, &E) -> E + Sync + Send,
{
    let n = elements.len();
    let mut cur = elements.to_vec();
    let mut rounds = 0;
    let mut offset = 1;
    while offset < n {
        let prev = &cur;
        let next = map_indices(n, |i| {
            if i >= offset {
                combine(&prev[i - offset], &prev[i])
            } else {
                prev[i].clone()
            }
        });
        cur = next;
        offset <<= 1;
        rounds += 1;
    }
    ScanOutput {
        values: cur,
        rounds,
    }
}

/// Affine map `x ↦ coupling·x + source`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineElement<const D: usize> {
    pub coupling: SMatrix<f64, D, D>,
    pub source: SVector<f64, D>,
}

impl<const D: usize> AffineElement<D> {
    pub fn new(coupling: SMatrix<f64, D, D>, source: SVector<f64, D>) -> Self {
        Self { coupling, source }
    }

    pub fn identity() -> Self {
        Self {
            coupling: SMatrix::identity(),
            source: SVector::zeros(),
        }
    }

    /// `earlier ⊕ later = later ∘ earlier`.
    #[inline]
    pub fn combine(earlier: &Self, later: &Self) -> Self {
        Self {
            coupling: later.coupling * earlier.coupling,
            source: later.coupling * earlier.source + later.source,
        }
    }

    pub fn apply(&self, x: &SVector<f64, D>) -> SVector<f64, D> {
        self.coupling * x + self.source
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `x_i` depends on `x_{i-1}` (forward sweep from the base).
    Lower,
    /// `x_i` depends on `x_{i+1}` (backward sweep from the tip).
    Upper,
}

/// Unit-diagonal block bi-diagonal system.
///
/// For `Lower`, `coupling[i]` is the block `B_i` in `x_{i+1} = B_i·x_i + c_{i+1}`
/// (the matrix entry is `−B_i`). For `Upper`, `coupling[i]` is `U_i` in
/// `x_i = U_i·x_{i+1} + c_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBiDiagSystem<const D: usize> {
    orientation: Orientation,
    coupling: Vec<SMatrix<f64, D, D>>,
    rhs: Vec<SVector<f64, D>>,
}

impl<const D: usize> BlockBiDiagSystem<D> {
    pub fn new(
        orientation: Orientation,
        coupling: Vec<SMatrix<f64, D, D>>,
        rhs: Vec<SVector<f64, D>>,
    ) -> Result<Self, ScanError> {
        let expected = rhs.len().saturating_sub(1);
        if coupling.len() != expected {
            return Err(ScanError::Dimension {
                rhs: rhs.len(),
                coupling: coupling.len(),
                expected,
            });
        }
        Ok(Self {
            orientation,
            coupling,
            rhs,
        })
    }

    pub fn lower(
        coupling: Vec<SMatrix<f64, D, D>>,
        rhs: Vec<SVector<f64, D>>,
    ) -> Result<Self, ScanError> {
        Self::new(Orientation::Lower, coupling, rhs)
    }

    pub fn upper(
        coupling: Vec<SMatrix<f64, D, D>>,
        rhs: Vec<SVector<f64, D>>,
    ) -> Result<Self, ScanError> {
        Self::new(Orientation::Upper, coupling, rhs)
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn coupling(&self) -> &[SMatrix<f64, D, D>] {
        &self.coupling
    }

    pub fn rhs(&self) -> &[SVector<f64, D>] {
        &self.rhs
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    /// Dispatch on orientation.
    pub fn solve(&self) -> BidiagSolution<D> {
        match self.orientation {
            Orientation::Lower => lower_sweep(&self.coupling, &self.rhs),
            Orientation::Upper => upper_sweep(&self.coupling, &self.rhs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidiagSolution<const D: usize> {
    pub x: Vec<SVector<f64, D>>,
    pub rounds: usize,
}

pub fn solve_lower_bidiag<const D: usize>(
    sys: &BlockBiDiagSystem<D>,
) -> Result<BidiagSolution<D>, ScanError> {
    if sys.orientation != Orientation::Lower {
        return Err(ScanError::WrongOrientation {
            expected: Orientation::Lower,
            got: sys.orientation,
        });
    }
    Ok(lower_sweep(&sys.coupling, &sys.rhs))
}

pub fn solve_upper_bidiag<const D: usize>(
    sys: &BlockBiDiagSystem<D>,
) -> Result<BidiagSolution<D>, ScanError> {
    if sys.orientation != Orientation::Upper {
        return Err(ScanError::WrongOrientation {
            expected: Orientation::Upper,
            got: sys.orientation,
        });
    }
    Ok(upper_sweep(&sys.coupling, &sys.rhs))
}

/// Forward sweep on borrowed blocks; the dynamics kernels call this directly.
pub(crate) fn lower_sweep<const D: usize>(
    coupling: &[SMatrix<f64, D, D>],
    rhs: &[SVector<f64, D>],
) -> BidiagSolution<D> {
    debug_assert_eq!(coupling.len() + 1, rhs.len().max(1));
    let elements = map_indices(rhs.len(), |i| {
        if i == 0 {
            AffineElement::new(SMatrix::identity(), rhs[0])
        } else {
            AffineElement::new(coupling[i - 1], rhs[i])
        }
    });
    let out = scan_inclusive(&elements, AffineElement::combine);
    BidiagSolution {
        x: out.values.into_iter().map(|e| e.source).collect(),
        rounds: out.rounds,
    }
}

/// Backward sweep: the lower sweep under index reversal.
pub(crate) fn upper_sweep<const D: usize>(
    coupling: &[SMatrix<f64, D, D>],
    rhs: &[SVector<f64, D>],
) -> BidiagSolution<D> {
    let n = rhs.len();
    debug_assert_eq!(coupling.len() + 1, n.max(1));
    let elements = map_indices(n, |k| {
        let i = n - 1 - k;
        if k == 0 {
            AffineElement::new(SMatrix::identity(), rhs[i])
        } else {
            AffineElement::new(coupling[i], rhs[i])
        }
    });
    let out = scan_inclusive(&elements, AffineElement::combine);
    let mut x: Vec<_> = out.values.into_iter().map(|e| e.source).collect();
    x.reverse();
    BidiagSolution {
        x,
        rounds: out.rounds,
    }
}
