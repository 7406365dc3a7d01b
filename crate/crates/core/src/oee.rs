//! Odd-even elimination for symmetric block tri-diagonal systems.
//!
//! ```text
//! | D_1   U_1                |
//! | U_1ᵀ  D_2   U_2          |
//! |       U_2ᵀ  ⋱     U_{n-1}|
//! |             U_{n-1}ᵀ D_n |
//! ```
//!
//! Round `j` (distance `h = 2^{j-1}`) removes every coupling at distance `h`
//! by subtracting multiples of rows `i ± h`:
//!
//! ```text
//! E_i   = U_i · D_{i+h}⁻¹            K_i = U_{i-h}ᵀ · D_{i-h}⁻¹
//! D_i' = D_i − E_i·U_iᵀ − K_i·U_{i-h}
//! U_i' = −E_i · U_{i+h}              (couples i and i + 2h)
//! R_i' = R_i − E_i·R_{i+h} − K_i·R_{i-h}
//! ```
//!
//! Terms whose partner index falls outside `[0, n)` are dropped. Every row of a
//! round reads only the previous round's blocks and writes only its own slot,
//! so rows run concurrently and the output is independent of the worker count.
//! After `⌈log₂ n⌉` rounds the system is block diagonal. The updated system
//! stays symmetric, so only upper couplings are stored.
//!
//! Coefficients come from factor-and-solve (`D·Eᵀ = Uᵀ`) with a symmetric
//! indefinite factorization; no block is ever inverted explicitly.

use nalgebra::{DMatrix, SMatrix};
use thiserror::Error;

use crate::parallel::{ceil_log2, map_indices};
use crate::symfact::SymIndefinite;

/// Symmetry tolerance on diagonal blocks, relative to the block's largest entry.
pub const DIAG_SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Elimination round `j` (1-based).
    Round(usize),
    /// The closing per-block solve on the diagonalized system.
    BackSolve,
    /// Sequential block-Thomas reference solver.
    Thomas,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Round(j) => write!(f, "round {j}"),
            Stage::BackSolve => write!(f, "the final block solve"),
            Stage::Thomas => write!(f, "block-Thomas elimination"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OeeError {
    #[error("block tri-diagonal system has {diag} diagonal blocks and {upper} couplings")]
    Dimension { diag: usize, upper: usize },
    #[error("right-hand side has {got} blocks, system has {expected}")]
    RhsLength { expected: usize, got: usize },
    #[error("diagonal block {index} is not symmetric (asymmetry {asymmetry:.3e})")]
    AsymmetricDiagonal { index: usize, asymmetry: f64 },
    #[error("singular pivot block at index {index} during {stage}")]
    SingularPivot { stage: Stage, index: usize },
    #[error("round {got} requested but the state is at round {at} of {total}")]
    RoundOutOfOrder { got: usize, at: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymBlockTriDiagSystem<const B: usize> {
    diag: Vec<SMatrix<f64, B, B>>,
    upper: Vec<SMatrix<f64, B, B>>,
}

impl<const B: usize> SymBlockTriDiagSystem<B> {
    pub fn new(
        diag: Vec<SMatrix<f64, B, B>>,
        upper: Vec<SMatrix<f64, B, B>>,
    ) -> Result<Self, OeeError> {
        if diag.is_empty() || upper.len() + 1 != diag.len() {
            return Err(OeeError::Dimension {
                diag: diag.len(),
                upper: upper.len(),
            });
        }
        for (index, d) in diag.iter().enumerate() {
            let asymmetry = (d - d.transpose()).amax();
            if asymmetry > DIAG_SYMMETRY_TOL * d.amax().max(f64::MIN_POSITIVE) {
                return Err(OeeError::AsymmetricDiagonal { index, asymmetry });
            }
        }
        Ok(Self { diag, upper })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[SMatrix<f64, B, B>] {
        &self.diag
    }

    pub fn upper(&self) -> &[SMatrix<f64, B, B>] {
        &self.upper
    }

    /// Dense `nB × nB` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n * B, n * B);
        for (i, d) in self.diag.iter().enumerate() {
            a.view_mut((i * B, i * B), (B, B)).copy_from(d);
        }
        for (i, u) in self.upper.iter().enumerate() {
            a.view_mut((i * B, (i + 1) * B), (B, B)).copy_from(u);
            a.view_mut(((i + 1) * B, i * B), (B, B))
                .copy_from(&u.transpose());
        }
        a
    }

    /// `A·x` for block vectors.
    pub fn mul_blocks<const M: usize>(&self, x: &[SMatrix<f64, B, M>]) -> Vec<SMatrix<f64, B, M>> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = self.diag[i] * x[i];
                if i + 1 < n {
                    y += self.upper[i] * x[i + 1];
                }
                if i > 0 {
                    y += self.upper[i - 1].transpose() * x[i - 1];
                }
                y
            })
            .collect()
    }
}

/// System and right-hand side after some number of elimination rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct OeeState<const B: usize, const M: usize> {
    diag: Vec<SMatrix<f64, B, B>>,
    /// `upper[i]` couples rows `i` and `i + distance`.
    upper: Vec<Option<SMatrix<f64, B, B>>>,
    rhs: Vec<SMatrix<f64, B, M>>,
    distance: usize,
    round: usize,
}

impl<const B: usize, const M: usize> OeeState<B, M> {
    pub fn initial(
        sys: &SymBlockTriDiagSystem<B>,
        rhs: &[SMatrix<f64, B, M>],
    ) -> Result<Self, OeeError> {
        if rhs.len() != sys.len() {
            return Err(OeeError::RhsLength {
                expected: sys.len(),
                got: rhs.len(),
            });
        }
        let n = sys.len();
        let upper = (0..n)
            .map(|i| (i + 1 < n).then(|| sys.upper[i]))
            .collect();
        Ok(Self {
            diag: sys.diag.clone(),
            upper,
            rhs: rhs.to_vec(),
            distance: 1,
            round: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Index distance of the couplings still present.
    pub fn distance(&self) -> usize {
        self.distance
    }

    pub fn diag(&self) -> &[SMatrix<f64, B, B>] {
        &self.diag
    }

    pub fn upper(&self) -> &[Option<SMatrix<f64, B, B>>] {
        &self.upper
    }

    pub fn rhs(&self) -> &[SMatrix<f64, B, M>] {
        &self.rhs
    }

    /// Dense symmetric matrix of the current state.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n * B, n * B);
        for (i, d) in self.diag.iter().enumerate() {
            a.view_mut((i * B, i * B), (B, B)).copy_from(d);
        }
        for (i, u) in self.upper.iter().enumerate() {
            if let Some(u) = u {
                let k = i + self.distance;
                a.view_mut((i * B, k * B), (B, B)).copy_from(u);
                a.view_mut((k * B, i * B), (B, B)).copy_from(&u.transpose());
            }
        }
        a
    }
}

/// Solve `D·Eᵀ = Uᵀ` for the elimination coefficient `Eᵀ`.
pub fn coefficient_solve<const B: usize, const C: usize>(
    d: &SMatrix<f64, B, B>,
    u_t: &SMatrix<f64, B, C>,
) -> Result<SMatrix<f64, B, C>, crate::symfact::Singular> {
    Ok(SymIndefinite::factor(d)?.solve(u_t))
}

fn first_singular<T>(
    results: Vec<Option<Result<T, crate::symfact::Singular>>>,
    stage: Stage,
) -> Result<Vec<Option<T>>, OeeError> {
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| match r {
            Some(Ok(f)) => Ok(Some(f)),
            Some(Err(_)) => Err(OeeError::SingularPivot { stage, index }),
            None => Ok(None),
        })
        .collect()
}

/// One elimination round. `j` must be the state's next round.
pub fn eliminate_round<const B: usize, const M: usize>(
    state: &OeeState<B, M>,
    j: usize,
) -> Result<OeeState<B, M>, OeeError> {
    let n = state.len();
    let total = ceil_log2(n);
    if j != state.round + 1 || j > total {
        return Err(OeeError::RoundOutOfOrder {
            got: j,
            at: state.round,
            total,
        });
    }
    let h = state.distance;
    let upper = &state.upper;

    // A block is a pivot when some row eliminates through it.
    let factors = first_singular(
        map_indices(n, |i| {
            let used = upper[i].is_some() || (i >= h && upper[i - h].is_some());
            used.then(|| SymIndefinite::factor(&state.diag[i]))
        }),
        Stage::Round(j),
    )?;

    let rows = map_indices(n, |i| {
        let mut d = state.diag[i];
        let mut r = state.rhs[i];
        let mut u_next = None;
        if let Some(u) = &upper[i] {
            let pivot = factors[i + h].as_ref().expect("pivot factored");
            let e = pivot.solve(&u.transpose()).transpose();
            d -= e * u.transpose();
            r -= e * state.rhs[i + h];
            if let Some(u_far) = &upper[i + h] {
                u_next = Some(-(e * u_far));
            }
        }
        if i >= h {
            if let Some(u_prev) = &upper[i - h] {
                let pivot = factors[i - h].as_ref().expect("pivot factored");
                let k = pivot.solve(u_prev).transpose();
                d -= k * u_prev;
                r -= k * state.rhs[i - h];
            }
        }
        (d, u_next, r)
    });

    let mut diag = Vec::with_capacity(n);
    let mut next_upper = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    for (d, u, r) in rows {
        diag.push(d);
        next_upper.push(u);
        rhs.push(r);
    }
    Ok(OeeState {
        diag,
        upper: next_upper,
        rhs,
        distance: 2 * h,
        round: j,
    })
}

/// Solve `A·X = R` by odd-even elimination.
pub fn oee_solve<const B: usize, const M: usize>(
    sys: &SymBlockTriDiagSystem<B>,
    rhs: &[SMatrix<f64, B, M>],
) -> Result<Vec<SMatrix<f64, B, M>>, OeeError> {
    oee_solve_observed(sys, rhs, |_| {})
}

/// [`oee_solve`], calling `observe` on the state after every round
/// (round 0 included).
pub fn oee_solve_observed<const B: usize, const M: usize, F>(
    sys: &SymBlockTriDiagSystem<B>,
    rhs: &[SMatrix<f64, B, M>],
    mut observe: F,
) -> Result<Vec<SMatrix<f64, B, M>>, OeeError>
where
    F: FnMut(&OeeState<B, M>),
{
    let mut state = OeeState::initial(sys, rhs)?;
    observe(&state);
    for j in 1..=ceil_log2(sys.len()) {
        state = eliminate_round(&state, j)?;
        observe(&state);
    }
    debug_assert!(state.upper.iter().all(Option::is_none));
    let n = state.len();
    let factors = first_singular(
        map_indices(n, |i| Some(SymIndefinite::factor(&state.diag[i]))),
        Stage::BackSolve,
    )?;
    Ok(map_indices(n, |i| {
        factors[i].as_ref().expect("factored").solve(&state.rhs[i])
    }))
}

/// Sequential block-Thomas solve using LU pivots; the reference for [`oee_solve`].
pub fn block_thomas_solve<const B: usize, const M: usize>(
    sys: &SymBlockTriDiagSystem<B>,
    rhs: &[SMatrix<f64, B, M>],
) -> Result<Vec<SMatrix<f64, B, M>>, OeeError> {
    let n = sys.len();
    if rhs.len() != n {
        return Err(OeeError::RhsLength {
            expected: n,
            got: rhs.len(),
        });
    }
    let singular = |index| OeeError::SingularPivot {
        stage: Stage::Thomas,
        index,
    };
    let mut d_mod = Vec::with_capacity(n);
    let mut r_mod = Vec::with_capacity(n);
    d_mod.push(dense_lu(&sys.diag[0]));
    r_mod.push(rhs[0]);
    for i in 1..n {
        let u = &sys.upper[i - 1];
        let l_t = lu_solve(&d_mod[i - 1], u).ok_or_else(|| singular(i - 1))?;
        let l = l_t.transpose();
        d_mod.push(dense_lu(&(sys.diag[i] - l * u)));
        let r = rhs[i] - l * r_mod[i - 1];
        r_mod.push(r);
    }
    let mut x = vec![SMatrix::<f64, B, M>::zeros(); n];
    for i in (0..n).rev() {
        let mut r = r_mod[i];
        if i + 1 < n {
            r -= sys.upper[i] * x[i + 1];
        }
        x[i] = lu_solve(&d_mod[i], &r).ok_or_else(|| singular(i))?;
    }
    Ok(x)
}

fn dense_lu<const B: usize>(d: &SMatrix<f64, B, B>) -> nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> {
    DMatrix::from_column_slice(B, B, d.as_slice()).lu()
}

fn lu_solve<const B: usize, const C: usize>(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rhs: &SMatrix<f64, B, C>,
) -> Option<SMatrix<f64, B, C>> {
    let x = lu.solve(&DMatrix::from_column_slice(B, C, rhs.as_slice()))?;
    Some(SMatrix::from_column_slice(x.as_slice()))
}
