//! Forward dynamics: `q̈` from `(q, q̇, τ)`.
//!
//! All three algorithms first subtract the bias torque (inverse dynamics at
//! `q̈ = 0`) and then solve the bias-free problem `M(q)·q̈ = τ^δ`.
//!
//! * JSIIA builds `M` column by column from inverse dynamics and factors it.
//! * ABIA runs the articulated-body inertia recursion, then two scans.
//! * CFA splits every joint wrench as `F_i = S_i·τ_i + W_i·f_i`, with `W_i` an
//!   orthonormal basis of the constraint directions, and solves
//!
//!   ```text
//!   A·f = −B·τ^δ          A = Wᵀ·K·W,  B = Wᵀ·K·S,  C = Sᵀ·K·S
//!   q̈   = C·τ^δ + Bᵀ·f
//!   ```
//!
//!   where `K` is the symmetric block tri-diagonal map from joint wrenches to
//!   relative joint accelerations:
//!
//!   ```text
//!   K_ii     = J_i⁻¹ + Γ_{i,i-1}·J_{i-1}⁻¹·Γ_{i,i-1}ᵀ     (no second term for link 0)
//!   K_i,i+1  = −J_i⁻¹·Γ_{i+1,i}ᵀ
//!   ```
//!
//!   `A` is solved by odd-even elimination, so CFA has no sequential phase.
//!   One refinement step follows by default; see [`CfaOptions`].

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Matrix6, SMatrix, SVector, Vector6};
use rayon::prelude::*;
use thiserror::Error;

use crate::inverse::{acceleration_pass, force_pass, gravity_base_acceleration, project_torques, rnea};
use crate::model::{assemble_kinematics, ChainKinematics, JointVector, RobotChain};
use crate::oee::{oee_solve_observed, OeeError, SymBlockTriDiagSystem};
use crate::parallel::{map_indices, DepthTrace, PhaseKind};
use crate::scan::{lower_sweep, upper_sweep};

/// Relative asymmetry above which a column-built `M` is reported.
pub const INERTIA_SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("{what} has length {got}, chain has {expected} links")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("joint-space inertia is not symmetric (relative asymmetry {0:.3e})")]
    AsymmetricInertia(f64),
    #[error("joint-space inertia is not positive definite")]
    NotPositiveDefinite,
    #[error("articulated inertia seen by joint {link} is not positive")]
    DegenerateArticulation { link: usize },
    #[error("spatial inertia of link {link} is not invertible")]
    SingularInertia { link: usize },
    #[error("constraint-force solve failed: {0}")]
    Oee(#[from] OeeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Jsiia,
    Abia,
    Cfa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Jsiia, Algorithm::Abia, Algorithm::Cfa];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Jsiia => "jsiia",
            Algorithm::Abia => "abia",
            Algorithm::Cfa => "cfa",
        }
    }
}

fn check_dims(chain: &RobotChain, q: &JointVector, qdot: &JointVector, tau: &JointVector) -> Result<(), DynamicsError> {
    for (what, v) in [("q", q), ("qdot", qdot), ("tau", tau)] {
        if v.len() != chain.n() {
            return Err(DynamicsError::Dimension {
                what,
                expected: chain.n(),
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// Kinematics, inertias and `τ^δ` shared by every algorithm.
struct Prepared {
    kin: ChainKinematics,
    inertias: Vec<Matrix6<f64>>,
    tau_delta: JointVector,
}

fn prepare(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
    trace: &mut DepthTrace,
) -> Result<Prepared, DynamicsError> {
    check_dims(chain, q, qdot, tau)?;
    let kin = assemble_kinematics(chain, q);
    trace.parallel("kinematics");
    let inertias = chain.inertias();
    let g = gravity_base_acceleration(chain.gravity()).to_vector();
    let zero = JointVector::zeros(chain.n());
    let (bias, _) = rnea(&kin, &inertias, qdot, &zero, &g, &Vector6::zeros(), trace);
    let tau_delta = tau - bias;
    trace.parallel("differential torque");
    Ok(Prepared {
        kin,
        inertias,
        tau_delta,
    })
}

// ---- JSIIA -------------------------------------------------------------------

/// Joint-space inertia built column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpaceInertia {
    /// `(M + Mᵀ)/2`.
    pub matrix: DMatrix<f64>,
    /// `max|M − Mᵀ| / max|M|` before symmetrization.
    pub asymmetry: f64,
}

fn inertia_columns(kin: &ChainKinematics, inertias: &[Matrix6<f64>], trace: &mut DepthTrace) -> JointSpaceInertia {
    let n = kin.n();
    let v = vec![Vector6::zeros(); n];
    let zero = JointVector::zeros(n);
    let mut column_trace = DepthTrace::new();
    let cols = map_indices(n, |c| {
        let mut t = DepthTrace::new();
        let mut e = JointVector::zeros(n);
        e[c] = 1.0;
        let a = acceleration_pass(kin, &v, &zero, &e, &Vector6::zeros(), &mut t);
        let f = force_pass(kin, inertias, &v, &a, &Vector6::zeros(), &mut t);
        (project_torques(kin, &f, &mut t), t)
    });
    let mut m = DMatrix::zeros(n, n);
    for (c, (col, t)) in cols.into_iter().enumerate() {
        m.set_column(c, &col);
        if c == 0 {
            column_trace = t;
        }
    }
    // Columns run concurrently, so one column's phases give the depth.
    trace.record("inertia columns", PhaseKind::Parallel);
    trace.phases.extend(column_trace.phases);

    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (&m - m.transpose()).amax() / scale;
    let matrix = (&m + m.transpose()) * 0.5;
    JointSpaceInertia { matrix, asymmetry }
}

/// `M(q)` with column `i` equal to inverse dynamics at `q̇ = 0`, `q̈ = e_i`,
/// gravity off.
pub fn jsi_by_columns(chain: &RobotChain, q: &JointVector) -> JointSpaceInertia {
    let kin = assemble_kinematics(chain, q);
    inertia_columns(&kin, &chain.inertias(), &mut DepthTrace::new())
}

fn jsiia_impl(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
    trace: &mut DepthTrace,
) -> Result<JointVector, DynamicsError> {
    let p = prepare(chain, q, qdot, tau, trace)?;
    let jsi = inertia_columns(&p.kin, &p.inertias, trace);
    if !(jsi.asymmetry <= INERTIA_SYMMETRY_TOL) {
        return Err(DynamicsError::AsymmetricInertia(jsi.asymmetry));
    }
    let chol = jsi.matrix.cholesky().ok_or(DynamicsError::NotPositiveDefinite)?;
    trace.record("cholesky", PhaseKind::Sequential { steps: chain.n() });
    Ok(chol.solve(&p.tau_delta))
}

pub fn jsiia_forward_dynamics(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
) -> Result<JointVector, DynamicsError> {
    jsiia_impl(chain, q, qdot, tau, &mut DepthTrace::new())
}

pub fn jsiia_forward_dynamics_traced(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
) -> Result<(JointVector, DepthTrace), DynamicsError> {
    let mut trace = DepthTrace::new();
    let qdd = jsiia_impl(chain, q, qdot, tau, &mut trace)?;
    Ok((qdd, trace))
}

// ---- ABIA --------------------------------------------------------------------

struct Articulated {
    inertia: Vec<Matrix6<f64>>,
    /// `Ĵ_i·S_i`
    js: Vec<Vector6<f64>>,
    /// `S_iᵀ·Ĵ_i·S_i`
    d: Vec<f64>,
}

fn joint_projection(ja: &Matrix6<f64>, s: &Vector6<f64>, link: usize) -> Result<(Vector6<f64>, f64), DynamicsError> {
    let js = ja * s;
    let d = s.dot(&js);
    if !(d > f64::EPSILON * ja.amax()) {
        return Err(DynamicsError::DegenerateArticulation { link });
    }
    Ok((js, d))
}

fn articulated_recursion(
    kin: &ChainKinematics,
    inertias: &[Matrix6<f64>],
    trace: &mut DepthTrace,
) -> Result<Articulated, DynamicsError> {
    let n = kin.n();
    let mut ja = vec![Matrix6::zeros(); n];
    ja[n - 1] = inertias[n - 1];
    for i in (0..n - 1).rev() {
        let (js, d) = joint_projection(&ja[i + 1], &kin.screws[i + 1], i + 1)?;
        let p = ja[i + 1] - js * js.transpose() / d;
        let g = &kin.adjoints[i + 1].0;
        let x = inertias[i] + g.transpose() * p * g;
        ja[i] = (x + x.transpose()) * 0.5;
    }
    trace.record("articulated inertia recursion", PhaseKind::Sequential { steps: n - 1 });
    let proj = map_indices(n, |i| joint_projection(&ja[i], &kin.screws[i], i));
    trace.parallel("joint projections");
    let mut js = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for r in proj {
        let (a, b) = r?;
        js.push(a);
        d.push(b);
    }
    Ok(Articulated { inertia: ja, js, d })
}

/// Articulated-body inertias `Ĵ_i`, one per link, in link coordinates.
pub fn articulated_body_inertias(chain: &RobotChain, q: &JointVector) -> Result<Vec<Matrix6<f64>>, DynamicsError> {
    let kin = assemble_kinematics(chain, q);
    Ok(articulated_recursion(&kin, &chain.inertias(), &mut DepthTrace::new())?.inertia)
}

fn abia_sweeps(kin: &ChainKinematics, art: &Articulated, tau: &JointVector, trace: &mut DepthTrace) -> JointVector {
    let n = kin.n();
    let s = &kin.screws;
    let id = Matrix6::identity();

    // Articulated bias wrenches, tip to base.
    let coupling = map_indices(n - 1, |i| {
        kin.adjoints[i + 1].0.transpose() * (id - art.js[i + 1] * s[i + 1].transpose() / art.d[i + 1])
    });
    let rhs = map_indices(n, |i| {
        if i + 1 < n {
            kin.adjoints[i + 1].0.transpose() * art.js[i + 1] * (tau[i + 1] / art.d[i + 1])
        } else {
            Vector6::zeros()
        }
    });
    trace.parallel("bias sources");
    let bias = upper_sweep(&coupling, &rhs);
    trace.record("articulated bias scan", PhaseKind::Tree { rounds: bias.rounds });
    let u = map_indices(n, |i| tau[i] - s[i].dot(&bias.x[i]));
    trace.parallel("joint inputs");

    // Link accelerations, base to tip.
    let coupling = map_indices(n - 1, |k| {
        let i = k + 1;
        (id - s[i] * art.js[i].transpose() / art.d[i]) * kin.adjoints[i].0
    });
    let rhs = map_indices(n, |i| s[i] * (u[i] / art.d[i]));
    trace.parallel("acceleration sources");
    let acc = lower_sweep(&coupling, &rhs);
    trace.record("articulated acceleration scan", PhaseKind::Tree { rounds: acc.rounds });
    let qdd = map_indices(n, |i| {
        let inherited = if i == 0 {
            0.0
        } else {
            art.js[i].dot(&(kin.adjoints[i].0 * acc.x[i - 1]))
        };
        (u[i] - inherited) / art.d[i]
    });
    trace.parallel("joint accelerations");
    JointVector::from_vec(qdd)
}

fn abia_impl(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
    trace: &mut DepthTrace,
) -> Result<JointVector, DynamicsError> {
    let p = prepare(chain, q, qdot, tau, trace)?;
    let art = articulated_recursion(&p.kin, &p.inertias, trace)?;
    Ok(abia_sweeps(&p.kin, &art, &p.tau_delta, trace))
}

pub fn abia_forward_dynamics(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
) -> Result<JointVector, DynamicsError> {
    abia_impl(chain, q, qdot, tau, &mut DepthTrace::new())
}

pub fn abia_forward_dynamics_traced(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
) -> Result<(JointVector, DepthTrace), DynamicsError> {
    let mut trace = DepthTrace::new();
    let qdd = abia_impl(chain, q, qdot, tau, &mut trace)?;
    Ok((qdd, trace))
}

/// Wall time of the two ABIA stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AbiaTiming {
    /// Bias pass plus the sequential inertia recursion.
    pub recursion: Duration,
    /// Both scans and the per-link maps around them.
    pub sweeps: Duration,
}

/// ABIA with the sequential and scan stages timed separately.
pub fn abia_forward_dynamics_split(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
) -> Result<(JointVector, AbiaTiming), DynamicsError> {
    let mut trace = DepthTrace::new();
    let start = Instant::now();
    let p = prepare(chain, q, qdot, tau, &mut trace)?;
    let art = articulated_recursion(&p.kin, &p.inertias, &mut trace)?;
    let mid = Instant::now();
    let qdd = abia_sweeps(&p.kin, &art, &p.tau_delta, &mut trace);
    let end = Instant::now();
    Ok((
        qdd,
        AbiaTiming {
            recursion: mid - start,
            sweeps: end - mid,
        },
    ))
}

// ---- CFA ---------------------------------------------------------------------

/// Orthonormal basis of the 5 directions orthogonal to a unit screw, taken from
/// the Householder reflector that maps `s` onto `±e_0`.
pub fn constraint_basis(s: &Vector6<f64>) -> SMatrix<f64, 6, 5> {
    let sign = if s[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut u = *s;
    u[0] += sign * s.norm();
    let h = Matrix6::identity() - u * u.transpose() * (2.0 / u.norm_squared());
    h.fixed_columns::<5>(1).into_owned()
}

/// `W_i` for every joint of the chain.
pub fn build_constraint_basis(chain: &RobotChain) -> Vec<SMatrix<f64, 6, 5>> {
    let screws = chain.screws();
    map_indices(screws.len(), |i| constraint_basis(&screws[i]))
}

/// Blocks of `A`, `B` and `C`. `B` has three 5×1 blocks per row
/// (`B_{i,i-1}`, `B_{i,i}`, `B_{i,i+1}`); `C` is scalar tri-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CfaOperators {
    pub a: SymBlockTriDiagSystem<5>,
    /// `b_prev[i] = B_{i,i-1}`; entry 0 is zero.
    pub b_prev: Vec<SVector<f64, 5>>,
    pub b_diag: Vec<SVector<f64, 5>>,
    /// `b_next[i] = B_{i,i+1}`; the last entry is zero.
    pub b_next: Vec<SVector<f64, 5>>,
    pub c_diag: Vec<f64>,
    /// `c_next[i] = C_{i,i+1}`; the last entry is zero.
    pub c_next: Vec<f64>,
}

impl CfaOperators {
    pub fn n(&self) -> usize {
        self.c_diag.len()
    }

    /// `B·τ`, one 5-vector per link.
    pub fn apply_b(&self, tau: &JointVector) -> Vec<SVector<f64, 5>> {
        let n = self.n();
        map_indices(n, |i| {
            let mut r = self.b_diag[i] * tau[i];
            if i > 0 {
                r += self.b_prev[i] * tau[i - 1];
            }
            if i + 1 < n {
                r += self.b_next[i] * tau[i + 1];
            }
            r
        })
    }

    /// `C·τ + Bᵀ·f`.
    pub fn joint_accelerations(&self, tau: &JointVector, f: &[SVector<f64, 5>]) -> JointVector {
        let n = self.n();
        JointVector::from_vec(map_indices(n, |k| {
            let mut x = self.c_diag[k] * tau[k] + self.b_diag[k].dot(&f[k]);
            if k > 0 {
                x += self.c_next[k - 1] * tau[k - 1] + self.b_next[k - 1].dot(&f[k - 1]);
            }
            if k + 1 < n {
                x += self.c_next[k] * tau[k + 1] + self.b_prev[k + 1].dot(&f[k + 1]);
            }
            x
        }))
    }

    /// Dense `5n × n` matrix `B`.
    pub fn b_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut b = DMatrix::zeros(5 * n, n);
        for i in 0..n {
            b.view_mut((5 * i, i), (5, 1)).copy_from(&self.b_diag[i]);
            if i > 0 {
                b.view_mut((5 * i, i - 1), (5, 1)).copy_from(&self.b_prev[i]);
            }
            if i + 1 < n {
                b.view_mut((5 * i, i + 1), (5, 1)).copy_from(&self.b_next[i]);
            }
        }
        b
    }

    /// Dense `n × n` matrix `C`.
    pub fn c_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            c[(i, i)] = self.c_diag[i];
            if i + 1 < n {
                c[(i, i + 1)] = self.c_next[i];
                c[(i + 1, i)] = self.c_next[i];
            }
        }
        c
    }
}

fn symmetrize(m: Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

fn cfa_operators_impl(
    kin: &ChainKinematics,
    inertias: &[Matrix6<f64>],
    basis: &[SMatrix<f64, 6, 5>],
    trace: &mut DepthTrace,
) -> Result<CfaOperators, DynamicsError> {
    let n = kin.n();
    let inv = map_indices(n, |i| inertias[i].cholesky().map(|c| symmetrize(c.inverse())));
    let inv: Vec<Matrix6<f64>> = inv
        .into_iter()
        .enumerate()
        .map(|(link, m)| m.ok_or(DynamicsError::SingularInertia { link }))
        .collect::<Result<_, _>>()?;
    trace.parallel("inverse inertias");

    let k_diag = map_indices(n, |i| {
        let mut k = inv[i];
        if i > 0 {
            let g = &kin.adjoints[i].0;
            k += g * inv[i - 1] * g.transpose();
        }
        symmetrize(k)
    });
    let k_next = map_indices(n.saturating_sub(1), |i| -(inv[i] * kin.adjoints[i + 1].0.transpose()));
    trace.parallel("core blocks");

    let s = &kin.screws;
    let w = basis;
    let rows = map_indices(n, |i| {
        let wt = w[i].transpose();
        let a_diag = wt * k_diag[i] * w[i];
        let a_next = (i + 1 < n).then(|| wt * k_next[i] * w[i + 1]);
        let b_prev = if i > 0 {
            wt * (k_next[i - 1].transpose() * s[i - 1])
        } else {
            SVector::zeros()
        };
        let b_diag = wt * (k_diag[i] * s[i]);
        let (b_next, c_next) = if i + 1 < n {
            let ks = k_next[i] * s[i + 1];
            (wt * ks, s[i].dot(&ks))
        } else {
            (SVector::zeros(), 0.0)
        };
        let c_diag = s[i].dot(&(k_diag[i] * s[i]));
        ((a_diag + a_diag.transpose()) * 0.5, a_next, b_prev, b_diag, b_next, c_diag, c_next)
    });
    trace.parallel("constraint projections");

    let mut a_diag = Vec::with_capacity(n);
    let mut a_upper = Vec::with_capacity(n);
    let mut ops = CfaOperators {
        a: SymBlockTriDiagSystem::new(vec![SMatrix::zeros()], vec![])?,
        b_prev: Vec::with_capacity(n),
        b_diag: Vec::with_capacity(n),
        b_next: Vec::with_capacity(n),
        c_diag: Vec::with_capacity(n),
        c_next: Vec::with_capacity(n),
    };
    for (ad, an, bp, bd, bn, cd, cn) in rows {
        a_diag.push(ad);
        if let Some(an) = an {
            a_upper.push(an);
        }
        ops.b_prev.push(bp);
        ops.b_diag.push(bd);
        ops.b_next.push(bn);
        ops.c_diag.push(cd);
        ops.c_next.push(cn);
    }
    ops.a = SymBlockTriDiagSystem::new(a_diag, a_upper)?;
    Ok(ops)
}

/// Assemble `A`, `B`, `C` for the configuration held in `kin`.
pub fn build_cfa_operators(
    chain: &RobotChain,
    kin: &ChainKinematics,
    basis: &[SMatrix<f64, 6, 5>],
) -> Result<CfaOperators, DynamicsError> {
    cfa_operators_impl(kin, &chain.inertias(), basis, &mut DepthTrace::new())
}

/// Options for [`cfa_forward_dynamics_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CfaOptions {
    /// Iterative-refinement steps after the first solve.
    ///
    /// The closing product `C·τ^δ + Bᵀ·f` cancels heavily when gravity makes
    /// `τ^δ` large next to `M·q̈`, costing up to `‖C‖·‖M‖` in relative accuracy.
    /// Each step recomputes the residual `τ^δ − M·q̈` with gravity-free inverse
    /// dynamics and solves for a correction with the same operators, so the
    /// depth stays logarithmic.
    pub refinement_steps: usize,
}

impl Default for CfaOptions {
    fn default() -> Self {
        Self { refinement_steps: 1 }
    }
}

fn cfa_solve(
    ops: &CfaOperators,
    tau_delta: &JointVector,
    trace: &mut DepthTrace,
) -> Result<JointVector, DynamicsError> {
    let r: Vec<SVector<f64, 5>> = ops.apply_b(tau_delta).into_iter().map(|b| -b).collect();
    trace.parallel("constraint right-hand side");
    let mut rounds = 0;
    let f = oee_solve_observed(&ops.a, &r, |s| rounds = s.round())?;
    trace.record("odd-even elimination", PhaseKind::Tree { rounds });
    trace.parallel("block solves");
    let qdd = ops.joint_accelerations(tau_delta, &f);
    trace.parallel("joint accelerations");
    Ok(qdd)
}

/// `M·q̈` by inverse dynamics with no velocity and no gravity.
fn inertia_product(kin: &ChainKinematics, inertias: &[Matrix6<f64>], qdd: &JointVector, trace: &mut DepthTrace) -> JointVector {
    let n = kin.n();
    let v = vec![Vector6::zeros(); n];
    let a = acceleration_pass(kin, &v, &JointVector::zeros(n), qdd, &Vector6::zeros(), trace);
    let f = force_pass(kin, inertias, &v, &a, &Vector6::zeros(), trace);
    project_torques(kin, &f, trace)
}

fn cfa_impl(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
    options: &CfaOptions,
    trace: &mut DepthTrace,
) -> Result<JointVector, DynamicsError> {
    let p = prepare(chain, q, qdot, tau, trace)?;
    let basis = map_indices(chain.n(), |i| constraint_basis(&p.kin.screws[i]));
    trace.parallel("constraint basis");
    let ops = cfa_operators_impl(&p.kin, &p.inertias, &basis, trace)?;
    let mut qdd = cfa_solve(&ops, &p.tau_delta, trace)?;
    for _ in 0..options.refinement_steps {
        let residual = &p.tau_delta - inertia_product(&p.kin, &p.inertias, &qdd, trace);
        trace.parallel("residual");
        qdd += cfa_solve(&ops, &residual, trace)?;
        trace.parallel("correction");
    }
    Ok(qdd)
}

pub fn cfa_forward_dynamics(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
) -> Result<JointVector, DynamicsError> {
    cfa_impl(chain, q, qdot, tau, &CfaOptions::default(), &mut DepthTrace::new())
}

pub fn cfa_forward_dynamics_with(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
    options: &CfaOptions,
) -> Result<JointVector, DynamicsError> {
    cfa_impl(chain, q, qdot, tau, options, &mut DepthTrace::new())
}

pub fn cfa_forward_dynamics_traced(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
) -> Result<(JointVector, DepthTrace), DynamicsError> {
    let mut trace = DepthTrace::new();
    let qdd = cfa_impl(chain, q, qdot, tau, &CfaOptions::default(), &mut trace)?;
    Ok((qdd, trace))
}

// ---- dispatch ----------------------------------------------------------------

pub fn forward_dynamics(
    algorithm: Algorithm,
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointVector,
) -> Result<JointVector, DynamicsError> {
    match algorithm {
        Algorithm::Jsiia => jsiia_forward_dynamics(chain, q, qdot, tau),
        Algorithm::Abia => abia_forward_dynamics(chain, q, qdot, tau),
        Algorithm::Cfa => cfa_forward_dynamics(chain, q, qdot, tau),
    }
}

/// One independent forward-dynamics problem.
#[derive(Debug, Clone)]
pub struct FdProblem<'a> {
    pub chain: &'a RobotChain,
    pub q: JointVector,
    pub qdot: JointVector,
    pub tau: JointVector,
}

/// Solve independent problems concurrently. Results keep input order; one
/// failing problem does not affect the others.
pub fn batch_forward_dynamics(
    problems: &[FdProblem<'_>],
    algorithm: Algorithm,
) -> Vec<Result<JointVector, DynamicsError>> {
    problems
        .par_iter()
        .map(|p| forward_dynamics(algorithm, p.chain, &p.q, &p.qdot, &p.tau))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inverse::inverse_dynamics;
    use crate::model::random_chain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joint(n: usize, rng: &mut ChaCha8Rng) -> JointVector {
        JointVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel(a: &JointVector, b: &JointVector) -> f64 {
        (a - b).amax() / a.amax().max(b.amax()).max(1e-300)
    }

    #[test]
    fn algorithms_agree_on_random_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n in [1, 2, 3, 5, 10, 17, 40] {
            let chain = random_chain(n, 300 + n as u64);
            for _ in 0..5 {
                let (q, qd, tau) = (random_joint(n, &mut rng), random_joint(n, &mut rng), random_joint(n, &mut rng));
                let j = jsiia_forward_dynamics(&chain, &q, &qd, &tau).unwrap();
                let a = abia_forward_dynamics(&chain, &q, &qd, &tau).unwrap();
                let c = cfa_forward_dynamics(&chain, &q, &qd, &tau).unwrap();
                assert!(rel(&j, &a) <= 1e-8, "n={n} jsiia/abia {}", rel(&j, &a));
                assert!(rel(&j, &c) <= 1e-8, "n={n} jsiia/cfa {}", rel(&j, &c));
            }
        }
    }

    #[test]
    fn forward_inverts_inverse_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let chain = random_chain(12, 33);
        for _ in 0..5 {
            let (q, qd, qdd) = (random_joint(12, &mut rng), random_joint(12, &mut rng), random_joint(12, &mut rng));
            let tau = inverse_dynamics(&chain, &q, &qd, &qdd);
            for algo in Algorithm::ALL {
                let back = forward_dynamics(algo, &chain, &q, &qd, &tau).unwrap();
                assert!(rel(&back, &qdd) <= 1e-8, "{algo:?}");
            }
        }
    }

    #[test]
    fn column_inertia_is_symmetric_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let chain = random_chain(25, 35);
        let jsi = jsi_by_columns(&chain, &random_joint(25, &mut rng));
        assert!(jsi.asymmetry <= 1e-10, "{}", jsi.asymmetry);
        assert!(jsi.matrix.clone().cholesky().is_some());
    }

    #[test]
    fn articulated_inertias_are_symmetric_and_end_at_tip_inertia() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let chain = random_chain(9, 37);
        let ja = articulated_body_inertias(&chain, &random_joint(9, &mut rng)).unwrap();
        assert_eq!(ja[8], chain.inertias()[8]);
        for m in &ja {
            assert!((m - m.transpose()).amax() <= 1e-10 * m.amax());
            assert!(m.cholesky().is_some());
        }
    }

    #[test]
    fn constraint_basis_is_orthonormal_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let mut screws: Vec<Vector6<f64>> = random_chain(20, 39).screws();
        screws.push(Vector6::new(-1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        screws.push(Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0));
        screws.push(Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize());
        for s in screws {
            let w = constraint_basis(&s);
            assert!((w.transpose() * w - SMatrix::<f64, 5, 5>::identity()).amax() < 1e-14);
            assert!((w.transpose() * s).amax() < 1e-14);
        }
    }

    fn dense_core(kin: &ChainKinematics, inertias: &[Matrix6<f64>]) -> DMatrix<f64> {
        // K = (I − Γ)⁻ᵀ-free form: assemble from the definition.
        let n = kin.n();
        let inv: Vec<_> = inertias.iter().map(|j| j.try_inverse().unwrap()).collect();
        let mut k = DMatrix::zeros(6 * n, 6 * n);
        for i in 0..n {
            let mut d = inv[i];
            if i > 0 {
                d += kin.adjoints[i].0 * inv[i - 1] * kin.adjoints[i].0.transpose();
                let off = -(inv[i - 1] * kin.adjoints[i].0.transpose());
                k.view_mut((6 * (i - 1), 6 * i), (6, 6)).copy_from(&off);
                k.view_mut((6 * i, 6 * (i - 1)), (6, 6)).copy_from(&off.transpose());
            }
            k.view_mut((6 * i, 6 * i), (6, 6)).copy_from(&d);
        }
        k
    }

    #[test]
    fn operators_match_dense_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let n = 7;
        let chain = random_chain(n, 41);
        let kin = assemble_kinematics(&chain, &random_joint(n, &mut rng));
        let basis = build_constraint_basis(&chain);
        let ops = build_cfa_operators(&chain, &kin, &basis).unwrap();
        let k = dense_core(&kin, &chain.inertias());
        let mut w = DMatrix::zeros(6 * n, 5 * n);
        let mut s = DMatrix::zeros(6 * n, n);
        for i in 0..n {
            w.view_mut((6 * i, 5 * i), (6, 5)).copy_from(&basis[i]);
            s.view_mut((6 * i, i), (6, 1)).copy_from(&kin.screws[i]);
        }
        let a = w.transpose() * &k * &w;
        let b = w.transpose() * &k * &s;
        let c = s.transpose() * &k * &s;
        let scale = k.amax();
        assert!((ops.a.to_dense() - a).amax() <= 1e-12 * scale);
        assert!((ops.b_dense() - b).amax() <= 1e-12 * scale);
        assert!((ops.c_dense() - c).amax() <= 1e-12 * scale);
    }

    #[test]
    fn schur_complement_is_inverse_of_mass_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in [1, 2, 6, 16] {
            let chain = random_chain(n, 43 + n as u64);
            let q = random_joint(n, &mut rng);
            let kin = assemble_kinematics(&chain, &q);
            let ops = build_cfa_operators(&chain, &kin, &build_constraint_basis(&chain)).unwrap();
            let a = ops.a.to_dense();
            let b = ops.b_dense();
            let schur = ops.c_dense() - b.transpose() * a.lu().solve(&b).unwrap();
            let m = jsi_by_columns(&chain, &q).matrix;
            let err = (schur * m - DMatrix::<f64>::identity(n, n)).amax();
            assert!(err <= 1e-7, "n={n}: {err}");
        }
    }

    #[test]
    fn refinement_recovers_cancelled_digits() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let n = 60;
        let chain = random_chain(n, 50);
        let (q, qd, tau) = (random_joint(n, &mut rng), random_joint(n, &mut rng), random_joint(n, &mut rng));
        let reference = abia_forward_dynamics(&chain, &q, &qd, &tau).unwrap();
        let plain = cfa_forward_dynamics_with(&chain, &q, &qd, &tau, &CfaOptions { refinement_steps: 0 }).unwrap();
        let refined = cfa_forward_dynamics(&chain, &q, &qd, &tau).unwrap();
        assert!(rel(&refined, &reference) <= 1e-10);
        assert!(rel(&refined, &reference) < rel(&plain, &reference));
    }

    #[test]
    fn dimension_errors_are_reported() {
        let chain = random_chain(3, 44);
        let ok = JointVector::zeros(3);
        let bad = JointVector::zeros(2);
        for algo in Algorithm::ALL {
            let err = forward_dynamics(algo, &chain, &ok, &bad, &ok).unwrap_err();
            assert_eq!(
                err,
                DynamicsError::Dimension {
                    what: "qdot",
                    expected: 3,
                    got: 2
                }
            );
        }
    }

    #[test]
    fn batch_isolates_failures_and_keeps_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let chains: Vec<_> = (0..6).map(|k| random_chain(4 + k, 46 + k as u64)).collect();
        let mut problems: Vec<_> = chains
            .iter()
            .map(|c| FdProblem {
                chain: c,
                q: random_joint(c.n(), &mut rng),
                qdot: random_joint(c.n(), &mut rng),
                tau: random_joint(c.n(), &mut rng),
            })
            .collect();
        problems[2].tau = JointVector::zeros(1);
        for algo in Algorithm::ALL {
            let out = batch_forward_dynamics(&problems, algo);
            assert_eq!(out.len(), 6);
            for (k, (p, r)) in problems.iter().zip(&out).enumerate() {
                if k == 2 {
                    assert!(matches!(r, Err(DynamicsError::Dimension { what: "tau", .. })));
                } else {
                    let solo = forward_dynamics(algo, p.chain, &p.q, &p.qdot, &p.tau).unwrap();
                    assert_eq!(r.as_ref().unwrap(), &solo);
                }
            }
        }
        assert!(batch_forward_dynamics(&[], Algorithm::Cfa).is_empty());
    }

    #[test]
    fn traces_expose_sequential_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let chain = random_chain(20, 48);
        let (q, qd, tau) = (random_joint(20, &mut rng), random_joint(20, &mut rng), random_joint(20, &mut rng));
        let (_, cfa) = cfa_forward_dynamics_traced(&chain, &q, &qd, &tau).unwrap();
        assert_eq!(cfa.sequential_phases().count(), 0);
        let (_, abia) = abia_forward_dynamics_traced(&chain, &q, &qd, &tau).unwrap();
        assert_eq!(abia.sequential_phases().count(), 1);
        let (_, split) = abia_forward_dynamics_split(&chain, &q, &qd, &tau).unwrap();
        assert!(split.recursion > Duration::ZERO);
    }
}
