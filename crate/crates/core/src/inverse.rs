//! Scan-based inverse dynamics.
//!
//! The three propagations are unit-diagonal block bi-diagonal systems:
//!
//! ```text
//! (I − Γ)·V   = S·q̇ + c_V                       forward, scan
//! (I − Γ)·V̇   = S·q̈ + ad(V)·(S·q̇) + c_A         forward, scan
//! (I − Γ)ᵀ·F  = J·V̇ − ad(V)ᵀ·J·V + c_F          backward, scan
//! τ           = Sᵀ·F
//! ```
//!
//! Sign convention: with `ad(V) = [[ω̂, 0], [v̂, ω̂]]` a single body obeys
//! `F = J·V̇ − ad(V)ᵀ·J·V`, and the Coriolis source is `ad(V_i)·S_i·q̇_i`
//! `= −ad(S_i·q̇_i)·Γ_{i,i-1}·V_{i-1}`. Both signs are pinned by the analytic
//! pendulum and two-link oracles in the test suites.
//!
//! The constant terms carry the base twist and acceleration into link 0 and the
//! tip wrench into the last link. Gravity enters as a fictitious upward base
//! acceleration `(0, −g)`.

use nalgebra::{Matrix6, Vector3, Vector6};

use crate::model::{assemble_kinematics, ChainKinematics, JointVector, RobotChain};
use crate::parallel::{map_indices, DepthTrace, PhaseKind};
use crate::scan::{lower_sweep, upper_sweep};
use crate::spatial::{small_adjoint_apply, small_adjoint_dual, SpatialInertia, Twist, Wrench};

/// Per-link motion and force states.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStates {
    pub velocities: Vec<Twist>,
    pub accelerations: Vec<Twist>,
    pub forces: Vec<Wrench>,
}

/// Base acceleration that reproduces gravity `g` (expressed in the base frame).
pub fn gravity_base_acceleration(gravity: &Vector3<f64>) -> Twist {
    Twist::new(Vector3::zeros(), -gravity)
}

pub(crate) fn velocity_pass(
    kin: &ChainKinematics,
    qdot: &JointVector,
    base_velocity: &Vector6<f64>,
    trace: &mut DepthTrace,
) -> Vec<Vector6<f64>> {
    let base = kin.adjoints[0].0 * base_velocity;
    let rhs = map_indices(kin.n(), |i| {
        let s = kin.screws[i] * qdot[i];
        if i == 0 {
            s + base
        } else {
            s
        }
    });
    trace.parallel("velocity sources");
    let sol = lower_sweep(&kin.gamma_matrices(), &rhs);
    trace.record("velocity scan", PhaseKind::Tree { rounds: sol.rounds });
    sol.x
}

pub(crate) fn acceleration_pass(
    kin: &ChainKinematics,
    velocities: &[Vector6<f64>],
    qdot: &JointVector,
    qddot: &JointVector,
    base_acceleration: &Vector6<f64>,
    trace: &mut DepthTrace,
) -> Vec<Vector6<f64>> {
    let base = kin.adjoints[0].0 * base_acceleration;
    let rhs = map_indices(kin.n(), |i| {
        let s = &kin.screws[i];
        let mut c = s * qddot[i] + small_adjoint_apply(&velocities[i], &(s * qdot[i]));
        if i == 0 {
            c += base;
        }
        c
    });
    trace.parallel("acceleration sources");
    let sol = lower_sweep(&kin.gamma_matrices(), &rhs);
    trace.record("acceleration scan", PhaseKind::Tree { rounds: sol.rounds });
    sol.x
}

pub(crate) fn force_pass(
    kin: &ChainKinematics,
    inertias: &[Matrix6<f64>],
    velocities: &[Vector6<f64>],
    accelerations: &[Vector6<f64>],
    tip: &Vector6<f64>,
    trace: &mut DepthTrace,
) -> Vec<Vector6<f64>> {
    let n = kin.n();
    let rhs = map_indices(n, |i| {
        let j = &inertias[i];
        let v = &velocities[i];
        let mut c = j * accelerations[i] - small_adjoint_dual(v, &(j * v));
        if i + 1 == n {
            c += tip;
        }
        c
    });
    let coupling = map_indices(n - 1, |i| kin.adjoints[i + 1].0.transpose());
    trace.parallel("force sources");
    let sol = upper_sweep(&coupling, &rhs);
    trace.record("force scan", PhaseKind::Tree { rounds: sol.rounds });
    sol.x
}

pub(crate) fn project_torques(
    kin: &ChainKinematics,
    forces: &[Vector6<f64>],
    trace: &mut DepthTrace,
) -> JointVector {
    trace.parallel("torque projection");
    JointVector::from_vec(map_indices(kin.n(), |i| kin.screws[i].dot(&forces[i])))
}

/// Full pass on prepared kinematics; returns `τ` and the raw link states.
pub(crate) fn rnea(
    kin: &ChainKinematics,
    inertias: &[Matrix6<f64>],
    qdot: &JointVector,
    qddot: &JointVector,
    base_acceleration: &Vector6<f64>,
    tip: &Vector6<f64>,
    trace: &mut DepthTrace,
) -> (JointVector, [Vec<Vector6<f64>>; 3]) {
    let v = velocity_pass(kin, qdot, &Vector6::zeros(), trace);
    let a = acceleration_pass(kin, &v, qdot, qddot, base_acceleration, trace);
    let f = force_pass(kin, inertias, &v, &a, tip, trace);
    let tau = project_torques(kin, &f, trace);
    (tau, [v, a, f])
}

pub fn propagate_velocities(kin: &ChainKinematics, qdot: &JointVector, base_velocity: &Twist) -> Vec<Twist> {
    velocity_pass(kin, qdot, &base_velocity.to_vector(), &mut DepthTrace::new())
        .iter()
        .map(Twist::from_vector)
        .collect()
}

pub fn propagate_accelerations(
    kin: &ChainKinematics,
    velocities: &[Twist],
    qdot: &JointVector,
    qddot: &JointVector,
    base_acceleration: &Twist,
) -> Vec<Twist> {
    let v: Vec<_> = velocities.iter().map(Twist::to_vector).collect();
    acceleration_pass(kin, &v, qdot, qddot, &base_acceleration.to_vector(), &mut DepthTrace::new())
        .iter()
        .map(Twist::from_vector)
        .collect()
}

/// Backward force sweep. `tip_wrench` is the wrench the last link exerts on
/// its environment, in the last link's frame.
pub fn propagate_forces(
    kin: &ChainKinematics,
    velocities: &[Twist],
    accelerations: &[Twist],
    inertias: &[SpatialInertia],
    tip_wrench: &Wrench,
) -> Vec<Wrench> {
    let v: Vec<_> = velocities.iter().map(Twist::to_vector).collect();
    let a: Vec<_> = accelerations.iter().map(Twist::to_vector).collect();
    let j: Vec<_> = inertias.iter().map(|j| *j.matrix()).collect();
    force_pass(kin, &j, &v, &a, &tip_wrench.to_vector(), &mut DepthTrace::new())
        .iter()
        .map(Wrench::from_vector)
        .collect()
}

fn check_len(chain: &RobotChain, vs: &[&JointVector]) {
    for v in vs {
        assert_eq!(v.len(), chain.n(), "joint vector length must equal link count");
    }
}

/// Joint torques for motion `(q, q̇, q̈)` under the chain's gravity.
pub fn inverse_dynamics(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    qddot: &JointVector,
) -> JointVector {
    inverse_dynamics_states(chain, q, qdot, qddot, &Wrench::zero()).0
}

/// Torques plus link states, with an end-effector wrench.
pub fn inverse_dynamics_states(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    qddot: &JointVector,
    tip_wrench: &Wrench,
) -> (JointVector, LinkStates) {
    check_len(chain, &[q, qdot, qddot]);
    let kin = assemble_kinematics(chain, q);
    let inertias = chain.inertias();
    let g = gravity_base_acceleration(chain.gravity()).to_vector();
    let (tau, [v, a, f]) = rnea(
        &kin,
        &inertias,
        qdot,
        qddot,
        &g,
        &tip_wrench.to_vector(),
        &mut DepthTrace::new(),
    );
    let states = LinkStates {
        velocities: v.iter().map(Twist::from_vector).collect(),
        accelerations: a.iter().map(Twist::from_vector).collect(),
        forces: f.iter().map(Wrench::from_vector).collect(),
    };
    (tau, states)
}

/// [`inverse_dynamics`] plus the phase record of the run.
pub fn inverse_dynamics_traced(
    chain: &RobotChain,
    q: &JointVector,
    qdot: &JointVector,
    qddot: &JointVector,
) -> (JointVector, DepthTrace) {
    check_len(chain, &[q, qdot, qddot]);
    let mut trace = DepthTrace::new();
    let kin = assemble_kinematics(chain, q);
    trace.parallel("kinematics");
    let g = gravity_base_acceleration(chain.gravity()).to_vector();
    let (tau, _) = rnea(&kin, &chain.inertias(), qdot, qddot, &g, &Vector6::zeros(), &mut trace);
    (tau, trace)
}

/// Coriolis, centrifugal and gravity torques: inverse dynamics at `q̈ = 0`.
pub fn bias_torque(chain: &RobotChain, q: &JointVector, qdot: &JointVector) -> JointVector {
    inverse_dynamics(chain, q, qdot, &JointVector::zeros(chain.n()))
}

/// `τ^δ = τ − τ^bias`.
pub fn differential_torque(tau: &JointVector, bias: &JointVector) -> JointVector {
    tau - bias
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_chain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joint(n: usize, rng: &mut ChaCha8Rng) -> JointVector {
        JointVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    // Link-by-link recursion, the sequential oracle.
    fn sequential(
        kin: &ChainKinematics,
        j: &[Matrix6<f64>],
        qd: &JointVector,
        qdd: &JointVector,
        g: &Vector6<f64>,
    ) -> (Vec<Vector6<f64>>, Vec<Vector6<f64>>, Vec<Vector6<f64>>) {
        let n = kin.n();
        let mut v = vec![Vector6::zeros(); n];
        let mut a = vec![Vector6::zeros(); n];
        for i in 0..n {
            let (vp, ap) = if i == 0 { (Vector6::zeros(), *g) } else { (v[i - 1], a[i - 1]) };
            let ad = kin.adjoints[i].0;
            let s = kin.screws[i];
            v[i] = ad * vp + s * qd[i];
            a[i] = ad * ap + small_adjoint_apply(&v[i], &(s * qd[i])) + s * qdd[i];
        }
        let mut f = vec![Vector6::zeros(); n];
        for i in (0..n).rev() {
            let mut fi = j[i] * a[i] - small_adjoint_dual(&v[i], &(j[i] * v[i]));
            if i + 1 < n {
                fi += kin.adjoints[i + 1].0.transpose() * f[i + 1];
            }
            f[i] = fi;
        }
        (v, a, f)
    }

    fn rel(a: &[Vector6<f64>], b: &[Vector6<f64>]) -> f64 {
        let scale = a.iter().map(|x| x.amax()).fold(1e-300, f64::max);
        a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn zero_motion_zero_gravity_gives_zero() {
        let chain = random_chain(7, 1).with_gravity(Vector3::zeros());
        let z = JointVector::zeros(7);
        let tau = inverse_dynamics(&chain, &z, &z, &z);
        assert_eq!(tau, z);
        let kin = assemble_kinematics(&chain, &z);
        let v = propagate_velocities(&kin, &z, &Twist::zero());
        assert!(v.iter().all(|t| *t == Twist::zero()));
        let a = propagate_accelerations(&kin, &v, &z, &z, &Twist::zero());
        assert!(a.iter().all(|t| *t == Twist::zero()));
        let inertias: Vec<_> = chain.links().iter().map(|l| l.spatial_inertia().unwrap()).collect();
        let f = propagate_forces(&kin, &v, &a, &inertias, &Wrench::zero());
        assert!(f.iter().all(|w| *w == Wrench::zero()));
    }

    #[test]
    fn single_link_velocity_is_screw_times_rate() {
        let chain = random_chain(1, 2);
        let kin = assemble_kinematics(&chain, &JointVector::from_vec(vec![0.3]));
        let v = propagate_velocities(&kin, &JointVector::from_vec(vec![1.7]), &Twist::zero());
        assert!((v[0].to_vector() - kin.screws[0] * 1.7).amax() < 1e-15);
    }

    #[test]
    fn static_chain_acceleration_is_transported_gravity() {
        let chain = random_chain(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_joint(5, &mut rng);
        let z = JointVector::zeros(5);
        let kin = assemble_kinematics(&chain, &q);
        let g = gravity_base_acceleration(chain.gravity());
        let a = propagate_accelerations(&kin, &vec![Twist::zero(); 5], &z, &z, &g);
        let mut expect = g.to_vector();
        for i in 0..5 {
            expect = kin.adjoints[i].0 * expect;
            assert!((a[i].to_vector() - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn single_static_link_supports_its_weight() {
        let chain = random_chain(1, 5);
        let q = JointVector::from_vec(vec![0.4]);
        let z = JointVector::zeros(1);
        let (_, states) = inverse_dynamics_states(&chain, &q, &z, &z, &Wrench::zero());
        // In base coordinates the joint wrench must cancel gravity on the COM.
        let link = &chain.links()[0];
        let pose = crate::model::forward_kinematics(&chain, &q)[0];
        let f = states.forces[0];
        let force_base = pose.rotation() * f.force;
        let moment_base = pose.rotation() * f.moment + pose.translation().cross(&force_base);
        let weight = -chain.gravity() * link.mass;
        let com_base = pose.transform_point(&link.com);
        assert!((force_base - weight).amax() < 1e-12);
        assert!((moment_base - com_base.cross(&weight)).amax() < 1e-12);
    }

    #[test]
    fn scan_passes_match_sequential_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [1, 2, 3, 7, 20, 33, 64] {
            let chain = random_chain(n, 100 + n as u64);
            let (q, qd, qdd) = (random_joint(n, &mut rng), random_joint(n, &mut rng), random_joint(n, &mut rng));
            let kin = assemble_kinematics(&chain, &q);
            let j = chain.inertias();
            let g = gravity_base_acceleration(chain.gravity()).to_vector();
            let (tau, [v, a, f]) = rnea(&kin, &j, &qd, &qdd, &g, &Vector6::zeros(), &mut DepthTrace::new());
            let (vs, as_, fs) = sequential(&kin, &j, &qd, &qdd, &g);
            assert!(rel(&v, &vs) <= 1e-12, "n={n} velocities");
            assert!(rel(&a, &as_) <= 1e-12, "n={n} accelerations");
            assert!(rel(&f, &fs) <= 1e-12, "n={n} forces");
            for i in 0..n {
                assert!((tau[i] - kin.screws[i].dot(&fs[i])).abs() <= 1e-12 * tau.amax());
            }
        }
    }

    #[test]
    fn tip_wrench_adds_jacobian_transpose_torque() {
        // τ(tip) − τ(0) = Sᵀ·(transported tip wrench), linear in the wrench.
        let chain = random_chain(6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (q, qd, qdd) = (random_joint(6, &mut rng), random_joint(6, &mut rng), random_joint(6, &mut rng));
        let w = Wrench::new(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, -1.0));
        let t0 = inverse_dynamics(&chain, &q, &qd, &qdd);
        let (t1, _) = inverse_dynamics_states(&chain, &q, &qd, &qdd, &w);
        let (t2, _) = inverse_dynamics_states(&chain, &q, &qd, &qdd, &Wrench::from_vector(&(w.to_vector() * 2.0)));
        let d1 = &t1 - &t0;
        let d2 = &t2 - &t0;
        assert!((d2 - &d1 * 2.0).amax() < 1e-10);
        let kin = assemble_kinematics(&chain, &q);
        let mut f = w.to_vector();
        for i in (0..6).rev() {
            assert!((d1[i] - kin.screws[i].dot(&f)).abs() < 1e-10);
            f = kin.adjoints[i].0.transpose() * f;
        }
    }

    #[test]
    fn bias_and_differential_torque() {
        let chain = random_chain(4, 9).with_gravity(Vector3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = random_joint(4, &mut rng);
        let z = JointVector::zeros(4);
        assert_eq!(bias_torque(&chain, &q, &z), z);
        let qd = random_joint(4, &mut rng);
        let tau = inverse_dynamics(&chain, &q, &qd, &z);
        assert_eq!(differential_torque(&tau, &bias_torque(&chain, &q, &qd)), z);
    }

    #[test]
    fn torque_is_affine_in_acceleration() {
        let chain = random_chain(8, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (q, qd) = (random_joint(8, &mut rng), random_joint(8, &mut rng));
        let bias = bias_torque(&chain, &q, &qd);
        for _ in 0..10 {
            let (a, b) = (random_joint(8, &mut rng), random_joint(8, &mut rng));
            let (alpha, beta) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let lhs = inverse_dynamics(&chain, &q, &qd, &(&a * alpha + &b * beta)) - &bias;
            let rhs = (inverse_dynamics(&chain, &q, &qd, &a) - &bias) * alpha
                + (inverse_dynamics(&chain, &q, &qd, &b) - &bias) * beta;
            assert!((lhs - &rhs).amax() <= 1e-10 * rhs.amax().max(1.0));
        }
    }
}
