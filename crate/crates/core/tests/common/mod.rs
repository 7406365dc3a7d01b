#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use pardyn::{JointVector, LinkSpec, RobotChain, SE3Transform, Twist};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const G: f64 = 9.81;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, rng: &mut ChaCha8Rng, half_width: f64) -> JointVector {
    JointVector::from_fn(n, |_, _| rng.random_range(-half_width..=half_width))
}

/// `max|a − b| / max(max|a|, max|b|)`, or the absolute difference when both are
/// below 1e-12.
pub fn rel_err(a: &JointVector, b: &JointVector) -> f64 {
    let diff = (a - b).amax();
    let scale = a.amax().max(b.amax());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_err_dense(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).amax();
    let scale = a.amax().max(b.amax());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Planar link rotating about its frame's z axis with its COM on the x axis.
fn planar_link(mass: f64, lc: f64, inertia: f64, offset: f64) -> LinkSpec {
    LinkSpec {
        mass,
        com: Vector3::new(lc, 0.0, 0.0),
        inertia_rot: Matrix3::from_diagonal_element(inertia),
        joint_screw: Twist::new(Vector3::z(), Vector3::zeros()),
        home_transform: SE3Transform::from_translation(Vector3::new(offset, 0.0, 0.0)),
    }
}

/// Joint angles measured from the x axis, gravity along −y.
#[derive(Debug, Clone, Copy)]
pub struct Pendulum {
    pub m: f64,
    pub l: f64,
    pub i: f64,
}

impl Pendulum {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            m: rng.random_range(0.5..5.0),
            l: rng.random_range(0.2..1.5),
            i: rng.random_range(0.01..0.5),
        }
    }

    pub fn chain(&self) -> RobotChain {
        RobotChain::new(vec![planar_link(self.m, self.l, self.i, 0.0)], Vector3::new(0.0, -G, 0.0)).unwrap()
    }

    pub fn torque(&self, q: f64, qdd: f64) -> f64 {
        (self.i + self.m * self.l * self.l) * qdd + self.m * G * self.l * q.cos()
    }

    pub fn acceleration(&self, q: f64, tau: f64) -> f64 {
        (tau - self.m * G * self.l * q.cos()) / (self.i + self.m * self.l * self.l)
    }
}

/// Two-link planar arm in the textbook Lagrangian form.
#[derive(Debug, Clone, Copy)]
pub struct TwoLink {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub i1: f64,
    pub i2: f64,
}

impl TwoLink {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let l1 = rng.random_range(0.3..1.5);
        Self {
            m1: rng.random_range(0.5..5.0),
            m2: rng.random_range(0.5..5.0),
            l1,
            lc1: rng.random_range(0.1..1.0) * l1,
            lc2: rng.random_range(0.1..1.0),
            i1: rng.random_range(0.01..0.5),
            i2: rng.random_range(0.01..0.5),
        }
    }

    pub fn chain(&self) -> RobotChain {
        RobotChain::new(
            vec![
                planar_link(self.m1, self.lc1, self.i1, 0.0),
                planar_link(self.m2, self.lc2, self.i2, self.l1),
            ],
            Vector3::new(0.0, -G, 0.0),
        )
        .unwrap()
    }

    pub fn mass_matrix(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let c2 = q[1].cos();
        let d11 = self.m1 * self.lc1.powi(2)
            + self.m2 * (self.l1.powi(2) + self.lc2.powi(2) + 2.0 * self.l1 * self.lc2 * c2)
            + self.i1
            + self.i2;
        let d12 = self.m2 * (self.lc2.powi(2) + self.l1 * self.lc2 * c2) + self.i2;
        let d22 = self.m2 * self.lc2.powi(2) + self.i2;
        Matrix2::new(d11, d12, d12, d22)
    }

    /// Coriolis, centrifugal and gravity torques.
    pub fn bias(&self, q: &Vector2<f64>, qd: &Vector2<f64>) -> Vector2<f64> {
        let h = -self.m2 * self.l1 * self.lc2 * q[1].sin();
        let phi2 = self.m2 * self.lc2 * G * (q[0] + q[1]).cos();
        let phi1 = (self.m1 * self.lc1 + self.m2 * self.l1) * G * q[0].cos() + phi2;
        Vector2::new(
            h * qd[1] * qd[1] + 2.0 * h * qd[0] * qd[1] + phi1,
            -h * qd[0] * qd[0] + phi2,
        )
    }

    pub fn torque(&self, q: &Vector2<f64>, qd: &Vector2<f64>, qdd: &Vector2<f64>) -> Vector2<f64> {
        self.mass_matrix(q) * qdd + self.bias(q, qd)
    }

    pub fn acceleration(&self, q: &Vector2<f64>, qd: &Vector2<f64>, tau: &Vector2<f64>) -> Vector2<f64> {
        self.mass_matrix(q).lu().solve(&(tau - self.bias(q, qd))).unwrap()
    }
}

pub fn v2(v: &JointVector) -> Vector2<f64> {
    Vector2::new(v[0], v[1])
}

pub fn jv(v: &Vector2<f64>) -> JointVector {
    JointVector::from_column_slice(v.as_slice())
}
