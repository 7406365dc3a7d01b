//! Spatial (Lie-group) algebra on SE(3).
//!
//! Twists are ordered `(angular, linear)` and wrenches `(moment, force)`.
//! Every 6×6 operator in the crate uses the same block order, so
//!
//! ```text
//! Ad(T) = | R    0 |        ad(V) = | ω̂  0 |
//!         | p̂R   R |                | v̂  ω̂ |
//! ```
//!
//! Single-body dynamics in this convention read `F = J·V̇ − ad(V)ᵀ·J·V`.

use nalgebra::{Matrix3, Matrix6, Rotation3, Unit, Vector3, Vector6};
use thiserror::Error;

/// Tolerance on `RᵀR = I` and `det R = 1` for accepted rotations.
pub const ROTATION_TOL: f64 = 1e-12;

/// Tolerance on the 6-norm of a unit screw.
pub const UNIT_SCREW_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("rotation is not orthonormal (|RᵀR − I| = {0:.3e})")]
    NotOrthonormal(f64),
    #[error("rotation has det {0}, expected +1")]
    Reflection(f64),
    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("rotational inertia is not symmetric (asymmetry {0:.3e})")]
    AsymmetricInertia(f64),
    #[error("rotational inertia is not positive definite (min eigenvalue {0:.3e})")]
    IndefiniteInertia(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// 3×3 cross-product matrix: `hat(a) * b == a × b`.
#[inline]
pub fn hat(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Element of se(3): angular part first.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

impl Twist {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            angular: v.fixed_rows::<3>(0).into_owned(),
            linear: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.angular);
        v.fixed_rows_mut::<3>(3).copy_from(&self.linear);
        v
    }

    pub fn norm(&self) -> f64 {
        (self.angular.norm_squared() + self.linear.norm_squared()).sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_SCREW_TOL
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|x| x.is_finite())
    }

    /// Lie bracket `[self, other] = ad(self)·other`.
    pub fn bracket(&self, other: &Twist) -> Twist {
        Twist {
            angular: self.angular.cross(&other.angular),
            linear: self.linear.cross(&other.angular) + self.angular.cross(&other.linear),
        }
    }
}

/// Element of se*(3): moment first.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub moment: Vector3<f64>,
    pub force: Vector3<f64>,
}

impl Wrench {
    pub fn new(moment: Vector3<f64>, force: Vector3<f64>) -> Self {
        Self { moment, force }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            moment: v.fixed_rows::<3>(0).into_owned(),
            force: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.moment);
        v.fixed_rows_mut::<3>(3).copy_from(&self.force);
        v
    }

    /// Power pairing with a twist.
    pub fn power(&self, twist: &Twist) -> f64 {
        self.moment.dot(&twist.angular) + self.force.dot(&twist.linear)
    }
}

/// Rigid transform `x ↦ R·x + p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Transform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for SE3Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Transform {
    /// Validated constructor.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, SpatialError> {
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(SpatialError::NonFinite("transform"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > ROTATION_TOL {
            return Err(SpatialError::NotOrthonormal(ortho));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(SpatialError::Reflection(det));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: &Unit<Vector3<f64>>, angle: f64) -> Self {
        Self {
            rotation: Rotation3::from_axis_angle(axis, angle).into_inner(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ rhs`.
    pub fn compose(&self, rhs: &SE3Transform) -> SE3Transform {
        SE3Transform {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Transform {
        let rt = self.rotation.transpose();
        SE3Transform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }
}

/// Frame-change operator on twists, `Ad(T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointMap(pub Matrix6<f64>);

impl AdjointMap {
    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    pub fn apply(&self, v: &Twist) -> Twist {
        Twist::from_vector(&(self.0 * v.to_vector()))
    }

    /// Dual action `Ad(T)ᵀ` on a wrench.
    pub fn apply_dual(&self, f: &Wrench) -> Wrench {
        Wrench::from_vector(&(self.0.transpose() * f.to_vector()))
    }
}

pub fn adjoint_of(t: &SE3Transform) -> AdjointMap {
    let r = t.rotation;
    let pr = hat(&t.translation) * r;
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&pr);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    AdjointMap(m)
}

/// `ad(V) = [[ω̂, 0], [v̂, ω̂]]`; `ad(V)·W` is the Lie bracket `[V, W]`.
pub fn small_adjoint(v: &Twist) -> Matrix6<f64> {
    let w = hat(&v.angular);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&hat(&v.linear));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m
}

/// `ad(V)ᵀ·F` without forming the matrix.
#[inline]
pub fn small_adjoint_dual(v: &Vector6<f64>, f: &Vector6<f64>) -> Vector6<f64> {
    // ad(V)ᵀ = [[-ω̂, -v̂], [0, -ω̂]]
    let w = v.fixed_rows::<3>(0);
    let lin = v.fixed_rows::<3>(3);
    let m = f.fixed_rows::<3>(0);
    let n = f.fixed_rows::<3>(3);
    let top = -(w.cross(&m) + lin.cross(&n));
    let bottom = -w.cross(&n);
    Vector6::new(top[0], top[1], top[2], bottom[0], bottom[1], bottom[2])
}

/// `ad(V)·W` on raw 6-vectors.
#[inline]
pub fn small_adjoint_apply(v: &Vector6<f64>, x: &Vector6<f64>) -> Vector6<f64> {
    let w = v.fixed_rows::<3>(0);
    let lin = v.fixed_rows::<3>(3);
    let xw = x.fixed_rows::<3>(0);
    let xl = x.fixed_rows::<3>(3);
    let top = w.cross(&xw);
    let bottom = lin.cross(&xw) + w.cross(&xl);
    Vector6::new(top[0], top[1], top[2], bottom[0], bottom[1], bottom[2])
}

/// `exp([S]·q)` for an arbitrary twist `S`.
///
/// Zero-pitch screws rotate about their axis line; pure linear screws translate.
/// When the angular part is not unit length the rotation angle is `|ω|·q`.
pub fn screw_exp(s: &Twist, q: f64) -> SE3Transform {
    let wn = s.angular.norm();
    if wn < 1e-14 {
        return SE3Transform::from_translation(s.linear * q);
    }
    let axis = s.angular / wn;
    let v = s.linear / wn;
    let theta = wn * q;
    let r = Rotation3::from_axis_angle(&Unit::new_unchecked(axis), theta).into_inner();
    let p = (Matrix3::identity() - r) * axis.cross(&v) + axis * axis.dot(&v) * theta;
    SE3Transform::from_parts_unchecked(r, p)
}

/// 6×6 body inertia of a rigid body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialInertia(Matrix6<f64>);

impl SpatialInertia {
    /// Inertia expressed in a frame where the center of mass sits at `com`
    /// and `inertia_rot` is the rotational inertia about the COM.
    pub fn from_mass_properties(
        mass: f64,
        com: &Vector3<f64>,
        inertia_rot: &Matrix3<f64>,
    ) -> Result<Self, SpatialError> {
        if !mass.is_finite() || !com.iter().chain(inertia_rot.iter()).all(|x| x.is_finite()) {
            return Err(SpatialError::NonFinite("mass properties"));
        }
        if mass <= 0.0 {
            return Err(SpatialError::NonPositiveMass(mass));
        }
        let asym = (inertia_rot - inertia_rot.transpose()).amax();
        if asym > 1e-12 * inertia_rot.amax().max(1.0) {
            return Err(SpatialError::AsymmetricInertia(asym));
        }
        let min_eig = inertia_rot.symmetric_eigenvalues().min();
        if min_eig <= 0.0 {
            return Err(SpatialError::IndefiniteInertia(min_eig));
        }
        let c = hat(com);
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(inertia_rot - c * c * mass));
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(c * mass));
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-c * mass));
        m.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Matrix3::identity() * mass));
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    pub fn kinetic_energy(&self, v: &Twist) -> f64 {
        let x = v.to_vector();
        0.5 * x.dot(&(self.0 * x))
    }
}

pub fn spatial_inertia_from(
    mass: f64,
    com: &Vector3<f64>,
    inertia_rot: &Matrix3<f64>,
) -> Result<SpatialInertia, SpatialError> {
    SpatialInertia::from_mass_properties(mass, com, inertia_rot)
}

/// Uniformly random rotation from a normalized Gaussian quaternion.
pub(crate) fn random_rotation<R: rand::Rng>(rng: &mut R) -> Matrix3<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut draw = || -> f64 { StandardNormal.sample(rng) };
    let q = nalgebra::Quaternion::new(draw(), draw(), draw(), draw());
    nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}
