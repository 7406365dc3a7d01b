//! Serial-chain robot models.
//!
//! Frame conventions: link `i`'s joint screw `S_i` is expressed in link `i`'s
//! frame, and `home_transform` is the pose of link `i` in its parent's frame
//! (link `i − 1`, or the base for the first link) at `q_i = 0`. The joint then
//! moves the child as
//!
//! ```text
//! T_{i-1,i}(q_i) = home_i · exp([S_i]·q_i)      T_{i,i-1} = exp(−[S_i]·q_i) · home_i⁻¹
//! ```
//!
//! so body twists obey `V_i = Ad(T_{i,i-1})·V_{i-1} + S_i·q̇_i`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Matrix3, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::map_indices;
use crate::spatial::{
    adjoint_of, random_rotation, screw_exp, spatial_inertia_from, AdjointMap, SE3Transform,
    SpatialError, SpatialInertia, Twist,
};

/// Joint-space vector (`q`, `q̇`, `q̈`, `τ`, …), one entry per link.
pub type JointVector = DVector<f64>;

pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("chain must have at least one link")]
    Empty,
    #[error("link {index}: {reason}")]
    InvalidLink { index: usize, reason: String },
    #[error("declared n = {declared} but {actual} links are listed")]
    LinkCount { declared: usize, actual: usize },
    #[error("gravity must be finite")]
    Gravity,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
}

fn invalid(index: usize, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidLink {
        index,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia_rot: Matrix3<f64>,
    pub joint_screw: Twist,
    pub home_transform: SE3Transform,
}

impl LinkSpec {
    pub fn spatial_inertia(&self) -> Result<SpatialInertia, SpatialError> {
        spatial_inertia_from(self.mass, &self.com, &self.inertia_rot)
    }

    fn validate(&self, index: usize) -> Result<(), ModelError> {
        if !(self.mass > 0.0) {
            return Err(invalid(index, "mass must be positive"));
        }
        if !self.joint_screw.is_finite() || !self.joint_screw.is_unit() {
            return Err(invalid(
                index,
                format!("joint screw must have unit norm (got {})", self.joint_screw.norm()),
            ));
        }
        self.spatial_inertia()
            .map_err(|e| invalid(index, e.to_string()))?;
        Ok(())
    }
}

/// Serial, branchless chain; `links[0]` attaches to the base.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotChain {
    links: Vec<LinkSpec>,
    gravity: Vector3<f64>,
}

impl RobotChain {
    pub fn new(links: Vec<LinkSpec>, gravity: Vector3<f64>) -> Result<Self, ModelError> {
        if links.is_empty() {
            return Err(ModelError::Empty);
        }
        if !gravity.iter().all(|g| g.is_finite()) {
            return Err(ModelError::Gravity);
        }
        for (i, l) in links.iter().enumerate() {
            l.validate(i)?;
        }
        Ok(Self { links, gravity })
    }

    pub fn n(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }

    /// Same chain with a different gravity vector.
    pub fn with_gravity(&self, gravity: Vector3<f64>) -> Self {
        Self {
            links: self.links.clone(),
            gravity,
        }
    }

    pub fn screws(&self) -> Vec<Vector6<f64>> {
        self.links.iter().map(|l| l.joint_screw.to_vector()).collect()
    }

    /// Spatial inertias, one per link. Construction already validated them.
    pub fn inertias(&self) -> Vec<Matrix6<f64>> {
        self.links
            .iter()
            .map(|l| *l.spatial_inertia().expect("validated at construction").matrix())
            .collect()
    }
}

/// Configuration-dependent transforms and the `Γ` blocks of `(I − Γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainKinematics {
    /// `T_{i,i-1}` for every link; entry 0 maps base coordinates into link 0.
    pub transforms: Vec<SE3Transform>,
    /// `Ad(T_{i,i-1})` for every link; entry 0 transports base quantities.
    pub adjoints: Vec<AdjointMap>,
    /// Joint screws `S_i` in link coordinates.
    pub screws: Vec<Vector6<f64>>,
}

impl ChainKinematics {
    pub fn n(&self) -> usize {
        self.adjoints.len()
    }

    /// Sub-diagonal blocks `Γ_{i+1,i}`, `n − 1` of them.
    pub fn gamma_blocks(&self) -> &[AdjointMap] {
        &self.adjoints[1..]
    }

    /// Transport of base-frame twists into link 0.
    pub fn base_adjoint(&self) -> &AdjointMap {
        &self.adjoints[0]
    }

    pub(crate) fn gamma_matrices(&self) -> Vec<Matrix6<f64>> {
        self.adjoints[1..].iter().map(|a| a.0).collect()
    }
}

pub fn assemble_kinematics(chain: &RobotChain, q: &JointVector) -> ChainKinematics {
    assert_eq!(q.len(), chain.n(), "joint vector length must equal link count");
    let pairs = map_indices(chain.n(), |i| {
        let link = &chain.links[i];
        let t = screw_exp(&link.joint_screw, -q[i]).compose(&link.home_transform.inverse());
        (t, adjoint_of(&t))
    });
    let (transforms, adjoints) = pairs.into_iter().unzip();
    ChainKinematics {
        transforms,
        adjoints,
        screws: chain.screws(),
    }
}

/// Pose of every link in the base frame, `T_{0,i}`.
pub fn forward_kinematics(chain: &RobotChain, q: &JointVector) -> Vec<SE3Transform> {
    let mut pose = SE3Transform::identity();
    chain
        .links
        .iter()
        .zip(q.iter())
        .map(|(link, &qi)| {
            pose = pose
                .compose(&link.home_transform)
                .compose(&screw_exp(&link.joint_screw, qi));
            pose
        })
        .collect()
}

/// Seeded random revolute chain.
///
/// Masses are uniform in [0.1, 10] kg, COM offsets in [−0.5, 0.5]³ m, principal
/// rotational inertias in [0.01, 0.5]·mass kg·m² under a random rotation.
/// Joint screws are zero-pitch rotations about a random line through a point
/// within 0.2 m of the link origin, normalized to unit 6-norm. Home transforms
/// have a random rotation and a translation whose length is in [0.1, 1] m.
pub fn random_chain(n: usize, seed: u64) -> RobotChain {
    assert!(n >= 1, "chain needs at least one link");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let links = (0..n).map(|_| random_link(&mut rng)).collect();
    RobotChain::new(links, Vector3::from(DEFAULT_GRAVITY)).expect("generated link is valid")
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    random_rotation(rng) * Vector3::x()
}

fn random_link<R: Rng>(rng: &mut R) -> LinkSpec {
    let mass = rng.random_range(0.1..=10.0);
    let com = Vector3::from_fn(|_, _| rng.random_range(-0.5..=0.5));
    let principal = Vector3::from_fn(|_, _| rng.random_range(0.01..=0.5) * mass);
    let frame = random_rotation(rng);
    let inertia = frame * Matrix3::from_diagonal(&principal) * frame.transpose();
    let inertia_rot = (inertia + inertia.transpose()) * 0.5;

    let axis = random_unit(rng);
    let point = Vector3::from_fn(|_, _| rng.random_range(-0.2..=0.2));
    let mut screw = Vector6::zeros();
    screw.fixed_rows_mut::<3>(0).copy_from(&axis);
    screw.fixed_rows_mut::<3>(3).copy_from(&(-axis.cross(&point)));
    let joint_screw = Twist::from_vector(&(screw / screw.norm()));

    let length = rng.random_range(0.1..=1.0);
    let offset = random_unit(rng) * length;
    let rot = random_rotation(rng);
    let home_transform = SE3Transform::new(rot, offset).expect("unit quaternion rotation");

    LinkSpec {
        mass,
        com,
        inertia_rot,
        joint_screw,
        home_transform,
    }
}

// ---- file format -------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    n: usize,
    gravity: [f64; 3],
    links: Vec<LinkFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    mass: f64,
    com: [f64; 3],
    inertia_rot: [f64; 9],
    joint_screw: [f64; 6],
    home_transform: TransformFile,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformFile {
    rotation: [f64; 9],
    translation: [f64; 3],
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    std::array::from_fn(|k| m[(k / 3, k % 3)])
}

fn from_row_major(a: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(a)
}

impl From<&RobotChain> for ChainFile {
    fn from(c: &RobotChain) -> Self {
        ChainFile {
            n: c.n(),
            gravity: c.gravity.into(),
            links: c
                .links
                .iter()
                .map(|l| LinkFile {
                    mass: l.mass,
                    com: l.com.into(),
                    inertia_rot: row_major(&l.inertia_rot),
                    joint_screw: l.joint_screw.to_vector().into(),
                    home_transform: TransformFile {
                        rotation: row_major(l.home_transform.rotation()),
                        translation: (*l.home_transform.translation()).into(),
                    },
                })
                .collect(),
        }
    }
}

impl TryFrom<ChainFile> for RobotChain {
    type Error = ModelError;

    fn try_from(f: ChainFile) -> Result<Self, ModelError> {
        if f.n != f.links.len() {
            return Err(ModelError::LinkCount {
                declared: f.n,
                actual: f.links.len(),
            });
        }
        let links = f
            .links
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let home_transform = SE3Transform::new(
                    from_row_major(&l.home_transform.rotation),
                    Vector3::from(l.home_transform.translation),
                )
                .map_err(|e| invalid(i, format!("home_transform: {e}")))?;
                Ok(LinkSpec {
                    mass: l.mass,
                    com: Vector3::from(l.com),
                    inertia_rot: from_row_major(&l.inertia_rot),
                    joint_screw: Twist::from_vector(&Vector6::from(l.joint_screw)),
                    home_transform,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        RobotChain::new(links, Vector3::from(f.gravity))
    }
}

/// Serialize to the JSON model format.
pub fn chain_to_json(chain: &RobotChain) -> String {
    serde_json::to_string_pretty(&ChainFile::from(chain)).expect("model serializes")
}

/// Parse the JSON model format. `origin` only labels diagnostics.
pub fn chain_from_json(text: &str, origin: &Path) -> Result<RobotChain, ModelError> {
    let file: ChainFile = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    RobotChain::try_from(file)
}

pub fn load_chain(path: impl AsRef<Path>) -> Result<RobotChain, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    chain_from_json(&text, path)
}

pub fn save_chain(chain: &RobotChain, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut text = chain_to_json(chain);
    text.push('\n');
    fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}
