//! Parallel rigid-body dynamics for serial robot chains.
//!
//! Inverse dynamics runs as three block bi-diagonal solves evaluated with a
//! parallel prefix scan. Forward dynamics is available through three
//! algorithms: joint-space inertia inversion, articulated-body inertia and a
//! constraint-force formulation whose only non-scan step is odd-even
//! elimination of a symmetric block tri-diagonal system.

pub mod bench;
pub mod forward;
pub mod inverse;
pub mod model;
pub mod oee;
pub mod parallel;
pub mod scan;
pub mod spatial;
pub mod symfact;

pub use forward::{
    abia_forward_dynamics, batch_forward_dynamics, cfa_forward_dynamics, forward_dynamics, CfaOptions,
    jsiia_forward_dynamics, Algorithm, DynamicsError, FdProblem,
};
pub use inverse::{bias_torque, differential_torque, inverse_dynamics, LinkStates};
pub use model::{
    assemble_kinematics, load_chain, random_chain, save_chain, ChainKinematics, JointVector,
    LinkSpec, ModelError, RobotChain,
};
pub use oee::{block_thomas_solve, oee_solve, OeeError, SymBlockTriDiagSystem};
pub use parallel::{with_workers, DepthTrace, PhaseKind};
pub use scan::{scan_inclusive, BlockBiDiagSystem};
pub use spatial::{AdjointMap, SE3Transform, SpatialInertia, Twist, Wrench};
