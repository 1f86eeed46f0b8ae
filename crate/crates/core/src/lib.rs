//! Cooperative end-effector formation control for networks of robotic arms.

pub mod error;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod control;
pub mod certificate;
pub mod sim;
pub mod scenario;
pub mod trace_io;
pub mod plot;
pub mod verify;

pub use error::{
    CertificateError, ControlError, FieldError, GraphError, IoError, ModelError, ScenarioError,
    SimError,
};
pub use graph::{DesiredGeometry, Edge, EdgeErrors, Flavor, FormationGraph, RigiditySpectra};
pub use model::{
    ArmModel, CustomArm, DynamicsTerms, GravityMode, JointState, ManipulatorModel, PlanarParams,
    PlanarTwoLink, SpatialElbow, SpatialParams,
};
