use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("a formation needs at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("task-space dimension must be 2 or 3, got {0}")]
    UnsupportedDimension(usize),
    #[error("graph has no edges")]
    NoEdges,
    #[error("edge {edge} references agent {agent}, but the formation has {num_agents} agents")]
    AgentOutOfRange {
        edge: usize,
        agent: usize,
        num_agents: usize,
    },
    #[error("edge {edge} is a self-loop")]
    SelfLoop { edge: usize },
    #[error("edges {first} and {second} connect the same pair of agents")]
    DuplicateEdge { first: usize, second: usize },
    #[error("{edges} edges but {desired} desired entries")]
    DesiredCount { edges: usize, desired: usize },
    #[error("desired distance of edge {edge} must be positive")]
    NonPositiveDistance { edge: usize },
    #[error("distance formation needs at least {needed} edges, got {got}")]
    TooFewEdges { needed: usize, got: usize },
    #[error("graph is not connected")]
    Disconnected,
    #[error("rigidity matrix has rank {rank}, rigidity needs {needed}")]
    NotRigid { rank: usize, needed: usize },
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("sample set is empty")]
    EmptySamples,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("base rotation is not orthonormal (‖RᵀR − I‖ = {0:.3e})")]
    NotOrthonormal(f64),
    #[error("invalid model parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("displacement formations need a common frame; agent {agent} has a rotated base")]
    FrameMisaligned { agent: usize },
    #[error("local-frame control is defined for distance formations only")]
    NotDistanceFlavor,
    #[error("controller state is missing {0}")]
    MissingState(&'static str),
    #[error("invalid gain: {0}")]
    Gain(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite state derivative at t = {t:.6} s (agent {agent})")]
    BlowUp { t: f64, agent: usize },
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("sample grid is empty: {0}")]
    EmptyGrid(String),
    #[error("certificate setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One field-precise validation failure.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("syntax: {0}")]
    Syntax(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl ScenarioError {
    pub fn fields(&self) -> &[FieldError] {
        match self {
            ScenarioError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}
