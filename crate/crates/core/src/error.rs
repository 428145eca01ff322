use thiserror::Error;

/// Errors produced by model loading, kinematics, and the solver stages.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    #[error("parse error at line {line}, <{element}>: {message}")]
    Parse {
        line: u32,
        element: String,
        message: String,
    },

    #[error("unsupported joint kind `{kind}` on joint `{joint}`")]
    UnsupportedJointKind { joint: String, kind: String },

    #[error("branching kinematic tree: link `{link}` has {children} child joints")]
    BranchingTree { link: String, children: usize },

    #[error("revolute joint `{joint}` is missing limits")]
    MissingLimits { joint: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-unit quaternion (norm {norm})")]
    NonUnitQuaternion { norm: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular system")]
    SingularSystem,

    #[error("zero gradient")]
    ZeroGradient,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = IkError> = std::result::Result<T, E>;

impl From<std::io::Error> for IkError {
    fn from(err: std::io::Error) -> Self {
        IkError::Io(err.to_string())
    }
}
