use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    /// The assignment does not match the scenario's dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
}

impl ModelError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidScenario(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("solver refused: {0}")]
    Refused(String),
    #[error("no feasible assignment: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaleError {
    #[error("no conditions supplied")]
    Empty,
    #[error("non-finite value in feature data")]
    NonFinite,
    #[error("bad dimensions: {0}")]
    Dimensions(String),
    #[error("channel count mismatch: condition {index} has {found} channels, expected {expected}")]
    ChannelMismatch { index: usize, expected: usize, found: usize },
    #[error("bad parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("profile rejected; {}", .problems.iter().map(|(row, msg)| format!("row {row}: {msg}")).collect::<Vec<_>>().join("; "))]
    Profile { problems: Vec<(usize, String)> },
    #[error("bad tensor file {path}: {msg}")]
    TensorFile { path: String, msg: String },
    #[error("bad plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
}

impl HarnessError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }
}
