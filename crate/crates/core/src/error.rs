use thiserror::Error;

#[derive(Debug, Error)]
pub enum CapError {
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    #[error("invalid spacing: {0}")]
    InvalidSpacing(String),

    #[error("unsupported dimension n = {0} (expected 1 or 2)")]
    Dimension(usize),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("mollifier scale {eps} below 2h = {min}")]
    UnderResolved { eps: f64, min: f64 },

    #[error("ball B(x, {radius}) escapes the domain")]
    BallEscapes { radius: f64 },

    #[error("domination fails at node {node}: margin {margin:.3e}")]
    DominationFails { node: usize, margin: f64 },

    #[error("negative source density at node {0}")]
    NegativeDensity(usize),

    #[error("unknown field reference `{0}`")]
    UnknownField(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CapError>;
