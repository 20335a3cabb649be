use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// Every violation found while validating a config file.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    ConfigViolations(Vec<String>),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("device {device}: cannot split a shard of {samples} sample(s) with a test fraction > 0")]
    Split { device: u32, samples: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("numeric divergence in round {round} on device {device}")]
    Divergence { round: usize, device: u32 },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("convergence bound inapplicable: C1 = {c1} is not positive")]
    BoundInapplicable { c1: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
