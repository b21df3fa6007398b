use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{} configuration error(s):\n{}", .0.len(), join_lines(.0))]
    Validation(Vec<crate::config::ConfigIssue>),

    #[error("spacing must be positive, got {value} at ({x}, {z})")]
    NonPositiveSpacing { x: f64, z: f64, value: f64 },

    #[error("requested {k} neighbours but only {available} points are indexed")]
    TooFewPoints { k: usize, available: usize },

    #[error("singular collocation system{}: {reason}", node_suffix(*.node))]
    SingularSystem { node: Option<usize>, reason: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("time step {dt:e} s exceeds stability limit {dt_max:e} s")]
    Unstable { dt: f64, dt_max: f64 },

    #[error("non-finite wavefield at step {step} (node {node})")]
    BlowUp { step: usize, node: usize },

    #[error("parse error in {what} at line {line}: {msg}")]
    Parse { what: String, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn node_suffix(node: Option<usize>) -> String {
    node.map(|n| format!(" at node {n}")).unwrap_or_default()
}

fn join_lines(issues: &[crate::config::ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}
