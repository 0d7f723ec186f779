use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Error, Debug)]
pub enum CoreError {
    /// Bad argument or precondition violation (exponent out of range,
    /// off-grid probe time, empty schedule, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The explicit scheme would lose monotonicity at a node, e.g. the
    /// diagonal-dominance split for cross derivatives failed.
    #[error("monotonicity refusal at node {node:?} (x = {coords:?}): {detail}")]
    Monotonicity {
        node: Vec<usize>,
        coords: Vec<f64>,
        detail: String,
    },

    /// Time step too large for the stencil at some node.
    #[error("CFL violation at node {node:?}: dt * outflow = {ratio} > 1")]
    Cfl { node: Vec<usize>, ratio: f64 },

    /// Two lattices that must share a grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Estimated allocation exceeds the configured budget.
    #[error("resource budget exceeded: need ~{need_mib} MiB, budget {budget_mib} MiB")]
    Budget { need_mib: u64, budget_mib: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl CoreError {
    pub fn domain(msg: impl Into<String>) -> Self {
        CoreError::Domain(msg.into())
    }
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Serde(e.to_string())
    }
}
