use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The exact ReLU image of an n-dimensional set produces a set of 2^n
    /// constrained zonotopes; refuse when n is above the configured cap.
    #[error(
        "relu split of a {dim}-dimensional set produces a set of 2^{dim} constrained zonotopes \
         (cap is 2^{cap})"
    )]
    SplitTooLarge { dim: usize, cap: usize },

    #[error("the set is empty")]
    EmptySet,

    #[error("simplex stopped after {iterations} iterations (cap reached, primal residual {residual:.3e})")]
    SolverBreakdown { iterations: usize, residual: f64 },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("reachable set exceeded the budget of {budget} live pieces (layer {layer})")]
    BranchBudget { budget: usize, layer: usize },

    #[error("training diverged at iteration {iteration} (objective loss is not finite)")]
    Diverged { iteration: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("run directory {dir} is missing {file}")]
    MissingArtifact { dir: String, file: String },
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for failures of the numerical machinery rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SolverBreakdown { .. } | Error::Unbounded | Error::Diverged { .. }
        )
    }
}
