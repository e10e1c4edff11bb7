use thiserror::Error;

use crate::solver::SolveStats;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("domain is not a convex polygon: {0}")]
    NonConvexDomain(String),

    #[error("degenerate face between vertices {0} and {1}")]
    DegenerateFace(usize, usize),

    #[error("refinement closure did not terminate after {0} sweeps")]
    ClosureOverflow(usize),

    #[error("invalid space configuration: {0}")]
    SpaceConfig(String),

    #[error("unsupported quadrature exactness {requested} (max {max})")]
    QuadratureDegree { requested: usize, max: usize },

    #[error("derivative order {0} not supported (max 2)")]
    DerivativeOrder(usize),

    #[error("matrix is not symmetric: a12 = {0}, a21 = {1}")]
    NonSymmetric(f64, f64),

    #[error("zero matrix has no renormalisation factor")]
    ZeroMatrix,

    #[error("control set is empty")]
    EmptyControls,

    #[error("invalid form parameters: {0}")]
    FormParams(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("strong monotonicity check failed (observed c = {c:.3e}); increase sigma/rho")]
    NotMonotone { c: f64 },

    #[error("nonlinear solver did not converge after {} iterations (residual {:.3e})", .0.newton_iters + .0.fallback_iters, .0.final_residual)]
    NoConvergence(Box<SolveStats>),

    #[error("adaptive loop aborted after {} iterations: {source}", trace.records.len())]
    Aborted {
        trace: Box<crate::adapt::AdaptiveTrace>,
        source: Box<Error>,
    },

    #[error("estimator report is empty")]
    EmptyReport,

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
