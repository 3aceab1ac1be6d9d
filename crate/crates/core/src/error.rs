use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("QP is infeasible")]
    Infeasible,
    #[error("QP solver exceeded {0} iterations")]
    IterationLimit(usize),
    #[error("singular pivot block at stage {stage}")]
    Singular { stage: usize },
    #[error("KKT system has wrong inertia (negative curvature) at stage {stage}")]
    NegativeCurvature { stage: usize },
    #[error("region budget of {limit} exceeded during enumeration")]
    RegionBudget { limit: usize },
    #[error("parameter lies outside the explicit map domain")]
    OutsideDomain,
    #[error("stage {stage} constraint set is empty")]
    StageInfeasible { stage: usize },
    #[error("no feasible grid point found")]
    NoFeasiblePoint,
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported map file version {0}")]
    MapVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}
