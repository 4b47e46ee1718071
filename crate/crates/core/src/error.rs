use thiserror::Error;

use crate::scenario::ScenarioError;

pub type Result<T, E = LevyxError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LevyxError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("singular solve: {0}")]
    SingularSolve(String),

    #[error("eps too large: mixture weight eps^2*lambda0 = {weight} exceeds 1 (eps = {eps})")]
    EpsTooLarge { eps: f64, weight: f64 },

    #[error("condition {condition} violated: {detail}")]
    ConditionViolated { condition: String, detail: String },

    #[error("balance condition L4 violated: residual {residual:e}")]
    BalanceViolated { residual: f64 },

    #[error("PSD repair failed: minimum eigenvalue {min_eigenvalue:e}")]
    PsdRepairFailed { min_eigenvalue: f64 },

    #[error("limit characteristics depend on u; exact simulation needs constant coefficients")]
    NonConstantTriplet,

    #[error("jump intensity {lambda} at u = {u:?} is not certified by the thinning cap {cap}")]
    CapExceeded { lambda: f64, cap: f64, u: Vec<f64> },

    #[error("matrix square root failed: {0}")]
    SqrtFailed(String),

    #[error("insufficient paths: got {got}, need at least {need}")]
    InsufficientPaths { got: usize, need: usize },

    #[error("insufficient sample: sizes {left} and {right}, need at least {need}")]
    InsufficientSample { left: usize, right: usize, need: usize },

    #[error("projected impulse draws {projected:e} exceed budget {cap:e}")]
    BudgetExceeded { projected: f64, cap: f64 },

    #[error("mismatched family: {0}")]
    MismatchedFamily(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Scenario(#[from] ScenarioError),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl LevyxError {
    /// Process exit code: 1 for condition or validation failures, 2 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            LevyxError::InvalidModel(_)
            | LevyxError::ConditionViolated { .. }
            | LevyxError::BalanceViolated { .. }
            | LevyxError::EpsTooLarge { .. }
            | LevyxError::BudgetExceeded { .. }
            | LevyxError::MismatchedFamily(_)
            | LevyxError::InvalidArgument(_)
            | LevyxError::InsufficientPaths { .. }
            | LevyxError::InsufficientSample { .. }
            | LevyxError::NonConstantTriplet
            | LevyxError::Scenario(_) => 1,
            LevyxError::SingularSolve(_)
            | LevyxError::PsdRepairFailed { .. }
            | LevyxError::CapExceeded { .. }
            | LevyxError::SqrtFailed(_)
            | LevyxError::Io { .. } => 2,
        }
    }
}
