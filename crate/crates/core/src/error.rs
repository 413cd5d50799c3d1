use thiserror::Error;

/// Errors raised by operator algebra, simulation and transform evaluation.
#[derive(Debug, Error)]
pub enum WishartError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("operator dimension must be at least 1")]
    EmptyOperator,

    #[error("non-finite entry encountered")]
    NonFinite,

    #[error("operator is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("identity plus operator is singular (eigenvalue {eigenvalue:e} <= -1)")]
    SingularDeterminant { eigenvalue: f64 },

    #[error("matrix is numerically singular")]
    Singular,

    #[error("invalid Schatten order {0}")]
    InvalidOrder(f64),

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("rank of initial state ({rank}) exceeds alpha ({alpha})")]
    RankExceedsAlpha { rank: usize, alpha: usize },

    #[error("inadmissible parameters: {0}")]
    InadmissibleParameters(String),

    #[error("time grid must start at 0 and be strictly increasing")]
    GridNotIncreasing,

    #[error("incompatible simulation plans: {0}")]
    IncompatiblePlans(String),

    #[error("ball condition violated (margin {margin:e})")]
    BallConditionViolated { margin: f64 },

    #[error("alpha = {0} is not a non-negative integer")]
    NonIntegerAlpha(f64),

    #[error("basis is not orthonormal (deviation {0:e})")]
    NonOrthonormalBasis(f64),

    #[error("shift {shift} must exceed {bound}")]
    InvalidShift { shift: f64, bound: f64 },

    #[error("operator is neither positive nor negative semidefinite")]
    NotSignDefinite,

    #[error("model and test operator are not jointly diagonal")]
    NotJointlyDiagonal,

    #[error("Riccati integration overflow at step {step} (t = {time}, norm {norm:e})")]
    StepOverflow { step: usize, time: f64, norm: f64 },

    #[error("time {0} is not on the sample grid")]
    TimeNotOnGrid(f64),

    #[error("test family is empty or does not start with (0, 1)")]
    EmptyFamily,

    #[error("operator is not strictly positive (smallest eigenvalue {0:e})")]
    NotStrictlyPositive(f64),

    #[error("invalid test functional: {0}")]
    InvalidFunctional(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what}: discrepancy {discrepancy:e} exceeds {tolerance:e}")]
    ConsistencyViolation {
        what: &'static str,
        discrepancy: f64,
        tolerance: f64,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, WishartError>;
