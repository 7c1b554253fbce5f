use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum AceError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate spectral gap at n = {n}: gap {gap:.3e} <= tolerance {tol:.3e}")]
    DegenerateGap { n: usize, gap: f64, tol: f64 },

    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("shift insufficient: lambda_max = {lambda_max:.6e} is not below {threshold:.6e}; raise t")]
    ShiftInsufficient { lambda_max: f64, threshold: f64 },

    #[error("matrix is not Hermitian: asymmetry {asymmetry:.3e}")]
    NotHermitian { asymmetry: f64 },

    #[error("columns are not orthonormal: |V*V - I| = {defect:.3e}")]
    NotOrthonormal { defect: f64 },

    #[error("perturbation is not tangent at the projector: defect {defect:.3e}")]
    NotTangent { defect: f64 },

    #[error("frame is not a fixed point: distance {distance:.3e} to its image")]
    NotFixed { distance: f64 },

    #[error("projected operator V*BV is singular")]
    SingularProjection,

    #[error("insufficient trace: {points} qualifying points, need at least {required}")]
    InsufficientTrace { points: usize, required: usize },

    #[error("enumeration of {count} index sets exceeds cap {cap}")]
    EnumerationCapExceeded { count: u128, cap: usize },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("unknown name: {0}")]
    UnknownName(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AceError>;
