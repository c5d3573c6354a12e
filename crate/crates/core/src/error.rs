use thiserror::Error;

/// Errors raised by the numerical laboratory.
///
/// Variants are grouped by how a caller should react: input errors mean the
/// request itself is malformed, contract errors mean the request is valid but
/// the physics it asks for is undefined or unresolved at the chosen settings.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("indefinite form: XZ - Y^2 <= 0 at {0:?}")]
    IndefiniteForm(Vec<f64>),

    #[error("degenerate spectrum: adjacent gap {gap:e} below tolerance {tol:e} (levels {lower}, {upper})")]
    Degenerate { gap: f64, tol: f64, lower: usize, upper: usize },

    #[error("insufficient path resolution at sample {sample}: consecutive overlap {overlap:.6} <= {floor}; increase K")]
    Resolution { sample: usize, overlap: f64, floor: f64 },

    #[error("endpoint orthogonality at sample {sample}: |<psi_n(R0)|psi_n(R)>| = {magnitude:e} below {tol:e}; open-path phase undefined")]
    Orthogonal { sample: usize, magnitude: f64, tol: f64 },

    #[error("reference overlap <psi_n(R0)|psi_n(R)> passes through zero between samples {sample} and {} (phase step {step:.3} rad); only the link routes can follow it", sample + 1)]
    ReferenceNode { sample: usize, step: f64 },

    #[error("truncation margin violated: level {level} exceeds highest valid level {max_valid}")]
    Truncation { level: usize, max_valid: usize },

    #[error("step underflow: {0}")]
    StepUnderflow(String),

    #[error("norm drift {drift:e} exceeds {tol:e}; reduce the time step")]
    NormDrift { drift: f64, tol: f64 },

    #[error("leakage {leakage:e} exceeds {tol:e}; evolution not adiabatic, increase T")]
    Leakage { leakage: f64, tol: f64 },

    #[error("classical action drift {drift:e} exceeds {tol:e} at the largest T")]
    ActionDrift { drift: f64, tol: f64 },

    #[error("linear fit residual {residual:e} exceeds {tol:e}; first-order expansion in n invalid here")]
    PoorFit { residual: f64, tol: f64 },

    #[error("packet dispersion {dispersion:.4} exceeds {tol:.4}")]
    Dispersion { dispersion: f64, tol: f64 },

    #[error("phase-space grid too small: tail mass {tail:e} outside range exceeds {tol:e}")]
    GridTooSmall { tail: f64, tol: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors where the request was valid but the quantity is
    /// numerically undefined (orthogonality, degeneracy and friends).
    pub fn is_numerical_contract(&self) -> bool {
        matches!(
            self,
            Error::Degenerate { .. }
                | Error::Resolution { .. }
                | Error::Orthogonal { .. }
                | Error::ReferenceNode { .. }
                | Error::NormDrift { .. }
                | Error::Leakage { .. }
                | Error::ActionDrift { .. }
                | Error::PoorFit { .. }
                | Error::Dispersion { .. }
                | Error::GridTooSmall { .. }
                | Error::IndefiniteForm(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
