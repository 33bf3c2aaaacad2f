use thiserror::Error;

/// Errors raised by the decomposition pipelines and their substrate.
#[derive(Debug, Error)]
pub enum LabError {
    /// Invalid caller-supplied parameter (exponent, axis, radius, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Malformed input data: non-finite entries, shape mismatch, bad file.
    #[error("invalid input: {0}")]
    Input(String),

    /// The discretized domain is empty or not connected.
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    /// A finite-difference stencil could not be formed at some cell.
    #[error("stencil error at cell {cell}: {reason}")]
    Stencil { cell: usize, reason: String },

    /// The grid is too coarse to build a valid ball cover.
    #[error("resolution too coarse: {0}")]
    Resolution(String),

    /// An extension ray left the sampled region.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// The good set of the truncation is empty.
    #[error("truncation degenerate: good set is empty at lambda = {lambda}")]
    TruncationDegenerate { lambda: f64 },

    /// A pointwise contract (majorant, Taylor bound, claim) failed.
    #[error("contract violation: {what} (worst cell {cell}, excess {excess:.3e})")]
    Contract { what: String, cell: usize, excess: f64 },

    /// An intermediate quantity became non-finite.
    #[error("non-finite intermediate: {0}")]
    NonFinite(String),

    /// A measured ratio exceeded its frozen fixture.
    #[error("fixture mismatch: {0}")]
    Fixture(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Contract { .. } | LabError::NonFinite(_) => 2,
            LabError::Fixture(_) => 3,
            _ => 4,
        }
    }
}
