use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violates a documented domain constraint.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Adaptive quadrature stopped before reaching the requested tolerance.
    #[error("quadrature did not converge: value {value:e}, error bound {error:e} (tolerance {tolerance:e})")]
    Quadrature {
        value: f64,
        error: f64,
        tolerance: f64,
    },

    /// The evaluation grid cannot resolve the oscillations it is asked to classify.
    #[error("frequency grid too coarse: need spacing <= {required:e} in the oscillating range, found {found:e}")]
    GridTooCoarse { required: f64, found: f64 },

    /// A kernel failed the spectral positivity gate.
    #[error("kernel is not positive definite on the evaluation grid: {0}")]
    NotPositiveDefinite(String),

    /// Shell weights must be pointwise nonnegative.
    #[error("negative shell weight {value:e} in shell {shell}")]
    NegativeShellWeight { shell: usize, value: f64 },

    /// Circulant embedding eigenvalues too negative to clip.
    #[error("embedding has negative eigenvalue mass {negative_mass:e} ({fraction:e} of trace)")]
    NegativeEmbedding { negative_mass: f64, fraction: f64 },

    #[error("shell ladder exhausted at level {0}")]
    LadderExhausted(usize),

    #[error("region escapes the safe interior: {0}")]
    RegionOutsideInterior(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
