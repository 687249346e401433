//! Error types shared across the crate.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument that must be finite was NaN or infinite.
    #[error("argument `{name}` must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },

    /// Modulation level outside the supported square-QAM set.
    #[error("modulation level must be an even integer in [{min}, {max}], got {m}")]
    InvalidModulation { m: u32, min: u32, max: u32 },

    /// A BER target at or above the zero-power ceiling of the modulation.
    #[error("BER target {target} is unreachable with {m} bits/symbol (ceiling {ceiling})")]
    InfeasibleBerTarget { target: f64, m: u32, ceiling: f64 },

    /// No admissible modulation level attains the target transmission rate.
    #[error("no modulation level up to {m_max} attains rate {r_target} for {nb} bits")]
    InfeasibleRate { nb: usize, r_target: f64, m_max: u32 },

    /// Catch-all for argument validation failures.
    #[error("invalid `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Value is not within tolerance of any quantizer codeword.
    #[error("{0} is not a codeword of the quantizer")]
    NotACodeword(f64),

    /// Two sequences that must agree in length do not.
    #[error("length mismatch for `{what}`: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Channel coefficient is exactly zero; equalization is undefined.
    #[error("channel coefficient is zero; cannot equalize")]
    SingularChannel,

    /// A data-carrying symbol was assigned no transmit power.
    #[error("zero power on data-carrying symbol {index}")]
    ZeroPower { index: usize },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    /// A backward pass was attempted with a cache from an older forward pass.
    #[error("stale cache: parameters changed since the forward pass")]
    StaleCache,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Bundle directory contents do not match the persistence format.
    #[error("bundle format: {0}")]
    BundleFormat(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn require_finite(name: &'static str, value: f64) -> Result<f64> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite { name, value })
        }
    }

    /// True for errors that mean "this link budget / rate cannot be met",
    /// as opposed to malformed input.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleBerTarget { .. } | Error::InfeasibleRate { .. }
        )
    }
}
