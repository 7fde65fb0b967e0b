use thiserror::Error;

/// Errors produced by the simulator and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid qubit count n = {0}: need n >= 2")]
    InvalidN(usize),
    #[error("invalid sigma = {0}: need sigma > 0")]
    InvalidSigma(f64),
    #[error("marked index {marked} out of range for n = {n} qubits")]
    MarkedOutOfRange { n: usize, marked: usize },
    #[error("n = {0} exceeds the memory guard of {1} qubits")]
    TooLargeN(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("schedule segment duration {0} is not positive")]
    NonpositiveDuration(f64),
    #[error("integrator step size underflow at t = {t}: tolerance not met")]
    ToleranceNotMet { t: f64 },
    #[error("window [{lo}, {hi}] outside trajectory span [{span_lo}, {span_hi}]")]
    WindowOutOfRange {
        lo: f64,
        hi: f64,
        span_lo: f64,
        span_hi: f64,
    },
    #[error("bracket ({0}, {1}) does not enclose a maximum after expansion")]
    BracketInvalid(f64, f64),
    #[error("flat landscape: |dDyn/dgamma| < 1e-14 across the bracket")]
    FlatLandscape,
    #[error("curvature {0} is not negative")]
    NonnegativeCurvature(f64),
    #[error("nonpositive probability {0} in scaling fit")]
    NonpositiveProbability(f64),
    #[error("need at least {0} sizes for the scaling fit, got {1}")]
    TooFewSizes(usize, usize),
    #[error("eigensolver failed to converge at s = {0}")]
    EigensolverNoConvergence(f64),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidN(_) => "invalid-n",
            Error::InvalidSigma(_) => "invalid-sigma",
            Error::MarkedOutOfRange { .. } => "marked-out-of-range",
            Error::TooLargeN(_, _) => "too-large-n",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::NonpositiveDuration(_) => "nonpositive-duration",
            Error::ToleranceNotMet { .. } => "tolerance-not-met",
            Error::WindowOutOfRange { .. } => "window-out-of-range",
            Error::BracketInvalid(_, _) => "bracket-invalid",
            Error::FlatLandscape => "flat-landscape",
            Error::NonnegativeCurvature(_) => "nonnegative-curvature",
            Error::NonpositiveProbability(_) => "nonpositive-probability",
            Error::TooFewSizes(_, _) => "too-few-sizes",
            Error::EigensolverNoConvergence(_) => "eigensolver-no-convergence",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
