use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An interval fell outside `0 <= j < k <= n`.
    #[error("invalid interval ({j},{k}] for n={n}")]
    InvalidInterval { j: usize, k: usize, n: usize },

    /// The sample size admits no interval collection.
    #[error("n={n} too small: {what}")]
    TooSmall { n: usize, what: &'static str },

    /// Data were degenerate for the requested statistic.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A value left the domain of the exponential family.
    #[error("domain error: {0}")]
    Domain(String),

    /// An empty sample was passed where at least one value is required.
    #[error("empty sample")]
    EmptySample,

    /// Requested statistic/calibration/model combination is not supported.
    #[error("incompatible combination: {0}")]
    Incompatible(String),

    /// Stored metadata does not match the requested operation.
    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),

    /// The Bonferroni level underflowed to zero or no threshold exists.
    #[error("significance level underflow while solving for a threshold (level={level:e})")]
    LevelUnderflow { level: f64 },

    /// The bisection bracket for the minimal detectable signal was exhausted.
    #[error("no rejection up to mu={cap:e}; bracket cap exceeded")]
    BracketExceeded { cap: f64 },

    /// A power-study replicate failed; completed replicates are preserved.
    #[error("replicate {replicate} failed: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
        /// `(replicate, minimal mu per calibration)` rows completed before
        /// the failure, for the partial-results dump.
        partial: Vec<(usize, Vec<f64>)>,
    },

    /// (De)serialization of a persisted table failed.
    #[error("table i/o: {0}")]
    TableIo(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
