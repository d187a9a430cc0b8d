use std::fmt;

use crate::chain::Trace;
use crate::phase_space::State;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("batch {batch} out of range for {n_batches} batches")]
    BatchOutOfRange { batch: usize, n_batches: usize },

    #[error("operation not supported for model {model}: {what}")]
    UnsupportedModel { model: &'static str, what: &'static str },

    #[error("malformed data: {0}")]
    MalformedData(String),

    #[error("empty sample")]
    EmptySample,

    #[error("degenerate variance: trace is constant")]
    DegenerateVariance,

    #[error("{0}")]
    Divergence(Box<DivergenceReport>),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}

/// Where and how a chain left the finite domain.
#[derive(Debug, Clone)]
pub struct DivergenceReport {
    pub step: u64,
    pub eta: f64,
    pub scheme: String,
    pub state: State,
    /// Kept samples collected before the divergence, when the failure
    /// happened inside a chain run.
    pub partial: Option<Trace>,
}

impl fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "divergence at step {} (scheme {}, eta {}): theta = {:?}, r = {:?}",
            self.step,
            self.scheme,
            self.eta,
            self.state.theta.as_slice(),
            self.state.r.as_slice()
        )?;
        if let Some(p) = &self.partial {
            write!(f, "; {} samples kept before failure", p.len())?;
        }
        Ok(())
    }
}
