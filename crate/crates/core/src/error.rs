//! Error type shared by every module of the crate.

use thiserror::Error;

use crate::trainer::StepReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op} needs at least {needed} samples, got {got}")]
    InsufficientSamples {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("replay memory is empty")]
    EmptyMemory,

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("domain {0} is sealed: training has moved past it")]
    SealedDomain(usize),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("training diverged at domain {}, step {}", .0.domain_index, .0.step)]
    Divergence(Box<StepReport>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn format(offset: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }
}
