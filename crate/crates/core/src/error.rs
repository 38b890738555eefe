use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("parameter layout mismatch")]
    LayoutMismatch,
    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training diverged on domain {domain}")]
    Divergence { domain: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
    #[error("AUC undefined: labels contain a single class")]
    SingleClass,
    #[error("no domain could be evaluated")]
    NothingToEvaluate,
    #[error("worker {worker}: {source}")]
    Worker { worker: usize, source: Box<Error> },
}

impl Error {
    /// Re-tags numeric blow-ups as a divergence on `domain`; other errors pass through.
    pub(crate) fn in_domain(self, domain: usize) -> Error {
        match self {
            Error::NonFinite(_) => Error::Divergence { domain },
            other => other,
        }
    }
}
