use std::fmt;

/// Errors shared across the model, verifier, and estimation engines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A conditioning event has probability zero. Callers that implement the
    /// privacy-loss conventions must catch this and apply the zero convention
    /// themselves; it is never silently mapped to 0 here.
    ZeroMassEvent,
    /// Two model components disagree on alphabet, size, or output space.
    DimensionMismatch(String),
    /// A probability, threshold, or index parameter is out of range.
    InvalidParameter(String),
    /// The requested exact enumeration exceeds the configured budget.
    BudgetExceeded { required: f64, budget: f64 },
    /// The scenario lacks the iid/prefix/sum-dependent structure the fast
    /// evaluator needs.
    NotExchangeable(String),
    /// Rejection sampling used up its draw budget before collecting the
    /// requested number of accepted samples.
    RejectionBudgetExhausted {
        budget: u64,
        accepted: u64,
        requested: u64,
    },
    /// Monte Carlo estimation was asked for zero samples.
    NoSamples,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ZeroMassEvent => write!(f, "conditioning event has probability zero"),
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::BudgetExceeded { required, budget } => write!(
                f,
                "exact enumeration needs about {required:.3e} elementary terms, over the budget \
                 of {budget:.3e}; use the fastpath or montecarlo engine, or raise the budget"
            ),
            Error::NotExchangeable(msg) => {
                write!(f, "scenario is not exchangeable: {msg}")
            }
            Error::RejectionBudgetExhausted {
                budget,
                accepted,
                requested,
            } => write!(
                f,
                "rejection sampling exhausted its budget of {budget} draws \
                 ({accepted} of {requested} samples accepted)"
            ),
            Error::NoSamples => write!(f, "montecarlo estimation requires at least one sample"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
