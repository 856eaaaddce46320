use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("input domain error: {0}")]
    InputDomain(String),

    /// A protocol or schedule parameter violates its constraints.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A requested index exceeds the length of a computed series.
    #[error("length error: requested {requested}, available {available}")]
    Length { requested: usize, available: usize },

    /// The mean first-detection time is infinite for this configuration.
    #[error("divergent first-detection time: {0}")]
    Divergent(String),

    /// A least-squares fit could not be performed.
    #[error("fit error: {0}")]
    Fit(String),

    /// Exhaustive enumeration would exceed its budget.
    #[error("enumeration budget exceeded: {0}")]
    Budget(String),
}

impl Error {
    /// Short machine-readable tag, used in CLI error records and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InputDomain(_) => "input_domain",
            Error::Parameter(_) => "parameter",
            Error::Length { .. } => "length",
            Error::Divergent(_) => "divergent",
            Error::Fit(_) => "fit",
            Error::Budget(_) => "budget",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
