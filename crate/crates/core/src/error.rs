use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("scenario failed validation ({} violation(s))", .0.len())]
    Validation(Vec<Violation>),
    #[error("simulation already reached its end at TTI {0}")]
    EndOfSimulation(u64),
    #[error("plant driver failed: {0}")]
    Driver(String),
}

/// One violated scenario invariant. `field` is a dotted path into the
/// scenario document (`ran.bsr_period_s`, `der[2].tau_s`, ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}
