use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("index out of range: {what} {index} (limit {limit})")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("degenerate gap: user {user} has two channels with identical means")]
    DegenerateGap { user: usize },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("instance too large: {configurations} configurations exceed the limit of {limit}")]
    TooLarge { configurations: u128, limit: u128 },

    #[error("bound not valid: {0}")]
    InvalidBound(String),

    #[error("no vacant channel: {users} users on {channels} channels")]
    NoVacancy { users: usize, channels: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
