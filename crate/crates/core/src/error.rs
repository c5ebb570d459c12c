use thiserror::Error;

/// Errors raised by model validation, exact analysis, the oracle and the optimizer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {expected} service rates but {found} buffer lengths")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("rate `{name}` must be positive and finite, got {value}")]
    NonPositiveRate { name: String, value: f64 },

    #[error("buffer length of server {server} is negative ({value})")]
    NegativeBufferLength { server: usize, value: i64 },

    #[error("at least one server is required")]
    NoServers,

    #[error("{what} needs {size} entries, above the configured cap of {cap}")]
    CapacityExceeded {
        what: &'static str,
        size: u128,
        cap: u128,
    },

    #[error("state {state:?} lies outside the lattice bounded by {bound:?}")]
    StateOutOfRange {
        state: Vec<usize>,
        bound: Vec<usize>,
    },

    #[error("server {server} has an empty buffer")]
    EmptyBuffer { server: usize },

    #[error("no job is ever admitted (total buffer length is zero)")]
    NoAdmittedJobs,

    #[error("operation requires exactly two servers, got {found}")]
    NotTwoServers { found: usize },

    #[error("server index {index} out of range for {servers} servers")]
    ServerIndex { index: usize, servers: usize },

    #[error("stationary solve failed: {0}")]
    SingularSystem(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insensitivity test requires processor-sharing servers")]
    SchedulerNotPS,

    #[error("conjecture scan requires at least three servers, got {found}")]
    TooFewServers { found: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
