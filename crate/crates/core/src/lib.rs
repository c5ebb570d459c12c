//! Exact and simulated analysis of blocking load balancers that route each
//! arrival to server `i` with probability proportional to its number of free
//! buffer slots.

pub mod error;
pub mod model;
pub mod numeric;
pub mod optimizer;
pub mod oracle;
pub mod productform;
pub mod simulator;

pub use error::{Error, Result};
pub use model::{
    state_lattice, validate, validate_raw, Allocation, ClusterParams, MetricsReport, StateLattice,
    StateVector,
};
