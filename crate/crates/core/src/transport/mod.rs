//! Implicit-Euler upwind finite-volume transport, the observation operator
//! and the parameter-to-observable map with its exact discrete adjoint.

mod forward_map;
mod observe;
mod operator;

pub use forward_map::{simulate_measurements, solve_forward, ForwardMap, Trajectory};
pub use observe::{CandidateSet, CandidateMode, Measurement, ObservationPlan, Observations};
pub use operator::{Transport, TransportConfig};
