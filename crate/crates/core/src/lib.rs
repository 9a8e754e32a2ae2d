//! Solver for the one-leader, N-follower demand-response game between an
//! aggregator and its consumers.
//!
//! The aggregator chooses calls `c_i` (kWh asked of consumer `i`) summing to
//! a reduction target; each consumer answers with the shift fraction that
//! minimizes its bill plus dissatisfaction minus reward. Three independent
//! solution paths are provided in [`bilevel`]: an exact reduction to one
//! convex QP, enumeration of the followers' KKT branches, and a grid search.

pub mod bilevel;
pub mod error;
pub mod follower;
pub mod model;
pub mod par;
pub mod qp;
pub mod report;
pub mod rng;
pub mod scenario_io;

pub use error::{Error, Result};
