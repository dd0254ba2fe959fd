//! Learning trajectories as paths through the space of state-action occupancy measures.
//!
//! A training run produces a sequence of policies; each policy induces an occupancy measure,
//! and exact 1-Wasserstein distances between them turn the run into a polyline whose length,
//! directness and progress towards the optimum are summarized by the indices in [`metrics`].

pub mod agents;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod metrics;
pub mod occupancy;
pub mod policy;
pub mod transport;

pub use error::{Error, Result};
