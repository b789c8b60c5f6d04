//! Simulation and verification engine for event-triggered sliding-mode
//! formation tracking of leader-follower multi-agent systems under
//! semi-Markov switching communication topologies.
//!
//! The crate is organised around the simulation pipeline:
//!
//! * [`topology`] - directed communication graphs and coupling matrices
//! * [`mode`] - the semi-Markov switching signal
//! * [`plant`] - stochastic agent dynamics and actuator faults
//! * [`smc`] - integral sliding surface and the continuous control law
//! * [`trigger`] - sample-based event generator, delays and the held-value law
//! * [`lmi`] - block-inequality certificate checking
//! * [`scenario`] - configuration, presets and validation
//! * [`sim`] - end-to-end runs, metrics and trace output
//! * [`cli`] - command-line entry points

pub mod cli;
pub mod error;
pub mod lmi;
pub mod mode;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod smc;
pub mod topology;
pub mod trigger;

pub use error::{Error, Result};
