//! Workbench for decentralised multi-object tracking in clutter.
//!
//! The crate simulates a time-varying multi-sensor network observing
//! multiple objects through a Poisson measurement model with uniform
//! clutter, runs a family of variational trackers over the simulated data
//! (centralised, individual, consensus, average-fusion, and decentralised
//! natural-gradient variants), and scores every method with the GOSPA
//! metric plus communication-iteration accounting.

pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod trackers;
pub mod vi;

pub use error::{Error, Result};
