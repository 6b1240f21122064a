//! Decentralized personalized learning with heterogeneous client models,
//! learnable class prototypes and a learned collaboration graph.
//!
//! The crate is organised bottom-up: [`numkernels`] (dense math, simplex
//! projection), [`model`] and [`losses`] (client networks and their
//! objective with exact gradients), [`pml`] (local training), [`cgl`]
//! (mixing-row learning), [`scenarios`] (synthetic label-skew data),
//! [`network`] (the round-synchronous simulator), [`metrics`], and the
//! run-level [`config`] and [`output`] plumbing.

pub mod cgl;
pub mod config;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod network;
pub mod numkernels;
pub mod output;
pub mod pml;
pub mod scenarios;
pub mod seeding;
pub mod verify;

pub use config::{Method, RunConfig};
pub use error::{MaplError, Result};
pub use metrics::RunResult;
pub use network::{run_experiment, run_experiment_with, NetworkState};
