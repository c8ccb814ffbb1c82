//! Feedback system neural networks.
//!
//! Fits a system of neural-network derivative functions, one per state, to
//! observed trajectories and then reads the causal structure back out of the
//! fitted system with link scores.

pub mod dynsys;
pub mod error;
pub mod evaluation;
pub mod ground_truth;
pub mod io;
pub mod ltm;
pub mod model;
pub mod training;

pub use error::{FsnnError, Result};
