//! Interactive evolutionary multi-objective optimization driven by a machine
//! decision maker whose preferences are learned from rankings.

pub mod detection;
pub mod emoa;
pub mod engine;
pub mod error;
pub mod harness;
pub mod learning;
pub mod mdm;
pub mod problems;
pub mod stats;

pub use error::{Error, Result};
