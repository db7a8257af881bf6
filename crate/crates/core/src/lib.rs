pub mod chaoskit;
pub mod dense;
pub mod ensembles;
pub mod error;
pub mod harness;
pub mod hilbert;
pub mod reservoir;
pub mod stats;
pub mod tasks;

pub use error::{Error, Result};
