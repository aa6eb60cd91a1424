//! Expected value of sample information (EVSI) by moment matching.

pub mod cases;
pub mod error;
pub mod io;
pub mod model;
pub mod moment_match;
pub mod oracle;
pub mod preposterior;
pub mod regression;
pub mod stats;

pub use error::{Error, Result};
