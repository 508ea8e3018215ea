pub mod clocks;
pub mod diffcore;
pub mod dissect;
pub mod error;
pub mod expcli;
pub mod metrics;
pub mod models;
pub mod rulekit;
pub mod training;

pub use error::{Error, Result};
