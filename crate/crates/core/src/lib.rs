//! Evolutionary architecture search over a weight-sharing one-shot supernet.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod evolution;
pub mod experiment;
pub mod search_space;
pub mod supernet;
pub mod trainer;

pub use error::{Error, Result};
