pub mod alphabet;
pub mod classifier;
pub mod error;
pub mod experiment;
pub mod hmm;
pub mod lm;
pub mod metrics;
pub mod scrf;
pub mod semimarkov;
pub mod synthgen;
pub mod vision;

pub use error::{Error, Result};
