pub mod analysis;
pub mod cli;
pub mod dae;
pub mod error;
pub mod problems;
pub mod starting;
pub mod stepper;
pub mod tableau;

pub use error::{GlmError, Result};
