//! Command-line front end and evaluation engine for `deep-promp`.

pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod plot;

pub use error::{HarnessError, Result};
