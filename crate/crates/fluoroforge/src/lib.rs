//! Command-line front end and file formats for `fluoroforge-core`.

pub mod cli;
pub mod error;
pub mod io;
pub mod pipeline;

pub use error::{Error, Result};
