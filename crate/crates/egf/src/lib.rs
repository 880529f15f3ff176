//! Configuration, file formats and command implementations for the `egf`
//! command line. The numerical work lives in `egf-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{Error, Result};
