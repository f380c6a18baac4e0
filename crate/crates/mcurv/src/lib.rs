//! File formats, grid output and the `mcurv` command-line tool built on
//! [`mcurv_core`].

pub mod cli;
pub mod error;
pub mod grid;
pub mod patchio;

pub use error::{Error, Result};
