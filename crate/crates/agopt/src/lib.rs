//! Configuration, artifact formats and the experiment runner for
//! [`agopt_core`]. The `agopt` binary is a thin command-line wrapper.

pub mod config;
mod error;
pub mod io;
pub mod runner;
pub mod selftest;

pub use error::{Error, Result};
