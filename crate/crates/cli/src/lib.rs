//! Command-line driver and HTTP service for entmark indexes.

pub mod cli;
pub mod server;

pub use cli::run;
