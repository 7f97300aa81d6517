//! Command-line front end and `/v1` HTTP service for the compositor.

pub mod args;
pub mod commands;
pub mod server;

pub use args::Cli;
