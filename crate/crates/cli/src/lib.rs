//! Command-line front end: argument parsing, run configuration and commands.

pub mod commands;
pub mod config;
