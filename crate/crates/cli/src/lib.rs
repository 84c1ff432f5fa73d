//! Library side of the `rydfit` command-line tool: configuration files,
//! subcommands and output writing.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod validate;
