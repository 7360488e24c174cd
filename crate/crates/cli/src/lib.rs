//! Scenario files, output formats and subcommands of the `proxstep` tool.

pub mod builtins;
pub mod commands;
pub mod config;
pub mod output;
