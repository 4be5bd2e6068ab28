//! Scenario files, result writers, and the command implementations behind
//! the `tapsolve` binary.

pub mod commands;
pub mod file;
pub mod output;
