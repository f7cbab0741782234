//! Library surface of the `scan` binary: run configuration, checkpoint
//! persistence, and the subcommand implementations. Kept as a library so
//! integration tests can drive the same code paths the binary does.

pub mod checkpoint;
pub mod commands;
pub mod config;
