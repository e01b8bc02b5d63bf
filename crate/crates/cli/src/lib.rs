//! Library surface of the `conrep` binary: data ingestion, synthetic-world
//! generation, config resolution and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod data;
pub mod synth;
