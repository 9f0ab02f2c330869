//! Experiment manager for arbitrary executables: hierarchical configs with
//! command-line sweeps, local and scheduler launches, per-run logging,
//! commit-pinned code snapshots, and a query layer over the run database.

pub mod config;
pub mod runstore;
pub mod versioning;
pub mod launcher;
pub mod scheduler;
pub mod reader;
pub mod cli;
