//! Configuration, simulation driver and output writers for the commands.

pub mod commands;
pub mod config;
pub mod engine;
pub mod output;

pub use commands::{decoherence, noise_floor, sweep, thermal, tomo};
pub use config::{ExperimentConfig, Physical, Preset};
pub use output::OutputDir;
