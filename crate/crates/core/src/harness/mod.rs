//! Dataset synthesis, metrics, run configuration and the command implementations.

pub mod dataset;
pub mod image;
pub mod config;
pub mod gradcheck;
pub mod commands;
