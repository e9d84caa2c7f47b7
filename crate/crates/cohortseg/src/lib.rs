//! Filesystem side of cohort annotation: image IO, cohort sessions, file
//! formats, backend selection, the headless pipeline and the CLI.
mod fsutil;

pub mod backends;
pub mod cohort;
pub mod config;
pub mod formats;
pub mod imageio;
pub mod pipeline;

pub mod cli;
