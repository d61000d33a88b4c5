//! Experiment harness around `cardiotwin-core`: run configuration, file
//! formats, SVG plots, a rayon executor, the acceptance checks and the CLI
//! commands.

pub mod commands;
pub mod config;
pub mod io;
pub mod parallel;
pub mod svg;
pub mod verify;

pub use config::RunConfig;
pub use parallel::Rayon;
