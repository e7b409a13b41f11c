//! Command-line driver: run configuration, structure files and the
//! `madelung`, `check`, `fit`, `bench` and `make-dataset` commands.

pub mod commands;
pub mod config;
pub mod io;

pub use config::RunConfig;
