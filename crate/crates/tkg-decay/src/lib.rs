//! File formats, reports and subcommands around [`tkg_decay_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
mod error;
pub mod report;
pub mod tsv;

pub use error::{exit, Error, Result};
pub use tkg_decay_core as core;
