//! Half-life based outdated fact filtering for temporal knowledge graphs.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, timing and
//! the command-line front end live in the `tkg-decay` crate.
#![no_std]

extern crate alloc;

pub mod dataset;
mod error;
pub mod nd;

pub use error::{Error, Result};
pub mod attention;
pub mod encoder;
pub mod halflife;
pub mod model;
pub mod synth;
pub mod training;
