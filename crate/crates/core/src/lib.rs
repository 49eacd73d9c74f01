//! Partition-parallel mesh graph networks with halo exchange.

pub mod cli;
pub mod config;
pub mod datagen;
pub mod dist;
pub mod error;
pub mod eval;
pub mod io;
pub mod mesh;
pub mod model;
pub mod partition;
pub mod perf;
pub mod train;

pub use error::{Error, Result};
