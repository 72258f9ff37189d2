pub mod cli;
pub mod consistency;
pub mod error;
pub mod fields;
mod filter;
pub mod grad;
pub mod initializer;
pub mod io;
pub mod metrics;
pub mod refiner;
pub mod synth;
pub mod warp;

pub use error::{Error, Result};
