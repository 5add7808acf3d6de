//! Core engine for explanatory interactive learning on time series.
//!
//! Everything here is pure computation over `alloc`: the autodiff tape,
//! the two model families, integrated-gradient attributions in time and
//! frequency, feedback masks, right-reason losses, shortcut decoys, dataset
//! transforms and the training loop. File formats, the CLI and the HTTP
//! service live in the `tsxil-workbench` crate.
#![cfg_attr(all(not(feature = "std"), not(test)), no_std)]

extern crate alloc;

pub mod attribution;
pub mod autodiff;
pub mod data;
pub mod decoys;
mod error;
pub mod experiment;
pub mod feedback;
pub mod losses;
pub mod models;
pub mod presets;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
