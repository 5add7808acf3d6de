//! Files, CLI and HTTP service around `tsxil-core`: CSV datasets, mask
//! files, attribution exports, checkpoints, experiment files and revision
//! jobs.

pub mod checkpoint;
pub mod csvio;
pub mod dataset;
pub mod error;
pub mod export;
pub mod masks;
pub mod revise;
pub mod service;
pub mod spec;
pub mod store;

pub use error::{Error, Result};

use std::io::Write;

use tsxil_core::train::EpochLog;

/// Writes one JSON object per epoch.
pub fn write_log<W: Write>(log: &[EpochLog], mut out: W) -> Result<()> {
    for entry in log {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io("training log", e))?;
    }
    Ok(())
}
