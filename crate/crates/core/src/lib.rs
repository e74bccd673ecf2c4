//! Segmented Bézier curves through low-rank adapter space.
//!
//! The crate trains curves of adapter vectors for a small frozen-base
//! classifier, averages predictions along them, and measures the loss
//! landscape they pass through:
//!
//! * [`curve`] — Bernstein bases, segment lookup, curve points and slopes.
//! * [`network`] — frozen base weights, adapters, forward/backward, weight noise.
//! * [`train`] — anchor and curve training loops, AdamW, one-cycle schedule,
//!   Jensen–Shannon diversity term.
//! * [`bma`] — grid model averaging, temperature weights, LL/ACC/ECE/MI.
//! * [`landscape`] — loss profiles, barriers, Lipschitz and continuity checks.
//! * [`data`] — synthetic tasks.
//! * [`experiment`] — configs, checkpoints on disk and the CLI commands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bma;
pub mod checkpoint;
pub mod curve;
pub mod data;
mod error;
pub mod experiment;
pub mod landscape;
pub mod method;
pub mod network;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

/// CSV writer with the crate's output conventions: comma delimiter, header
/// row supplied by the caller, LF line endings.
pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(csv::WriterBuilder::new()
        .delimiter(b',')
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(path)?)))
}
