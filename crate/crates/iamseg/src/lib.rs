//! Filesystem side of `iamseg-core`: PPM/PGM images, canonical COCO JSON,
//! `TNSR1` checkpoints, statistics CSVs, gradient checks, benchmarks and the
//! `iamseg` command-line tool.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod json;
pub mod pnm;
pub mod report;

pub use error::{Error, Result};
