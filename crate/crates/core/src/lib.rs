//! RGB-D instance segmentation building blocks that run anywhere `alloc` does.
//!
//! The crate carries the numerical heart of the project: a small dense
//! tensor type with a reverse-mode tape, the Intra-modal Attention Mix and
//! Channel-wise Dynamic Fusion blocks (plus the classic early/late/intra/inter
//! baselines), a desk-scale two-stream set-prediction model, synthetic RGB-D
//! scene generation, COCO-style mask tooling, dataset statistics and a
//! COCO-style average-precision evaluator.
//!
//! Everything here is pure computation. File formats, the CLI and anything
//! touching the filesystem live in the `iamseg` companion crate.

#![no_std]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
