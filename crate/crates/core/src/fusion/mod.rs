//! Pixel-aligned RGB/depth fusion blocks.
//!
//! Feature maps are `[C, H, W]` tensors. The Intra-modal Attention Mix
//! ([`iam_forward`]) builds one `HW×HW` attention map from the sum of the
//! per-modality query/key products and applies it to both modalities' values;
//! Channel-wise Dynamic Fusion ([`cdf_forward`]) turns the mixed feature into
//! per-channel weights that rebalance the two streams and produce an
//! aggregated map. [`fuse_baseline`] covers the early, late, intra-modal and
//! inter-modal reference designs.

mod baseline;
mod cdf;
mod iam;

pub use baseline::{
    fuse_baseline, AttentionParams, AttentionWeights, BaselineKind, BaselineOutput, BaselineParams,
    MergeParams, MergeWeights,
};
pub use cdf::{cdf_forward, CdfParams, CdfWeights, FusionOutput};
pub use iam::{
    attention_logits, concat_modalities, iam_forward, intra_attention_scores, inverse_modality_rows,
    modality_rows, qkv_project, IamParams, IamWeights, QkvBundle, ScorePath,
};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// `(C, H, W)` of a feature map, or a dimension error.
pub(crate) fn feature_dims(tape: &Tape, op: &'static str, f: Var) -> Result<(usize, usize, usize)> {
    match tape.shape(f) {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::dim(op, s, &[0, 0, 0])),
    }
}

pub(crate) fn aligned_dims(tape: &Tape, op: &'static str, f_rgb: Var, f_d: Var) -> Result<(usize, usize, usize)> {
    let dims = feature_dims(tape, op, f_rgb)?;
    if tape.shape(f_rgb) != tape.shape(f_d) {
        return Err(Error::dim(op, tape.shape(f_rgb), tape.shape(f_d)));
    }
    Ok(dims)
}
