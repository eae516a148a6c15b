use alloc::format;

use super::aligned_dims;
use crate::error::{Error, Result};
use crate::tensor::{param_block, Tape, Tensor, Var};

param_block! {
    /// Learnables of one Intra-modal Attention Mix block over `C` channels.
    ///
    /// `w_q`, `w_k`, `w_v` are `[C/2, C]` pointwise projections of the
    /// concatenated map; `w_out` is the `[C, C/2]` projection back.
    IamWeights => IamParams { w_q, b_q, w_k, b_k, w_v, b_v, w_out, b_out }
}

impl IamWeights {
    pub fn init<R: rand::Rng + ?Sized>(channels: usize, rng: &mut R) -> Result<Self> {
        let half = half_channels(channels)?;
        let proj = |rng: &mut R| Tensor::init_fan_in(&[half, channels], channels, rng);
        Ok(IamWeights {
            w_q: proj(rng),
            b_q: Tensor::zeros(&[half]),
            w_k: proj(rng),
            b_k: Tensor::zeros(&[half]),
            w_v: proj(rng),
            b_v: Tensor::zeros(&[half]),
            w_out: Tensor::init_fan_in(&[channels, half], half, rng),
            b_out: Tensor::zeros(&[channels]),
        })
    }
}

pub(crate) fn half_channels(channels: usize) -> Result<usize> {
    if channels == 0 || channels % 2 != 0 {
        return Err(Error::contract(format!(
            "channel count must be even and positive, got {channels}"
        )));
    }
    Ok(channels / 2)
}

/// Query, key and value matrices `[HW, C]` whose first `modality_split`
/// columns come from RGB positions and the rest from depth positions.
#[derive(Clone, Copy, Debug)]
pub struct QkvBundle {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub modality_split: usize,
    /// Width of a query row; the attention logits are divided by `√d_k`.
    pub d_k: usize,
}

/// Which algebraic route computes `Q·Kᵀ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorePath {
    /// One product over the full width.
    Full,
    /// `Q_rgb·K_rgbᵀ + Q_d·K_dᵀ`.
    Blockwise,
}

/// Joins two aligned `[C, H, W]` maps into `[C, 2HW]`: RGB positions first,
/// then depth positions in the same order.
pub fn concat_modalities(tape: &mut Tape, f_rgb: Var, f_d: Var) -> Result<Var> {
    let (c, h, w) = aligned_dims(tape, "concat_modalities", f_rgb, f_d)?;
    let rgb = tape.reshape(f_rgb, &[c, h * w])?;
    let d = tape.reshape(f_d, &[c, h * w])?;
    tape.concat(&[rgb, d], 1)
}

/// `[C/2, 2HW] → [HW, C]`: row `i` is `G[:, i]` followed by `G[:, HW+i]`.
pub fn modality_rows(tape: &mut Tape, g: Var) -> Result<Var> {
    let (half, cols) = tape.value(g).dims2()?;
    if cols % 2 != 0 {
        return Err(Error::contract(format!("position count {cols} is not 2·HW")));
    }
    let hw = cols / 2;
    let parts = tape.split(g, 1, &[hw, hw])?;
    let rgb = tape.transpose(parts[0])?;
    let d = tape.transpose(parts[1])?;
    let out = tape.concat(&[rgb, d], 1)?;
    debug_assert_eq!(tape.shape(out), &[hw, 2 * half]);
    Ok(out)
}

/// Exact inverse of [`modality_rows`]: `[HW, C] → [C/2, 2HW]`.
pub fn inverse_modality_rows(tape: &mut Tape, o: Var) -> Result<Var> {
    let (_, c) = tape.value(o).dims2()?;
    let half = half_channels(c)?;
    let parts = tape.split(o, 1, &[half, half])?;
    let rgb = tape.transpose(parts[0])?;
    let d = tape.transpose(parts[1])?;
    tape.concat(&[rgb, d], 1)
}

/// Pointwise `C → C/2` projections of the concatenated map, rearranged into
/// position rows with RGB and depth column blocks.
pub fn qkv_project(tape: &mut Tape, f_rgbd: Var, p: &IamParams) -> Result<QkvBundle> {
    let (c, cols) = tape.value(f_rgbd).dims2()?;
    let half = half_channels(c)?;
    if cols < 2 || cols % 2 != 0 {
        return Err(Error::contract(format!("need 2·HW ≥ 2 positions, got {cols}")));
    }
    let mut project = |w: Var, b: Var| -> Result<Var> {
        let g = tape.conv1x1(f_rgbd, w, b)?;
        modality_rows(tape, g)
    };
    let q = project(p.w_q, p.b_q)?;
    let k = project(p.w_k, p.b_k)?;
    let v = project(p.w_v, p.b_v)?;
    Ok(QkvBundle {
        q,
        k,
        v,
        modality_split: half,
        d_k: 2 * half,
    })
}

/// Unscaled `Q·Kᵀ` through the chosen route.
pub fn attention_logits(tape: &mut Tape, b: &QkvBundle, path: ScorePath) -> Result<Var> {
    match path {
        ScorePath::Full => {
            let kt = tape.transpose(b.k)?;
            tape.matmul(b.q, kt)
        }
        ScorePath::Blockwise => {
            let width = tape.shape(b.q)[1];
            let split = [b.modality_split, width - b.modality_split];
            let q = tape.split(b.q, 1, &split)?;
            let k = tape.split(b.k, 1, &split)?;
            let k_rgb = tape.transpose(k[0])?;
            let k_d = tape.transpose(k[1])?;
            let rgb = tape.matmul(q[0], k_rgb)?;
            let d = tape.matmul(q[1], k_d)?;
            tape.add(rgb, d)
        }
    }
}

/// Row-softmax of `Q·Kᵀ / √d_k`, an `[HW, HW]` attention map.
pub fn intra_attention_scores(tape: &mut Tape, b: &QkvBundle, path: ScorePath) -> Result<Var> {
    let logits = attention_logits(tape, b, path)?;
    tape.softmax_rows(logits, 1.0 / libm::sqrt(b.d_k as f64))
}

/// Full IAM block: returns the mixed feature `Z` of shape `[C, 2HW]`.
pub fn iam_forward(tape: &mut Tape, f_rgb: Var, f_d: Var, p: &IamParams) -> Result<Var> {
    let f_rgbd = concat_modalities(tape, f_rgb, f_d)?;
    let bundle = qkv_project(tape, f_rgbd, p)?;
    let attn = intra_attention_scores(tape, &bundle, ScorePath::Full)?;
    let o = tape.matmul(attn, bundle.v)?;
    let g = inverse_modality_rows(tape, o)?;
    tape.conv1x1(g, p.w_out, p.b_out)
}
