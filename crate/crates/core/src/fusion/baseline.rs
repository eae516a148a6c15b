use core::str::FromStr;

use alloc::format;

use super::aligned_dims;
use super::iam::half_channels;
use crate::error::{Error, Result};
use crate::tensor::{param_block, Tape, Tensor, Var};

/// Reference fusion designs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BaselineKind {
    /// Channel concat at the input, projected back to the RGB width once.
    Early,
    /// Independent streams merged by concat + projection after the last stage.
    Late,
    /// Each modality attends only to itself.
    Intra,
    /// Each modality's queries attend to the other modality.
    Inter,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(BaselineKind::Early),
            "late" => Ok(BaselineKind::Late),
            "intra" => Ok(BaselineKind::Intra),
            "inter" => Ok(BaselineKind::Inter),
            other => Err(Error::contract(format!("unknown baseline fusion kind {other:?}"))),
        }
    }
}

param_block! {
    /// Concat + pointwise projection `[C_out, C_rgb + C_d]`.
    MergeWeights => MergeParams { w, b }
}

impl MergeWeights {
    pub fn init<R: rand::Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        MergeWeights {
            w: Tensor::init_fan_in(&[out_channels, in_channels], in_channels, rng),
            b: Tensor::zeros(&[out_channels]),
        }
    }
}

param_block! {
    /// Single-head attention projections for one modality over `C` channels.
    AttentionWeights => AttentionParams { w_q, b_q, w_k, b_k, w_v, b_v, w_out, b_out }
}

impl AttentionWeights {
    pub fn init<R: rand::Rng + ?Sized>(channels: usize, rng: &mut R) -> Result<Self> {
        let half = half_channels(channels)?;
        let proj = |rng: &mut R| Tensor::init_fan_in(&[half, channels], channels, rng);
        Ok(AttentionWeights {
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

#[derive(Clone, Copy, Debug)]
pub enum BaselineParams {
    Merge(MergeParams),
    Attention {
        rgb: AttentionParams,
        depth: AttentionParams,
    },
}

#[derive(Clone, Copy, Debug)]
pub enum BaselineOutput {
    Single(Var),
    Pair { f_rgb: Var, f_d: Var },
}

/// `[HW, C/2]` position rows of a pointwise projection.
fn rows(tape: &mut Tape, f: Var, w: Var, b: Var) -> Result<Var> {
    let (_, h, wd) = super::feature_dims(tape, "attention", f)?;
    let c = tape.shape(f)[0];
    let flat = tape.reshape(f, &[c, h * wd])?;
    let g = tape.conv1x1(flat, w, b)?;
    tape.transpose(g)
}

/// `f_q + W_out·softmax(Q Kᵀ/√d)·V` with queries from `f_q` and keys/values
/// from `f_kv`, projections taken from `q_side` and `kv_side`.
fn attend(
    tape: &mut Tape,
    f_q: Var,
    f_kv: Var,
    q_side: &AttentionParams,
    kv_side: &AttentionParams,
) -> Result<Var> {
    let shape = tape.shape(f_q).to_vec();
    let q = rows(tape, f_q, q_side.w_q, q_side.b_q)?;
    let k = rows(tape, f_kv, kv_side.w_k, kv_side.b_k)?;
    let v = rows(tape, f_kv, kv_side.w_v, kv_side.b_v)?;
    let d_k = tape.shape(q)[1];
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let attn = tape.softmax_rows(logits, 1.0 / libm::sqrt(d_k as f64))?;
    let o = tape.matmul(attn, v)?;
    let ot = tape.transpose(o)?;
    let back = tape.conv1x1(ot, q_side.w_out, q_side.b_out)?;
    let back = tape.reshape(back, &shape)?;
    tape.add(f_q, back)
}

pub fn fuse_baseline(
    tape: &mut Tape,
    kind: BaselineKind,
    f_rgb: Var,
    f_d: Var,
    params: &BaselineParams,
) -> Result<BaselineOutput> {
    match (kind, params) {
        (BaselineKind::Early | BaselineKind::Late, BaselineParams::Merge(p)) => {
            let (rs, ds) = (tape.shape(f_rgb), tape.shape(f_d));
            if rs.len() != 3 || ds.len() != 3 || rs[1..] != ds[1..] {
                return Err(Error::dim("fuse_baseline", rs, ds));
            }
            let stacked = tape.concat(&[f_rgb, f_d], 0)?;
            Ok(BaselineOutput::Single(tape.conv1x1(stacked, p.w, p.b)?))
        }
        (BaselineKind::Intra, BaselineParams::Attention { rgb, depth }) => {
            aligned_dims(tape, "fuse_baseline", f_rgb, f_d)?;
            Ok(BaselineOutput::Pair {
                f_rgb: attend(tape, f_rgb, f_rgb, rgb, rgb)?,
                f_d: attend(tape, f_d, f_d, depth, depth)?,
            })
        }
        (BaselineKind::Inter, BaselineParams::Attention { rgb, depth }) => {
            aligned_dims(tape, "fuse_baseline", f_rgb, f_d)?;
            Ok(BaselineOutput::Pair {
                f_rgb: attend(tape, f_rgb, f_d, rgb, depth)?,
                f_d: attend(tape, f_d, f_rgb, depth, rgb)?,
            })
        }
        (kind, _) => Err(Error::contract(format!(
            "{kind:?} fusion given parameters of the wrong family"
        ))),
    }
}
