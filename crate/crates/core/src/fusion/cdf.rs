use super::aligned_dims;
use crate::error::{Error, Result};
use crate::tensor::{param_block, Tape, Tensor, Var};

param_block! {
    /// Channel-wise Dynamic Fusion learnables: a `[C, C]` gate projection
    /// applied to the mixed feature and a `[C, 2C]` aggregation projection.
    CdfWeights => CdfParams { w_gate, b_gate, w_agg, b_agg }
}

impl CdfWeights {
    pub fn init<R: rand::Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        CdfWeights {
            w_gate: Tensor::init_fan_in(&[channels, channels], channels, rng),
            b_gate: Tensor::zeros(&[channels]),
            w_agg: Tensor::init_fan_in(&[channels, 2 * channels], 2 * channels, rng),
            b_agg: Tensor::zeros(&[channels]),
        }
    }
}

/// Outputs of a CDF block; all maps share the block input's `[C, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    /// `(W_n ⊙ F_rgb + F_rgb) / 2`
    pub f_rgb: Var,
    /// `((1 − W_n) ⊙ F_d + F_d) / 2`
    pub f_d: Var,
    /// Pointwise projection of the channel-concatenated ReLU'd streams.
    pub f_agg: Var,
    /// Per-channel weights in `(0, 1)`, shape `[C]`.
    pub w_n: Var,
}

pub fn cdf_forward(tape: &mut Tape, z: Var, f_rgb: Var, f_d: Var, p: &CdfParams) -> Result<FusionOutput> {
    let (c, h, w) = aligned_dims(tape, "cdf_forward", f_rgb, f_d)?;
    if tape.shape(z) != [c, 2 * h * w] {
        return Err(Error::dim("cdf_forward", tape.shape(z), tape.shape(f_rgb)));
    }
    let gate = tape.conv1x1(z, p.w_gate, p.b_gate)?;
    let pooled = tape.global_avg_pool(gate)?;
    let w_n = tape.sigmoid(pooled);

    let weighted_rgb = tape.mul_channel(f_rgb, w_n)?;
    let sum_rgb = tape.add(weighted_rgb, f_rgb)?;
    let new_rgb = tape.scale(sum_rgb, 0.5);

    let neg = tape.scale(w_n, -1.0);
    let w_depth = tape.add_scalar(neg, 1.0);
    let weighted_d = tape.mul_channel(f_d, w_depth)?;
    let sum_d = tape.add(weighted_d, f_d)?;
    let new_d = tape.scale(sum_d, 0.5);

    let relu_rgb = tape.relu(new_rgb);
    let relu_d = tape.relu(new_d);
    let stacked = tape.concat(&[relu_rgb, relu_d], 0)?;
    let f_agg = tape.conv1x1(stacked, p.w_agg, p.b_agg)?;

    Ok(FusionOutput {
        f_rgb: new_rgb,
        f_d: new_d,
        f_agg,
        w_n,
    })
}
