use alloc::format;
use alloc::vec::Vec;

use super::{ConvParams, FusionKind, Model};
use crate::data::SceneSample;
use crate::error::{Error, Result};
use crate::fusion::{
    cdf_forward, concat_modalities, fuse_baseline, iam_forward, AttentionParams, BaselineKind, BaselineOutput,
    BaselineParams, CdfParams, IamParams, MergeParams,
};
use crate::tensor::{Bound, Tape, Tensor, Var};

/// Per-stage encoder features after any fusion at that stage.
#[derive(Clone, Debug)]
pub struct BackboneOutput {
    pub rgb: Vec<Var>,
    /// Depth stream per stage; `None` when no depth stream runs.
    pub depth: Vec<Option<Var>>,
    /// Fused map per stage: the block's aggregate where one ran, else the
    /// stream sum, else the RGB map itself.
    pub agg: Vec<Var>,
    /// Channel weights of CDF blocks.
    pub gates: Vec<Option<Var>>,
    pub f_rgb_final: Var,
    pub f_agg_final: Var,
}

/// `rgb[3, H, W]` scaled to `[0, 1]` and `depth[1, H, W]` min-max normalised per image.
pub fn input_tensors(sample: &SceneSample) -> (Tensor, Tensor) {
    let hw = sample.height * sample.width;
    let shape = [3, sample.height, sample.width];
    let rgb = Tensor::from_fn(&shape, |i| {
        let (c, p) = (i / hw, i % hw);
        sample.rgb[3 * p + c] as f64 / 255.0
    });
    let lo = sample.depth.iter().copied().min().unwrap_or(0) as f64;
    let hi = sample.depth.iter().copied().max().unwrap_or(0) as f64;
    let span = hi - lo;
    let depth = Tensor::from_fn(&[1, sample.height, sample.width], |i| {
        if span > 0.0 {
            (sample.depth[i] as f64 - lo) / span
        } else {
            0.0
        }
    });
    (rgb, depth)
}

fn stage(tape: &mut Tape, x: Var, p: &ConvParams, stride: usize) -> Result<Var> {
    let y = tape.conv2d(x, p.w, p.b, stride, 1)?;
    Ok(tape.relu(y))
}

/// Columns `[.., start, start + hw)` of a `[C, 2HW]` map, reshaped to `[C, H, W]`.
fn half_map(tape: &mut Tape, z: Var, start: usize, shape: &[usize]) -> Result<Var> {
    let hw = shape[1] * shape[2];
    let part = tape.slice(z, 1, start, hw)?;
    tape.reshape(part, shape)
}

struct StageFusion {
    f_rgb: Var,
    f_d: Var,
    agg: Var,
    gate: Option<Var>,
}

fn fuse_stage(tape: &mut Tape, kind: FusionKind, bound: &Bound, prefix: &str, f_rgb: Var, f_d: Var) -> Result<StageFusion> {
    let shape = tape.shape(f_rgb).to_vec();
    match kind {
        FusionKind::Iam => {
            let p = IamParams::bind(bound, &format!("{prefix}.iam"))?;
            let z = iam_forward(tape, f_rgb, f_d, &p)?;
            let z_rgb = half_map(tape, z, 0, &shape)?;
            let z_d = half_map(tape, z, shape[1] * shape[2], &shape)?;
            let f_rgb = tape.add(f_rgb, z_rgb)?;
            let f_d = tape.add(f_d, z_d)?;
            let agg = tape.add(f_rgb, f_d)?;
            Ok(StageFusion { f_rgb, f_d, agg, gate: None })
        }
        FusionKind::Cdf | FusionKind::IamCdf => {
            let z = if kind == FusionKind::IamCdf {
                let p = IamParams::bind(bound, &format!("{prefix}.iam"))?;
                iam_forward(tape, f_rgb, f_d, &p)?
            } else {
                concat_modalities(tape, f_rgb, f_d)?
            };
            let p = CdfParams::bind(bound, &format!("{prefix}.cdf"))?;
            let out = cdf_forward(tape, z, f_rgb, f_d, &p)?;
            Ok(StageFusion {
                f_rgb: out.f_rgb,
                f_d: out.f_d,
                agg: out.f_agg,
                gate: Some(out.w_n),
            })
        }
        FusionKind::Intra | FusionKind::Inter => {
            let params = BaselineParams::Attention {
                rgb: AttentionParams::bind(bound, &format!("{prefix}.rgb"))?,
                depth: AttentionParams::bind(bound, &format!("{prefix}.depth"))?,
            };
            let baseline = if kind == FusionKind::Intra { BaselineKind::Intra } else { BaselineKind::Inter };
            match fuse_baseline(tape, baseline, f_rgb, f_d, &params)? {
                BaselineOutput::Pair { f_rgb, f_d } => {
                    let agg = tape.add(f_rgb, f_d)?;
                    Ok(StageFusion { f_rgb, f_d, agg, gate: None })
                }
                BaselineOutput::Single(_) => Err(Error::contract("attention fusion returned a single map")),
            }
        }
        other => Err(Error::Config(format!("{other} has no per-stage block"))),
    }
}

/// Runs both streams over recorded inputs with parameters already bound to `tape`.
pub fn encode(tape: &mut Tape, model: &Model, bound: &Bound, rgb: Var, depth: Var) -> Result<BackboneOutput> {
    let cfg = &model.cfg;
    let kind = cfg.fusion_kind;
    let mut x = rgb;
    if kind == FusionKind::Early {
        let merge = BaselineParams::Merge(MergeParams::bind(bound, "early")?);
        x = match fuse_baseline(tape, BaselineKind::Early, rgb, depth, &merge)? {
            BaselineOutput::Single(v) => v,
            BaselineOutput::Pair { .. } => return Err(Error::contract("early fusion returned a pair")),
        };
    }
    let mut d = kind.uses_depth_stream().then_some(depth);
    let mut out = BackboneOutput {
        rgb: Vec::new(),
        depth: Vec::new(),
        agg: Vec::new(),
        gates: Vec::new(),
        f_rgb_final: x,
        f_agg_final: x,
    };
    for (i, spec) in cfg.blocks.iter().enumerate() {
        x = stage(tape, x, &ConvParams::bind(bound, &format!("rgb.s{}", i + 1))?, spec.stride)?;
        if let Some(dv) = d {
            d = Some(stage(tape, dv, &ConvParams::bind(bound, &format!("depth.s{}", i + 1))?, spec.stride)?);
        }
        let mut agg = None;
        let mut gate = None;
        if let (true, Some(dv)) = (cfg.fuses_at(i), d) {
            let fused = fuse_stage(tape, kind, bound, &format!("fuse.s{}", i + 1), x, dv)?;
            x = fused.f_rgb;
            d = Some(fused.f_d);
            agg = Some(fused.agg);
            gate = fused.gate;
        }
        let agg = match (agg, d) {
            (Some(a), _) => a,
            (None, Some(dv)) => tape.add(x, dv)?,
            (None, None) => x,
        };
        out.rgb.push(x);
        out.depth.push(d);
        out.agg.push(agg);
        out.gates.push(gate);
    }
    out.f_rgb_final = x;
    out.f_agg_final = out.agg[3];
    if kind == FusionKind::Late {
        let merge = BaselineParams::Merge(MergeParams::bind(bound, "late")?);
        let dv = d.ok_or_else(|| Error::contract("late fusion without a depth stream"))?;
        if let BaselineOutput::Single(v) = fuse_baseline(tape, BaselineKind::Late, x, dv, &merge)? {
            out.f_agg_final = v;
            out.agg[3] = v;
        }
    }
    Ok(out)
}

/// Binds the model's parameters to `tape` and encodes one sample.
pub fn backbone_forward(tape: &mut Tape, model: &Model, sample: &SceneSample) -> Result<BackboneOutput> {
    if (sample.height, sample.width) != model.cfg.input_size {
        let (h, w) = model.cfg.input_size;
        return Err(Error::Config(format!(
            "sample is {}x{}, model expects {h}x{w}",
            sample.height, sample.width
        )));
    }
    let bound = model.params.bind(tape);
    let (rgb, depth) = input_tensors(sample);
    let rgb = tape.constant(rgb);
    let depth = tape.constant(depth);
    encode(tape, model, &bound, rgb, depth)
}
