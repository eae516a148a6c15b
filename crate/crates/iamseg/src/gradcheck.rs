//! Finite-difference verification of the differentiable building blocks.

use std::fmt;
use std::str::FromStr;

use iamseg_core::fusion::{cdf_forward, iam_forward, CdfParams, CdfWeights, IamParams, IamWeights};
use iamseg_core::model::{hungarian_match, match_cost, set_loss, LossWeights, PredVars, Prediction, Target};
use iamseg_core::tensor::gradient_check;
use iamseg_core::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
pub const TRIALS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradModule {
    Matmul,
    SoftmaxRows,
    Conv1x1,
    Iam,
    Cdf,
    SetLoss,
}

impl GradModule {
    pub const ALL: [GradModule; 6] = [
        GradModule::Matmul,
        GradModule::SoftmaxRows,
        GradModule::Conv1x1,
        GradModule::Iam,
        GradModule::Cdf,
        GradModule::SetLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradModule::Matmul => "matmul",
            GradModule::SoftmaxRows => "softmax_rows",
            GradModule::Conv1x1 => "conv1x1",
            GradModule::Iam => "iam",
            GradModule::Cdf => "cdf",
            GradModule::SetLoss => "set_loss",
        }
    }
}

impl fmt::Display for GradModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradModule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        GradModule::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown module {s:?}"))
    }
}

/// `Σ x ⊙ R` for a fixed random `R`, so every output coordinate matters.
fn weighted_sum(t: &mut Tape, x: Var, weights: &Tensor) -> Result<Var> {
    let r = t.constant(weights.clone());
    let p = t.mul(x, r)?;
    Ok(t.sum(p))
}

fn rand(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

fn iam_params(v: &[Var]) -> IamParams {
    IamParams {
        w_q: v[2],
        b_q: v[3],
        w_k: v[4],
        b_k: v[5],
        w_v: v[6],
        b_v: v[7],
        w_out: v[8],
        b_out: v[9],
    }
}

/// Feature maps followed by the IAM weights, all leaves of the check.
fn iam_inputs(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Tensor>> {
    let wt = IamWeights::init(c, rng)?;
    Ok(vec![
        rand(&[c, h, w], rng),
        rand(&[c, h, w], rng),
        wt.w_q,
        rand(&[c / 2], rng),
        wt.w_k,
        rand(&[c / 2], rng),
        wt.w_v,
        rand(&[c / 2], rng),
        wt.w_out,
        rand(&[c], rng),
    ])
}

fn random_target(rng: &mut ChaCha8Rng, g: usize, classes: usize, grid: usize) -> Result<Target> {
    let boxes = (0..g)
        .map(|_| {
            let w = rng.gen_range(0.1..0.5);
            let h = rng.gen_range(0.1..0.5);
            [rng.gen_range(w / 2.0..1.0 - w / 2.0), rng.gen_range(h / 2.0..1.0 - h / 2.0), w, h]
        })
        .collect();
    let masks = (0..g * grid * grid)
        .map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..1.0) } else { 0.0 })
        .collect();
    Ok(Target {
        classes: (0..g).map(|_| rng.gen_range(0..classes)).collect(),
        boxes,
        masks,
        grid: (grid, grid),
    })
}

/// Largest relative error of one seeded trial.
pub fn check_trial(module: GradModule, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    match module {
        GradModule::Matmul => {
            let (m, k, n) = (r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..6));
            let inputs = [rand(&[m, k], r), rand(&[k, n], r)];
            let wts = rand(&[m, n], r);
            gradient_check(
                |t: &mut Tape, v: &[Var]| {
                    let y = t.matmul(v[0], v[1])?;
                    weighted_sum(t, y, &wts)
                },
                &inputs,
                STEP,
            )
        }
        GradModule::SoftmaxRows => {
            let (m, n) = (r.gen_range(1..5), r.gen_range(2..7));
            let inputs = [Tensor::uniform(&[m, n], 3.0, r)];
            let wts = rand(&[m, n], r);
            let scale = r.gen_range(0.25..2.0);
            gradient_check(
                |t: &mut Tape, v: &[Var]| {
                    let y = t.softmax_rows(v[0], scale)?;
                    weighted_sum(t, y, &wts)
                },
                &inputs,
                STEP,
            )
        }
        GradModule::Conv1x1 => {
            let (ci, co, h, w) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..4), r.gen_range(1..4));
            let inputs = [rand(&[ci, h, w], r), rand(&[co, ci], r), rand(&[co], r)];
            let wts = rand(&[co, h, w], r);
            gradient_check(
                |t: &mut Tape, v: &[Var]| {
                    let y = t.conv1x1(v[0], v[1], v[2])?;
                    weighted_sum(t, y, &wts)
                },
                &inputs,
                STEP,
            )
        }
        GradModule::Iam => {
            let c = 2 * r.gen_range(1..4);
            let (h, w) = (r.gen_range(1..4), r.gen_range(1..4));
            let inputs = iam_inputs(c, h, w, r)?;
            // The mixed map keeps both modalities side by side: [C, 2HW].
            let wts = rand(&[c, 2 * h * w], r);
            gradient_check(
                |t: &mut Tape, v: &[Var]| {
                    let z = iam_forward(t, v[0], v[1], &iam_params(v))?;
                    weighted_sum(t, z, &wts)
                },
                &inputs,
                STEP,
            )
        }
        GradModule::Cdf => {
            let c = 2 * r.gen_range(1..4);
            let (h, w) = (r.gen_range(1..4), r.gen_range(1..4));
            let mut inputs = iam_inputs(c, h, w, r)?;
            let cw = CdfWeights::init(c, r);
            inputs.extend([cw.w_gate, rand(&[c], r), cw.w_agg, rand(&[c], r)]);
            let mut wts: Vec<Tensor> = (0..3).map(|_| rand(&[c, h, w], r)).collect();
            wts.push(rand(&[c], r));
            gradient_check(
                |t: &mut Tape, v: &[Var]| {
                    let z = iam_forward(t, v[0], v[1], &iam_params(v))?;
                    let p = CdfParams {
                        w_gate: v[10],
                        b_gate: v[11],
                        w_agg: v[12],
                        b_agg: v[13],
                    };
                    let out = cdf_forward(t, z, v[0], v[1], &p)?;
                    let mut total = weighted_sum(t, out.w_n, &wts[3])?;
                    for (part, wt) in [out.f_rgb, out.f_d, out.f_agg].into_iter().zip(&wts) {
                        let s = weighted_sum(t, part, wt)?;
                        total = t.add(total, s)?;
                    }
                    Ok(total)
                },
                &inputs,
                STEP,
            )
        }
        GradModule::SetLoss => {
            let (q, classes, grid) = (6, 2, 4);
            let g = r.gen_range(1..4);
            let target = random_target(r, g, classes, grid)?;
            let pred = Prediction {
                class_logits: Tensor::uniform(&[q, classes + 1], 2.0, r),
                boxes: Tensor::from_fn(&[q, 4], |_| r.gen_range(0.2..0.8)),
                mask_logits: Tensor::uniform(&[q, grid, grid], 2.0, r),
            };
            let weights = LossWeights::default();
            let matching = hungarian_match(&match_cost(&pred, &target, &weights)?)?;
            let inputs = [pred.class_logits, pred.boxes, pred.mask_logits];
            gradient_check(
                |t: &mut Tape, v: &[Var]| {
                    let vars = PredVars {
                        class_logits: v[0],
                        boxes: v[1],
                        mask_logits: v[2],
                    };
                    Ok(set_loss(t, &vars, &target, &matching, &weights)?.0)
                },
                &inputs,
                STEP,
            )
        }
    }
}

/// Seed of trial `i` for a run seed.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(trial as u64)
}

/// Worst error over `trials` seeded trials.
pub fn check_module(module: GradModule, seed: u64, trials: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        worst = worst.max(check_trial(module, trial_seed(seed, i))?);
    }
    Ok(worst)
}
