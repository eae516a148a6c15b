use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    encode, head_forward, hungarian_match, input_tensors, match_cost, set_loss, BackboneOutput, HeadOutput,
    LossComponents, LossWeights, MatchResult, Model, ModelConfig, PredVars, Prediction, Target,
};
use crate::data::{annotate, Mask, mask_to_rle, AnnotateOptions, RleJson, SceneSample, Segmentation, Symmetry};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ApReport, Detection};
use crate::tensor::kernels::{sigmoid, softmax_rows};
use crate::tensor::{Bound, ParamStore, Tape, Tensor, Var};

/// One recorded forward pass.
pub struct Forward {
    pub tape: Tape,
    pub bound: Bound,
    pub backbone: BackboneOutput,
    pub head: HeadOutput,
}

impl Forward {
    pub fn prediction(&self) -> Prediction {
        Prediction {
            class_logits: self.tape.value(self.head.class_logits).clone(),
            boxes: self.tape.value(self.head.boxes).clone(),
            mask_logits: self.tape.value(self.head.mask_logits).clone(),
        }
    }
}

fn check_size(model: &Model, sample: &SceneSample) -> Result<()> {
    if (sample.height, sample.width) != model.cfg.input_size {
        let (h, w) = model.cfg.input_size;
        return Err(Error::Config(format!(
            "sample is {}x{}, model expects {h}x{w}",
            sample.height, sample.width
        )));
    }
    Ok(())
}

/// Records encoder and head for one sample on a fresh tape.
pub fn forward_sample(model: &Model, sample: &SceneSample) -> Result<Forward> {
    check_size(model, sample)?;
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let (rgb, depth) = input_tensors(sample);
    let rgb = tape.constant(rgb);
    let depth = tape.constant(depth);
    let backbone = encode(&mut tape, model, &bound, rgb, depth)?;
    let head = head_forward(&mut tape, model, &bound, &backbone)?;
    Ok(Forward {
        tape,
        bound,
        backbone,
        head,
    })
}

pub fn predict(model: &Model, sample: &SceneSample) -> Result<Prediction> {
    Ok(forward_sample(model, sample)?.prediction())
}

/// One detection per query. The score is the best real-class probability
/// times the mean foreground probability inside the mask; the mask is the
/// upsampled logit map above zero; the box is the predicted box in pixels.
pub fn predictions_to_detections(pred: &Prediction, image_id: u64, height: usize, width: usize) -> Result<Vec<Detection>> {
    let (q, k1) = pred.class_logits.dims2()?;
    let probs = softmax_rows(q, k1, 1.0, pred.class_logits.data());
    let logits = pred.upsampled_logits(height, width);
    let b = pred.boxes.data();
    let mut out = Vec::with_capacity(q);
    for (qi, map) in logits.data().chunks(height * width).enumerate() {
        let row = &probs[qi * k1..qi * k1 + k1 - 1];
        let (cls, prob) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        let (mut fg, mut n) = (0.0, 0usize);
        for &x in map.iter().filter(|&&x| x > 0.0) {
            fg += sigmoid(x);
            n += 1;
        }
        let maskness = if n > 0 { fg / n as f64 } else { 0.0 };
        let mask = Mask::from_bits(height, width, map.iter().map(|&x| x > 0.0).collect())?;
        let (cx, cy, w, h) = (b[qi * 4], b[qi * 4 + 1], b[qi * 4 + 2], b[qi * 4 + 3]);
        out.push(Detection {
            image_id,
            category_id: cls as u64 + 1,
            score: prob * maskness,
            bbox: [
                (cx - w / 2.0) * width as f64,
                (cy - h / 2.0) * height as f64,
                w * width as f64,
                h * height as f64,
            ],
            segmentation: Segmentation::Rle(RleJson::from(&mask_to_rle(&mask))),
        });
    }
    Ok(out)
}

/// Mask and box AP of the model on scenes annotated the same way as the training data.
pub fn evaluate_model(model: &Model, samples: &[SceneSample]) -> Result<ApReport> {
    let annotated = annotate(samples, &AnnotateOptions::default())?;
    let mut dets = Vec::new();
    for (i, &index) in annotated.kept.iter().enumerate() {
        let s = &samples[index];
        let pred = predict(model, s)?;
        dets.extend(predictions_to_detections(&pred, i as u64 + 1, s.height, s.width)?);
    }
    evaluate(&annotated.dataset, &dets)
}

/// Adaptive-moment optimiser state, one slot per parameter in store order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (i, (_, p)) in params.tensors_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].data();
            if g.len() != m.len() {
                return Err(Error::dim("Adam::update", grads[i].shape(), p.shape()));
            }
            if lr == 0.0 {
                continue;
            }
            let data = p.data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                data[j] -= lr * (m[j] / c1) / (libm::sqrt(v[j] / c2) + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    /// Samples per optimiser step (gradients are averaged).
    pub batch_size: usize,
    /// Epoch (0-based) from which the rate is multiplied by `decay_factor`;
    /// `None` means two thirds of the way through.
    pub decay_epoch: Option<usize>,
    pub decay_factor: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: Option<f64>,
    pub weights: LossWeights,
    /// Run validation after every epoch (otherwise only after the last).
    pub validate_every_epoch: bool,
    /// Apply a random flip or transpose to every training sample.
    pub augment: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 12,
            lr: 1e-3,
            batch_size: 4,
            decay_epoch: None,
            decay_factor: 0.1,
            clip_norm: Some(1.0),
            weights: LossWeights::default(),
            validate_every_epoch: true,
            augment: true,
        }
    }
}

impl TrainOptions {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decay = self.decay_epoch.unwrap_or(2 * self.epochs / 3);
        if epoch >= decay {
            self.lr * self.decay_factor
        } else {
            self.lr
        }
    }
}

/// Mean training loss and validation AP after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub components: LossComponents,
    pub ap50_seg: Option<f64>,
    pub ap50_det: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochRecord>,
    pub final_report: Option<ApReport>,
}

/// Loss and parameter gradients for one sample.
pub fn sample_loss(model: &Model, sample: &SceneSample, weights: &LossWeights) -> Result<(LossComponents, Vec<Tensor>)> {
    let mut fwd = forward_sample(model, sample)?;
    let pred = fwd.prediction();
    let grid = (pred.mask_logits.shape()[1], pred.mask_logits.shape()[2]);
    let target = Target::from_sample(sample, grid, model.cfg.num_classes)?;
    if target.len() > model.cfg.num_queries {
        return Err(Error::Config(format!(
            "{} instances exceed {} queries",
            target.len(),
            model.cfg.num_queries
        )));
    }
    let matching = if target.is_empty() {
        MatchResult {
            assignment: Vec::new(),
            total_cost: 0.0,
        }
    } else {
        let cost = match_cost(&pred, &target, weights)?;
        if cost.all_finite() {
            hungarian_match(&cost)?
        } else {
            // Keep going with a placeholder matching so the divergence report
            // carries the component values.
            MatchResult {
                assignment: (0..target.len()).collect(),
                total_cost: f64::NAN,
            }
        }
    };
    let tape = &mut fwd.tape;
    let (mut total, mut comps) = set_loss(tape, &PredVars::from(&fwd.head), &target, &matching, weights)?;
    if let Some(goal) = fwd.head.routed.aux_target {
        let goal = tape.value(goal).clone();
        let aux = relative_regression(tape, fwd.backbone.f_rgb_final, goal)?;
        comps.aux = tape.value(aux).item()?;
        let aux = tape.scale(aux, weights.aux);
        total = tape.add(total, aux)?;
        comps.total = tape.value(total).item()?;
    }
    if !comps.is_finite() {
        return Ok((comps, Vec::new()));
    }
    let grads = tape.backward(total)?;
    Ok((comps, fwd.bound.collect(&grads)))
}

/// Mean squared error divided by the goal's mean square, so the term keeps
/// the same scale however large the detached goal grows.
fn relative_regression(tape: &mut Tape, x: Var, goal: Tensor) -> Result<Var> {
    let data = goal.data();
    let power = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    let goal = tape.constant(goal);
    let d = tape.sub(x, goal)?;
    let sq = tape.mul(d, d)?;
    let mse = tape.mean(sq);
    Ok(tape.scale(mse, 1.0 / (power + 1e-12)))
}

fn components_detail(c: &LossComponents) -> alloc::string::String {
    let parts: Vec<_> = LossComponents::names()
        .iter()
        .zip(c.values())
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    parts.join(" ")
}

/// Seeded mini-batch training from the configuration's initial weights.
pub fn train(
    cfg: &ModelConfig,
    train_set: &[SceneSample],
    val_set: &[SceneSample],
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let max_instances = train_set.iter().map(|s| s.instance_masks.len()).max().unwrap_or(0);
    if train_set.is_empty() {
        return Err(Error::EmptyInput { op: "train" });
    }
    if max_instances > cfg.num_queries {
        return Err(Error::Config(format!(
            "num_queries {} is below the {max_instances} instances of some training image",
            cfg.num_queries
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut model = Model::init(cfg)?;
    let mut adam = Adam::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_u64);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace = Vec::with_capacity(opts.epochs);
    let mut final_report = None;
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let lr = opts.lr_at(epoch);
        let mut sum = LossComponents::default();
        for (batch, chunk) in order.chunks(opts.batch_size).enumerate() {
            let mut acc: Option<Vec<Vec<f64>>> = None;
            for &i in chunk {
                let sample = &train_set[i];
                let (comps, grads) = if opts.augment {
                    let choices = if sample.height == sample.width { 8 } else { 4 };
                    let sym = Symmetry::all()[rng.gen_range(0..choices)];
                    sample_loss(&model, &sample.transformed(sym)?, &opts.weights)?
                } else {
                    sample_loss(&model, sample, &opts.weights)?
                };
                if !comps.is_finite() {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        batch,
                        detail: components_detail(&comps),
                    });
                }
                let vals = comps.values();
                sum = LossComponents {
                    total: sum.total + vals[0],
                    class: sum.class + vals[1],
                    l1: sum.l1 + vals[2],
                    giou: sum.giou + vals[3],
                    dice: sum.dice + vals[4],
                    bce: sum.bce + vals[5],
                    aux: sum.aux + vals[6],
                };
                match &mut acc {
                    None => acc = Some(grads.iter().map(|g| g.data().to_vec()).collect()),
                    Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| {
                        a.iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                    }),
                }
            }
            let acc = acc.expect("chunks are non-empty");
            let scale = 1.0 / chunk.len() as f64;
            let mut norm_sq = 0.0;
            for a in acc.iter().flatten() {
                norm_sq += (a * scale) * (a * scale);
            }
            let clip = match opts.clip_norm {
                Some(c) if libm::sqrt(norm_sq) > c => c / libm::sqrt(norm_sq),
                _ => 1.0,
            };
            let grads: Vec<Tensor> = acc
                .into_iter()
                .zip(model.params.iter())
                .map(|(a, (_, p))| Tensor::from_vec(p.shape(), a.into_iter().map(|x| x * scale * clip).collect()))
                .collect::<Result<_>>()?;
            adam.update(&mut model.params, &grads, lr)?;
        }
        let n = train_set.len() as f64;
        let mean = LossComponents {
            total: sum.total / n,
            class: sum.class / n,
            l1: sum.l1 / n,
            giou: sum.giou / n,
            dice: sum.dice / n,
            bce: sum.bce / n,
            aux: sum.aux / n,
        };
        let last = epoch + 1 == opts.epochs;
        let report = if !val_set.is_empty() && (opts.validate_every_epoch || last) {
            Some(evaluate_model(&model, val_set)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: mean.total,
            components: mean,
            ap50_seg: report.as_ref().and_then(|r| r.segm.ap50),
            ap50_det: report.as_ref().and_then(|r| r.bbox.ap50),
        };
        on_epoch(&record);
        trace.push(record);
        if last {
            final_report = report;
        }
    }
    Ok(TrainOutcome {
        model,
        trace,
        final_report,
    })
}
