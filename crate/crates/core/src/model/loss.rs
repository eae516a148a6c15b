use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{HeadOutput, MatchResult, Prediction};
use crate::data::SceneSample;
use crate::error::{Error, Result};
use crate::tensor::kernels::{sigmoid, softmax_rows, softplus};
use crate::tensor::{Tape, Tensor, Var};

/// Term weights for matching and the set loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub class: f64,
    pub l1: f64,
    pub giou: f64,
    pub mask: f64,
    /// Cross-entropy weight of queries supervised towards "no object".
    pub no_object: f64,
    /// Weight of the RGB-to-aggregate feature regression (design D only).
    pub aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            class: 1.0,
            l1: 5.0,
            giou: 2.0,
            mask: 1.0,
            no_object: 0.1,
            aux: 1.0,
        }
    }
}

/// Unweighted loss terms plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub class: f64,
    pub l1: f64,
    /// Mean `1 − GIoU` over matched pairs.
    pub giou: f64,
    pub dice: f64,
    pub bce: f64,
    pub aux: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn names() -> [&'static str; 7] {
        ["total", "class", "l1", "giou", "dice", "bce", "aux"]
    }

    pub fn values(&self) -> [f64; 7] {
        [self.total, self.class, self.l1, self.giou, self.dice, self.bce, self.aux]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// Ground truth for one image in head coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    /// Class index `0..num_classes` (category id minus one).
    pub classes: Vec<usize>,
    /// Normalised `(cx, cy, w, h)`.
    pub boxes: Vec<[f64; 4]>,
    /// Row-major `[G, h', w']` mask coverage fractions at the head's mask resolution.
    pub masks: Vec<f64>,
    /// `(h', w')`.
    pub grid: (usize, usize),
}

impl Target {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Converts a sample's instances; empty masks are skipped.
    pub fn from_sample(sample: &SceneSample, grid: (usize, usize), num_classes: usize) -> Result<Self> {
        let (gh, gw) = grid;
        let (h, w) = (sample.height, sample.width);
        let mut classes = Vec::new();
        let mut boxes = Vec::new();
        let mut masks = Vec::new();
        for (i, mask) in sample.instance_masks.iter().enumerate() {
            let Some([x, y, bw, bh]) = mask.tight_box() else { continue };
            let cat = sample.categories[i];
            if cat == 0 || cat as usize > num_classes {
                return Err(Error::contract(format!(
                    "category {cat} outside 1..={num_classes}"
                )));
            }
            classes.push(cat as usize - 1);
            boxes.push([
                (x + bw / 2.0) / w as f64,
                (y + bh / 2.0) / h as f64,
                bw / w as f64,
                bh / h as f64,
            ]);
            masks.extend(area_downsample(mask.bits(), (h, w), grid));
        }
        Ok(Target {
            classes,
            boxes,
            masks,
            grid: (gh, gw),
        })
    }
}

/// Fraction of each output cell covered, assigning source pixels by their centres.
fn area_downsample(bits: &[bool], (h, w): (usize, usize), (gh, gw): (usize, usize)) -> Vec<f64> {
    let mut sum = vec![0.0; gh * gw];
    let mut count = vec![0.0; gh * gw];
    for r in 0..h {
        let gr = r * gh / h;
        for c in 0..w {
            let cell = gr * gw + c * gw / w;
            count[cell] += 1.0;
            if bits[r * w + c] {
                sum[cell] += 1.0;
            }
        }
    }
    sum.iter().zip(&count).map(|(s, n)| if *n > 0.0 { s / n } else { 0.0 }).collect()
}

fn corners(b: &[f64; 4]) -> [f64; 4] {
    [b[0] - b[2] / 2.0, b[1] - b[3] / 2.0, b[0] + b[2] / 2.0, b[1] + b[3] / 2.0]
}

/// Generalised IoU of two `(cx, cy, w, h)` boxes with positive area.
pub fn giou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let [ax1, ay1, ax2, ay2] = corners(a);
    let [bx1, by1, bx2, by2] = corners(b);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    let hull = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    inter / union - (hull - union) / hull
}

fn dice_bce(logits: &[f64], target: &[f64]) -> (f64, f64) {
    let mut inter = 0.0;
    let mut ps = 0.0;
    let mut ts = 0.0;
    let mut bce = 0.0;
    for (&x, &t) in logits.iter().zip(target) {
        let p = sigmoid(x);
        inter += p * t;
        ps += p;
        ts += t;
        bce += softplus(x) - x * t;
    }
    (1.0 - (2.0 * inter + 1.0) / (ps + ts + 1.0), bce / logits.len() as f64)
}

/// Pairwise matching cost `[G × Q]`: negative class probability, weighted box
/// L1 and negative GIoU, and dice plus BCE between mask logits and targets.
pub fn match_cost(pred: &Prediction, target: &Target, weights: &LossWeights) -> Result<Tensor> {
    let (q, k1) = pred.class_logits.dims2()?;
    let g = target.len();
    let probs = softmax_rows(q, k1, 1.0, pred.class_logits.data());
    let ms = pred.mask_logits.shape();
    let cells = ms[1] * ms[2];
    if [target.grid.0, target.grid.1] != ms[1..] {
        return Err(Error::dim("match_cost", &[g, target.grid.0, target.grid.1], ms));
    }
    if g == 0 {
        return Err(Error::EmptyInput { op: "match_cost" });
    }
    let mut out = vec![0.0; g * q];
    for gi in 0..g {
        let tb = &target.boxes[gi];
        let tm = &target.masks[gi * cells..(gi + 1) * cells];
        for qi in 0..q {
            let b = pred.boxes.data();
            let pb = [b[qi * 4], b[qi * 4 + 1], b[qi * 4 + 2], b[qi * 4 + 3]];
            let l1: f64 = pb.iter().zip(tb).map(|(a, b)| (a - b).abs()).sum();
            let (dice, bce) = dice_bce(&pred.mask_logits.data()[qi * cells..(qi + 1) * cells], tm);
            out[gi * q + qi] = -weights.class * probs[qi * k1 + target.classes[gi]]
                + weights.l1 * l1
                - weights.giou * giou(&pb, tb)
                + weights.mask * (dice + bce);
        }
    }
    Tensor::from_vec(&[g, q], out)
}

/// Handles to the head outputs the loss differentiates through.
#[derive(Clone, Copy, Debug)]
pub struct PredVars {
    pub class_logits: Var,
    pub boxes: Var,
    pub mask_logits: Var,
}

impl From<&HeadOutput> for PredVars {
    fn from(h: &HeadOutput) -> Self {
        PredVars {
            class_logits: h.class_logits,
            boxes: h.boxes,
            mask_logits: h.mask_logits,
        }
    }
}

fn column(tape: &mut Tape, x: Var, i: usize) -> Result<Var> {
    tape.slice(x, 1, i, 1)
}

/// Per-row GIoU of two `[G, 4]` box sets on the tape, as `[G, 1]`.
fn giou_rows(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let edges = |t: &mut Tape, x: Var| -> Result<[Var; 6]> {
        let cx = column(t, x, 0)?;
        let cy = column(t, x, 1)?;
        let w = column(t, x, 2)?;
        let h = column(t, x, 3)?;
        let hw = t.scale(w, 0.5);
        let hh = t.scale(h, 0.5);
        Ok([t.sub(cx, hw)?, t.sub(cy, hh)?, t.add(cx, hw)?, t.add(cy, hh)?, w, h])
    };
    let [ax1, ay1, ax2, ay2, aw, ah] = edges(tape, a)?;
    let [bx1, by1, bx2, by2, bw, bh] = edges(tape, b)?;
    let span = |t: &mut Tape, lo1, lo2, hi1, hi2, inner: bool| -> Result<Var> {
        let (hi, lo) = if inner {
            (t.minimum(hi1, hi2)?, t.maximum(lo1, lo2)?)
        } else {
            (t.maximum(hi1, hi2)?, t.minimum(lo1, lo2)?)
        };
        t.sub(hi, lo)
    };
    let iw = span(tape, ax1, bx1, ax2, bx2, true)?;
    let ih = span(tape, ay1, by1, ay2, by2, true)?;
    let iw = tape.relu(iw);
    let ih = tape.relu(ih);
    let inter = tape.mul(iw, ih)?;
    let area_a = tape.mul(aw, ah)?;
    let area_b = tape.mul(bw, bh)?;
    let sum = tape.add(area_a, area_b)?;
    let union = tape.sub(sum, inter)?;
    let hw = span(tape, ax1, bx1, ax2, bx2, false)?;
    let hh = span(tape, ay1, by1, ay2, by2, false)?;
    let hull = tape.mul(hw, hh)?;
    let iou = tape.div(inter, union)?;
    let gap = tape.sub(hull, union)?;
    let penalty = tape.div(gap, hull)?;
    tape.sub(iou, penalty)
}

/// Weighted set loss for one image under a fixed matching.
///
/// Unmatched queries are pushed towards the "no object" class; box and mask
/// terms only cover matched pairs.
pub fn set_loss(
    tape: &mut Tape,
    pred: &PredVars,
    target: &Target,
    matching: &MatchResult,
    weights: &LossWeights,
) -> Result<(Var, LossComponents)> {
    let (q, k1) = match tape.shape(pred.class_logits) {
        [q, k] => (*q, *k),
        s => return Err(Error::dim("set_loss", s, &[0, 0])),
    };
    let g = target.len();
    if matching.assignment.len() != g {
        return Err(Error::contract(format!(
            "matching covers {} instances, target has {g}",
            matching.assignment.len()
        )));
    }
    if matching.assignment.iter().any(|&a| a >= q) {
        return Err(Error::contract("matching refers to a query that does not exist"));
    }
    let no_object = k1 - 1;
    let mut select = vec![0.0; q * k1];
    let mut weight_sum = 0.0;
    for (qi, gi) in matching.query_targets(q).into_iter().enumerate() {
        let (cls, w) = match gi {
            Some(gi) => (target.classes[gi], 1.0),
            None => (no_object, weights.no_object),
        };
        select[qi * k1 + cls] = w;
        weight_sum += w;
    }
    let logp = tape.log_softmax_rows(pred.class_logits)?;
    let select = tape.constant(Tensor::from_vec(&[q, k1], select)?);
    let picked = tape.mul(logp, select)?;
    let picked = tape.sum(picked);
    let ce = tape.scale(picked, -1.0 / weight_sum);
    let mut comps = LossComponents {
        class: tape.value(ce).item()?,
        ..LossComponents::default()
    };
    let mut total = tape.scale(ce, weights.class);

    if g > 0 {
        let rows = &matching.assignment;
        let boxes = tape.gather_rows(pred.boxes, rows)?;
        let flat: Vec<f64> = target.boxes.iter().flatten().copied().collect();
        let tb = tape.constant(Tensor::from_vec(&[g, 4], flat)?);
        let diff = tape.sub(boxes, tb)?;
        let diff = tape.abs(diff);
        let l1 = tape.sum(diff);
        let l1 = tape.scale(l1, 1.0 / g as f64);

        let gi = giou_rows(tape, boxes, tb)?;
        let gi = tape.mean(gi);
        let giou_term = tape.scale(gi, -1.0);
        let giou_term = tape.add_scalar(giou_term, 1.0);

        let ms = tape.shape(pred.mask_logits).to_vec();
        let cells = ms[1] * ms[2];
        if [target.grid.0, target.grid.1] != ms[1..] || target.masks.len() != g * cells {
            return Err(Error::dim("set_loss", &[g, target.grid.0, target.grid.1], &ms));
        }
        let flat = tape.reshape(pred.mask_logits, &[q, cells])?;
        let logits = tape.gather_rows(flat, rows)?;
        let tm = tape.constant(Tensor::from_vec(&[g, cells], target.masks.clone())?);
        let probs = tape.sigmoid(logits);
        let ones = tape.constant(Tensor::ones(&[cells, 1]));
        let pt = tape.mul(probs, tm)?;
        let inter = tape.matmul(pt, ones)?;
        let p_sum = tape.matmul(probs, ones)?;
        let t_sum = tape.matmul(tm, ones)?;
        let num = tape.scale(inter, 2.0);
        let num = tape.add_scalar(num, 1.0);
        let den = tape.add(p_sum, t_sum)?;
        let den = tape.add_scalar(den, 1.0);
        let ratio = tape.div(num, den)?;
        let ratio = tape.mean(ratio);
        let dice = tape.scale(ratio, -1.0);
        let dice = tape.add_scalar(dice, 1.0);
        let sp = tape.softplus(logits);
        let xt = tape.mul(logits, tm)?;
        let bce = tape.sub(sp, xt)?;
        let bce = tape.mean(bce);

        comps.l1 = tape.value(l1).item()?;
        comps.giou = tape.value(giou_term).item()?;
        comps.dice = tape.value(dice).item()?;
        comps.bce = tape.value(bce).item()?;
        let mask = tape.add(dice, bce)?;
        let terms = [(l1, weights.l1), (giou_term, weights.giou), (mask, weights.mask)];
        for (v, w) in terms {
            let v = tape.scale(v, w);
            total = tape.add(total, v)?;
        }
    }
    comps.total = tape.value(total).item()?;
    Ok((total, comps))
}
