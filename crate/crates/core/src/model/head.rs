use alloc::vec::Vec;

use rand::Rng;

use super::{BackboneOutput, Model, ModelConfig, RoutingDesign};
use crate::data::Mask;
use crate::error::{Error, Result};
use crate::tensor::kernels::{interp_matrix, resize_channels};
use crate::tensor::{param_block, Bound, ParamStore, Tape, Tensor, Var};

/// Which encoder output a head consumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Rgb,
    Agg,
}

/// Head inputs chosen by a routing design.
#[derive(Clone, Copy, Debug)]
pub struct Routed {
    pub det: Var,
    pub seg: Var,
    pub det_source: FeatureSource,
    pub seg_source: FeatureSource,
    /// Map the RGB features are pulled towards (design D only).
    pub aux_target: Option<Var>,
}

pub fn route_features(tape: &Tape, design: RoutingDesign, f_rgb_final: Var, f_agg_final: Var) -> Result<Routed> {
    if tape.shape(f_rgb_final) != tape.shape(f_agg_final) {
        return Err(Error::dim("route_features", tape.shape(f_rgb_final), tape.shape(f_agg_final)));
    }
    use FeatureSource::{Agg, Rgb};
    let (det_source, seg_source) = match design {
        RoutingDesign::A => (Agg, Agg),
        RoutingDesign::B => (Agg, Rgb),
        RoutingDesign::C => (Rgb, Agg),
        RoutingDesign::D => (Rgb, Rgb),
    };
    let pick = |s| if s == Agg { f_agg_final } else { f_rgb_final };
    Ok(Routed {
        det: pick(det_source),
        seg: pick(seg_source),
        det_source,
        seg_source,
        aux_target: (design == RoutingDesign::D).then_some(f_agg_final),
    })
}

param_block! {
    /// Learned queries with one cross-attention layer and output projections.
    HeadWeights => HeadParams {
        query, pos, bias, w_q, w_k, w_v, w_o, w_sq, w_sk, w_sv, w_so, w_s, w_1, b_1, w_2, b_2, w_cls, b_cls, w_box, b_box, w_emb, b_emb
    }
}

param_block! {
    /// Pixel-embedding decoder: top-down projection, stage-2 lateral, 3×3 mix.
    DecoderWeights => DecoderParams { w_top, b_top, w_lat, b_lat, w_mix, b_mix }
}

/// Spread-out anchor points in the unit square, one per query: rows of a
/// near-square grid, the last row centred.
fn anchors(n: usize) -> Vec<(f64, f64)> {
    let cols = (1..=n).find(|c| c * c >= n).unwrap_or(1);
    let rows = n.div_ceil(cols);
    let mut out = Vec::with_capacity(n);
    for r in 0..rows {
        let in_row = (n - r * cols).min(cols);
        for i in 0..in_row {
            out.push(((i as f64 + 0.5) / in_row as f64, (r as f64 + 0.5) / rows as f64));
        }
    }
    out
}

/// Initial query-to-token attention bias: a Gaussian bump around each query's anchor.
fn anchor_bias(queries: usize, (h, w): (usize, usize)) -> Tensor {
    let points = anchors(queries);
    let sigma = 0.5 / libm::sqrt(queries as f64);
    let centres = cell_centres(h, w);
    Tensor::from_fn(&[queries, h * w], |i| {
        let (q, t) = (i / (h * w), i % (h * w));
        let dx = centres.data()[2 * t] - points[q].0;
        let dy = centres.data()[2 * t + 1] - points[q].1;
        -(dx * dx + dy * dy) / (2.0 * sigma * sigma)
    })
}

fn linear_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::init_fan_in(&[rows, cols], rows, rng)
}

pub(super) fn init_head<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R, store: &mut ParamStore) -> Result<()> {
    let sizes = cfg.stage_sizes()?;
    let c = cfg.blocks[3].channels;
    let c2 = cfg.blocks[1].channels;
    let tokens = sizes[3].0 * sizes[3].1;
    let (f, k, e) = (cfg.ffn_dim, cfg.num_classes + 1, cfg.mask_dim);
    let head = HeadWeights {
        query: Tensor::uniform(&[cfg.num_queries, c], 1.0, rng),
        pos: Tensor::uniform(&[tokens, c], 0.5, rng),
        bias: anchor_bias(cfg.num_queries, sizes[3]),
        w_q: linear_init(c, c, rng),
        w_k: linear_init(c, c, rng),
        w_v: linear_init(c, c, rng),
        w_o: linear_init(c, c, rng),
        w_sq: linear_init(c, c, rng),
        w_sk: linear_init(c, c, rng),
        w_sv: linear_init(c, c, rng),
        w_so: linear_init(c, c, rng),
        w_s: linear_init(c, c, rng),
        w_1: linear_init(c, f, rng),
        b_1: Tensor::zeros(&[f]),
        w_2: linear_init(f, c, rng),
        b_2: Tensor::zeros(&[c]),
        w_cls: linear_init(c, k, rng),
        b_cls: Tensor::zeros(&[k]),
        w_box: linear_init(c, 4, rng),
        b_box: Tensor::zeros(&[4]),
        w_emb: linear_init(c, e, rng),
        b_emb: Tensor::zeros(&[e]),
    };
    head.register(store, "head")?;
    let hidden = 2 * e;
    let mix_in = hidden + if cfg.coord_channels { 2 } else { 0 };
    let dec = DecoderWeights {
        w_top: Tensor::init_fan_in(&[hidden, c], c, rng),
        b_top: Tensor::zeros(&[hidden]),
        w_lat: Tensor::init_fan_in(&[hidden, c2], c2, rng),
        b_lat: Tensor::zeros(&[hidden]),
        w_mix: Tensor::uniform(&[e, mix_in, 3, 3], libm::sqrt(6.0 / (9 * mix_in) as f64), rng),
        b_mix: Tensor::zeros(&[e]),
    };
    dec.register(store, "dec")
}

/// Raw head outputs recorded on the tape.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `[Q, K + 1]`, last column is "no object".
    pub class_logits: Var,
    /// `[Q, 4]` normalised `(cx, cy, w, h)`.
    pub boxes: Var,
    /// `[Q, R, R]` at the stage-2 resolution.
    pub mask_logits: Var,
    /// `[Q, T]` query-to-token attention.
    pub attention: Var,
    pub routed: Routed,
}

fn tokens(tape: &mut Tape, map: Var, pos: Var) -> Result<Var> {
    let (c, h, w) = match tape.shape(map) {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::dim("head tokens", s, &[0, 0, 0])),
    };
    let flat = tape.reshape(map, &[c, h * w])?;
    let t = tape.transpose(flat)?;
    tape.add(t, pos)
}

fn coord_grid(h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[2, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        let (r, c) = (p / w, p % w);
        if ch == 0 {
            2.0 * (c as f64 + 0.5) / w as f64 - 1.0
        } else {
            2.0 * (r as f64 + 0.5) / h as f64 - 1.0
        }
    })
}

/// `[h·w, 2]` normalised `(x, y)` centres of a grid's cells.
fn cell_centres(h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[h * w, 2], |i| {
        let (cell, axis) = (i / 2, i % 2);
        if axis == 0 {
            ((cell % w) as f64 + 0.5) / w as f64
        } else {
            ((cell / w) as f64 + 0.5) / h as f64
        }
    })
}

/// Boxes whose centre is an offset (in logit space) from the attention-weighted
/// mean of the token centres; width and height are predicted directly.
fn anchored_boxes(tape: &mut Tape, h: Var, attention: Var, det: Var, p: &HeadParams) -> Result<Var> {
    let s = tape.shape(det);
    let centres = tape.constant(cell_centres(s[1], s[2]));
    let reference = tape.matmul(attention, centres)?;
    let log_r = tape.log(reference)?;
    let rest = tape.scale(reference, -1.0);
    let rest = tape.add_scalar(rest, 1.0);
    let log_rest = tape.log(rest)?;
    let ref_logit = tape.sub(log_r, log_rest)?;
    let raw = tape.linear(h, p.w_box, p.b_box)?;
    let offset = tape.slice(raw, 1, 0, 2)?;
    let size = tape.slice(raw, 1, 2, 2)?;
    let centre = tape.add(ref_logit, offset)?;
    let centre = tape.sigmoid(centre);
    let size = tape.sigmoid(size);
    tape.concat(&[centre, size], 1)
}

/// Soft log-indicator of each query's box on an `h×w` grid:
/// `log σ(k(w/2 − |x − cx|)) + log σ(k(h/2 − |y − cy|))` with `k` one unit per cell.
fn box_prior(tape: &mut Tape, boxes: Var, h: usize, w: usize) -> Result<Var> {
    let nq = tape.shape(boxes)[0];
    let grid = cell_centres(h, w);
    let ones = tape.constant(Tensor::ones(&[1, h * w]));
    let mut total = None;
    for (axis, k) in [(0, w as f64), (1, h as f64)] {
        let coords = Tensor::from_fn(&[nq, h * w], |i| grid.data()[2 * (i % (h * w)) + axis]);
        let coords = tape.constant(coords);
        let centre = tape.slice(boxes, 1, axis, 1)?;
        let extent = tape.slice(boxes, 1, axis + 2, 1)?;
        let centre = tape.matmul(centre, ones)?;
        let half = tape.scale(extent, 0.5);
        let half = tape.matmul(half, ones)?;
        let d = tape.sub(coords, centre)?;
        let d = tape.abs(d);
        let margin = tape.sub(half, d)?;
        let neg = tape.scale(margin, -k);
        let sp = tape.softplus(neg);
        let term = tape.scale(sp, -1.0);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    Ok(total.expect("two axes"))
}

/// Query attention over the detection map plus dot-product masks over decoded pixels.
pub fn head_forward(tape: &mut Tape, model: &Model, bound: &Bound, enc: &BackboneOutput) -> Result<HeadOutput> {
    let cfg = &model.cfg;
    let p = HeadParams::bind(bound, "head")?;
    let d = DecoderParams::bind(bound, "dec")?;
    let routed = route_features(tape, cfg.routing_design, enc.f_rgb_final, enc.f_agg_final)?;

    let det_tokens = tokens(tape, routed.det, p.pos)?;
    let seg_tokens = tokens(tape, routed.seg, p.pos)?;
    let c = tape.shape(det_tokens)[1];
    let q = tape.matmul(p.query, p.w_q)?;
    let k = tape.matmul(det_tokens, p.w_k)?;
    let v = tape.matmul(det_tokens, p.w_v)?;
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / libm::sqrt(c as f64));
    let logits = tape.add(logits, p.bias)?;
    let attention = tape.softmax_rows(logits, 1.0)?;
    let read = tape.matmul(attention, v)?;
    let read = tape.matmul(read, p.w_o)?;
    let h = tape.add(p.query, read)?;
    // Queries see each other once, so two of them can settle which one claims an object.
    let sq = tape.matmul(h, p.w_sq)?;
    let sk = tape.matmul(h, p.w_sk)?;
    let sv = tape.matmul(h, p.w_sv)?;
    let skt = tape.transpose(sk)?;
    let mutual = tape.matmul(sq, skt)?;
    let mutual = tape.softmax_rows(mutual, 1.0 / libm::sqrt(c as f64))?;
    let mixed = tape.matmul(mutual, sv)?;
    let mixed = tape.matmul(mixed, p.w_so)?;
    let h = tape.add(h, mixed)?;
    let hidden = tape.linear(h, p.w_1, p.b_1)?;
    let hidden = tape.relu(hidden);
    let ffn = tape.linear(hidden, p.w_2, p.b_2)?;
    let h = tape.add(h, ffn)?;

    let class_logits = tape.linear(h, p.w_cls, p.b_cls)?;
    let boxes = anchored_boxes(tape, h, attention, routed.det, &p)?;

    // The mask embedding also reads the segmentation tokens at the attended positions.
    let seg_values = tape.matmul(seg_tokens, p.w_s)?;
    let seg_read = tape.matmul(attention, seg_values)?;
    let emb_in = tape.add(h, seg_read)?;
    let emb = tape.linear(emb_in, p.w_emb, p.b_emb)?;

    let lateral_src = match routed.seg_source {
        FeatureSource::Agg => enc.agg[1],
        FeatureSource::Rgb => enc.rgb[1],
    };
    let (r_h, r_w) = (tape.shape(lateral_src)[1], tape.shape(lateral_src)[2]);
    let top = tape.conv1x1(routed.seg, d.w_top, d.b_top)?;
    let top = tape.resize_bilinear(top, r_h, r_w)?;
    let lat = tape.conv1x1(lateral_src, d.w_lat, d.b_lat)?;
    let merged = tape.add(top, lat)?;
    let mut merged = tape.relu(merged);
    if cfg.coord_channels {
        let grid = tape.constant(coord_grid(r_h, r_w));
        merged = tape.concat(&[merged, grid], 0)?;
    }
    let pixels = tape.conv2d(merged, d.w_mix, d.b_mix, 1, 1)?;
    let e = tape.shape(pixels)[0];
    let pixels = tape.reshape(pixels, &[e, r_h * r_w])?;
    let masks = tape.matmul(emb, pixels)?;
    let prior = box_prior(tape, boxes, r_h, r_w)?;
    let masks = tape.add(masks, prior)?;
    let nq = tape.shape(masks)[0];
    let mask_logits = tape.reshape(masks, &[nq, r_h, r_w])?;

    Ok(HeadOutput {
        class_logits,
        boxes,
        mask_logits,
        attention,
        routed,
    })
}

/// Head outputs as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_logits: Tensor,
    pub boxes: Tensor,
    pub mask_logits: Tensor,
}

impl Prediction {
    pub fn num_queries(&self) -> usize {
        self.class_logits.shape()[0]
    }

    /// Mask logits bilinearly resized to `height × width`.
    pub fn upsampled_logits(&self, height: usize, width: usize) -> Tensor {
        let s = self.mask_logits.shape();
        let (q, h, w) = (s[0], s[1], s[2]);
        let ry = interp_matrix(h, height);
        let rx = interp_matrix(w, width);
        let data = resize_channels(q, (h, w), (height, width), &ry, &rx, self.mask_logits.data());
        Tensor::from_vec(&[q, height, width], data).expect("resize keeps the element count")
    }

    /// Binary masks at image resolution: upsampled logits above zero.
    pub fn masks(&self, height: usize, width: usize) -> Vec<Mask> {
        let up = self.upsampled_logits(height, width);
        up.data()
            .chunks(height * width)
            .map(|m| Mask::from_bits(height, width, m.iter().map(|&v| v > 0.0).collect()).expect("sized"))
            .collect()
    }
}
