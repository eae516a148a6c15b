//! COCO-style average precision for masks and boxes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{CocoDataset, Mask, Segmentation};
use crate::error::{Error, Result};

/// One scored instance prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    pub segmentation: Segmentation,
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    core::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// GT area buckets: small below 32², medium in [32², 96²], large above 96².
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub fn contains(self, area: f64) -> bool {
        const LO: f64 = 32.0 * 32.0;
        const HI: f64 = 96.0 * 96.0;
        match self {
            AreaRange::All => true,
            AreaRange::Small => area < LO,
            AreaRange::Medium => (LO..=HI).contains(&area),
            AreaRange::Large => area > HI,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IouKind {
    Segm,
    Bbox,
}

/// AP columns for one IoU kind; `None` where no ground truth falls in the bucket.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(with = "undefined")]
    pub ap: Option<f64>,
    #[serde(with = "undefined")]
    pub ap50: Option<f64>,
    #[serde(with = "undefined")]
    pub ap75: Option<f64>,
    #[serde(with = "undefined")]
    pub ap_s: Option<f64>,
    #[serde(with = "undefined")]
    pub ap_m: Option<f64>,
    #[serde(with = "undefined")]
    pub ap_l: Option<f64>,
}

impl MetricSet {
    pub fn fields(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("ap", self.ap),
            ("ap50", self.ap50),
            ("ap75", self.ap75),
            ("ap_s", self.ap_s),
            ("ap_m", self.ap_m),
            ("ap_l", self.ap_l),
        ]
    }
}

/// Writes a missing value as the string `"undefined"`.
mod undefined {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Wire {
        Value(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> core::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("undefined"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> core::result::Result<Option<f64>, D::Error> {
        match Wire::deserialize(d)? {
            Wire::Value(x) => Ok(Some(x)),
            Wire::Word(w) if w == "undefined" => Ok(None),
            Wire::Word(w) => Err(serde::de::Error::custom(format!("unexpected metric {w:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ApReport {
    pub segm: MetricSet,
    pub bbox: MetricSet,
}

impl ApReport {
    /// Aligned two-line table: AP^seg, AP^det, AP50^seg, AP75^seg, APs, APm, APl.
    pub fn table(&self) -> String {
        let cols = [
            ("AP_seg", self.segm.ap),
            ("AP_det", self.bbox.ap),
            ("AP50_seg", self.segm.ap50),
            ("AP75_seg", self.segm.ap75),
            ("APs_seg", self.segm.ap_s),
            ("APm_seg", self.segm.ap_m),
            ("APl_seg", self.segm.ap_l),
        ];
        let mut head = String::new();
        let mut row = String::new();
        for (name, v) in cols {
            let cell = match v {
                Some(x) => format!("{:.1}", 100.0 * x),
                None => "undefined".into(),
            };
            let width = name.len().max(cell.len()) + 2;
            head.push_str(&format!("{name:>width$}"));
            row.push_str(&format!("{cell:>width$}"));
        }
        format!("{head}\n{row}\n")
    }
}

/// Intersection over union of two equally sized masks.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    a.same_dims(b)?;
    let (inter, union) = overlap(a, b);
    if union == 0 {
        return Err(Error::contract("mask_iou: both masks are empty"));
    }
    Ok(inter as f64 / union as f64)
}

fn overlap(a: &Mask, b: &Mask) -> (usize, usize) {
    a.bits().iter().zip(b.bits()).fold((0, 0), |(i, u), (&x, &y)| {
        (i + (x && y) as usize, u + (x || y) as usize)
    })
}

/// IoU of `[x, y, w, h]` boxes; 0 when both are degenerate.
pub fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let ih = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    let inter = iw.max(0.0) * ih.max(0.0);
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Ground truth and detections of one (image, category) cell with their IoU matrix.
struct Cell {
    gt_area: Vec<f64>,
    dt: Vec<usize>,
    dt_area: Vec<f64>,
    /// `iou[d][g]` for detections in descending score order.
    iou: Vec<Vec<f64>>,
}

/// Per-detection outcome at one threshold and area range.
#[derive(Clone, Copy, PartialEq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

fn match_cell(cell: &Cell, threshold: f64, range: AreaRange, out: &mut Vec<(usize, Outcome)>) -> usize {
    let ignored: Vec<bool> = cell.gt_area.iter().map(|&a| !range.contains(a)).collect();
    // Non-ignored ground truth first, each group in index order.
    let mut order: Vec<usize> = (0..ignored.len()).collect();
    order.sort_by_key(|&g| (ignored[g], g));
    let mut taken = vec![false; ignored.len()];
    for (d, &det) in cell.dt.iter().enumerate() {
        let mut best: Option<usize> = None;
        let mut best_iou = threshold;
        for &g in &order {
            if taken[g] {
                continue;
            }
            if let Some(b) = best {
                if !ignored[b] && ignored[g] {
                    break;
                }
            }
            let v = cell.iou[d][g];
            if v >= best_iou && best.map_or(true, |_| v > best_iou) {
                best = Some(g);
                best_iou = v;
            }
        }
        let outcome = match best {
            Some(g) => {
                taken[g] = true;
                if ignored[g] {
                    Outcome::Ignored
                } else {
                    Outcome::Tp
                }
            }
            None if !range.contains(cell.dt_area[d]) => Outcome::Ignored,
            None => Outcome::Fp,
        };
        out.push((det, outcome));
    }
    ignored.iter().filter(|&&i| !i).count()
}

/// 101-point interpolated AP from outcomes in descending score order.
fn interpolated_ap(outcomes: &[Outcome], n_gt: usize) -> f64 {
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for &o in outcomes {
        match o {
            Outcome::Tp => tp += 1,
            Outcome::Fp => fp += 1,
            Outcome::Ignored => continue,
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let total: f64 = (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    total / 101.0
}

fn decode(seg: &Segmentation, h: usize, w: usize, what: &str) -> Result<Mask> {
    seg.decode(h, w)
        .map_err(|e| Error::contract(format!("{what}: segmentation does not decode ({e})")))
}

/// Builds per-cell IoU tables for one IoU kind.
fn cells(gt: &CocoDataset, dt: &[Detection], order: &[usize], kind: IouKind) -> Result<BTreeMap<(u64, u64), Cell>> {
    let mut out: BTreeMap<(u64, u64), Cell> = BTreeMap::new();
    let mut gt_items: BTreeMap<(u64, u64), Vec<(f64, Mask, [f64; 4])>> = BTreeMap::new();
    for ann in &gt.annotations {
        let im = gt
            .image(ann.image_id)
            .ok_or_else(|| Error::contract(format!("annotation {} references missing image", ann.id)))?;
        let mask = match kind {
            IouKind::Segm => decode(&ann.segmentation, im.height, im.width, "ground truth")?,
            IouKind::Bbox => Mask::new(1, 1)?,
        };
        gt_items
            .entry((ann.image_id, ann.category_id))
            .or_default()
            .push((ann.area, mask, ann.bbox));
    }
    for (&key, items) in &gt_items {
        out.insert(
            key,
            Cell {
                gt_area: items.iter().map(|i| i.0).collect(),
                dt: Vec::new(),
                dt_area: Vec::new(),
                iou: Vec::new(),
            },
        );
    }
    for &d in order {
        let det = &dt[d];
        let im = gt.image(det.image_id).expect("checked");
        let cell = out.entry((det.image_id, det.category_id)).or_insert_with(|| Cell {
            gt_area: Vec::new(),
            dt: Vec::new(),
            dt_area: Vec::new(),
            iou: Vec::new(),
        });
        let empty = Vec::new();
        let items = gt_items.get(&(det.image_id, det.category_id)).unwrap_or(&empty);
        let (area, ious) = match kind {
            IouKind::Segm => {
                let m = decode(&det.segmentation, im.height, im.width, "detection")?;
                let ious = items
                    .iter()
                    .map(|(_, g, _)| {
                        let (i, u) = overlap(&m, g);
                        if u == 0 {
                            0.0
                        } else {
                            i as f64 / u as f64
                        }
                    })
                    .collect();
                (m.area() as f64, ious)
            }
            IouKind::Bbox => (
                det.bbox[2] * det.bbox[3],
                items.iter().map(|(_, _, b)| box_iou(&det.bbox, b)).collect(),
            ),
        };
        cell.dt.push(d);
        cell.dt_area.push(area);
        cell.iou.push(ious);
    }
    Ok(out)
}

fn metric_set(gt: &CocoDataset, dt: &[Detection], order: &[usize], kind: IouKind) -> Result<MetricSet> {
    let table = cells(gt, dt, order, kind)?;
    let mut rank = vec![0usize; dt.len()];
    for (pos, &d) in order.iter().enumerate() {
        rank[d] = pos;
    }
    let categories: Vec<u64> = {
        let mut c: Vec<u64> = gt.annotations.iter().map(|a| a.category_id).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let thresholds = iou_thresholds();
    // ap[range][threshold] averaged over categories with ground truth in range.
    let score = |range: AreaRange, t_idx: &[usize]| -> Option<f64> {
        let mut values = Vec::new();
        for &t in t_idx {
            for &cat in &categories {
                let mut outcomes = Vec::new();
                let mut n_gt = 0;
                for ((_, c), cell) in &table {
                    if *c == cat {
                        n_gt += match_cell(cell, thresholds[t], range, &mut outcomes);
                    }
                }
                if n_gt == 0 {
                    continue;
                }
                outcomes.sort_by_key(|&(d, _)| rank[d]);
                let seq: Vec<Outcome> = outcomes.into_iter().map(|(_, o)| o).collect();
                values.push(interpolated_ap(&seq, n_gt));
            }
        }
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    let all: Vec<usize> = (0..thresholds.len()).collect();
    Ok(MetricSet {
        ap: score(AreaRange::All, &all),
        ap50: score(AreaRange::All, &[0]),
        ap75: score(AreaRange::All, &[5]),
        ap_s: score(AreaRange::Small, &all),
        ap_m: score(AreaRange::Medium, &all),
        ap_l: score(AreaRange::Large, &all),
    })
}

/// Detection indices by descending score, ties in input order.
pub fn score_order(dt: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dt.len()).collect();
    order.sort_by(|&a, &b| dt[b].score.total_cmp(&dt[a].score));
    order
}

/// COCO-style AP for masks and boxes.
pub fn evaluate(gt: &CocoDataset, dt: &[Detection]) -> Result<ApReport> {
    for (i, det) in dt.iter().enumerate() {
        if gt.image(det.image_id).is_none() {
            return Err(Error::contract(format!(
                "detection {i} references unknown image {}",
                det.image_id
            )));
        }
        if !gt.categories.iter().any(|c| c.id == det.category_id) {
            return Err(Error::contract(format!(
                "detection {i} references unknown category {}",
                det.category_id
            )));
        }
        if !det.score.is_finite() || det.bbox.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("detection {i} has a non-finite score or box")));
        }
    }
    let order = score_order(dt);
    Ok(ApReport {
        segm: metric_set(gt, dt, &order, IouKind::Segm)?,
        bbox: metric_set(gt, dt, &order, IouKind::Bbox)?,
    })
}
