//! Reference evaluator written directly from the matching rule, plus random instances.

use iamseg_core::data::*;
use iamseg_core::eval::{ApReport, Detection, MetricSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pixels(seg: &Segmentation, h: usize, w: usize) -> Vec<bool> {
    seg.decode(h, w).unwrap().bits().to_vec()
}

fn pixel_iou(a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for i in 0..a.len() {
        if a[i] && b[i] {
            inter += 1.0;
        }
        if a[i] || b[i] {
            union += 1.0;
        }
    }
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn rect_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let x0 = a[0].max(b[0]);
    let y0 = a[1].max(b[1]);
    let x1 = (a[0] + a[2]).min(b[0] + b[2]);
    let y1 = (a[1] + a[3]).min(b[1] + b[3]);
    let inter = if x1 > x0 && y1 > y0 { (x1 - x0) * (y1 - y0) } else { 0.0 };
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn in_range(bucket: usize, area: f64) -> bool {
    match bucket {
        0 => true,
        1 => area < 1024.0,
        2 => area >= 1024.0 && area <= 9216.0,
        _ => area > 9216.0,
    }
}

/// Brute-force report: enumerates detections in score order and matches each greedily.
pub fn reference(gt: &CocoDataset, dt: &[Detection]) -> ApReport {
    ApReport {
        segm: reference_kind(gt, dt, true),
        bbox: reference_kind(gt, dt, false),
    }
}

fn reference_kind(gt: &CocoDataset, dt: &[Detection], segm: bool) -> MetricSet {
    let size = |image_id: u64| {
        let im = gt.images.iter().find(|i| i.id == image_id).unwrap();
        (im.height, im.width)
    };
    // Selection sort on (score desc, index asc).
    let mut order: Vec<usize> = Vec::new();
    let mut left: Vec<usize> = (0..dt.len()).collect();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if dt[left[k]].score > dt[left[best]].score {
                best = k;
            }
        }
        order.push(left.remove(best));
    }
    let mut cats: Vec<u64> = Vec::new();
    for a in &gt.annotations {
        if !cats.contains(&a.category_id) {
            cats.push(a.category_id);
        }
    }
    let iou = |d: &Detection, g: &CocoAnnotation| -> f64 {
        if segm {
            let (h, w) = size(g.image_id);
            pixel_iou(&pixels(&d.segmentation, h, w), &pixels(&g.segmentation, h, w))
        } else {
            rect_iou(&d.bbox, &g.bbox)
        }
    };
    let det_area = |d: &Detection| -> f64 {
        if segm {
            let (h, w) = size(d.image_id);
            pixels(&d.segmentation, h, w).iter().filter(|&&b| b).count() as f64
        } else {
            d.bbox[2] * d.bbox[3]
        }
    };
    let ap_at = |bucket: usize, t: f64, cat: u64| -> Option<f64> {
        let gts: Vec<&CocoAnnotation> = gt.annotations.iter().filter(|a| a.category_id == cat).collect();
        let n_gt = gts.iter().filter(|g| in_range(bucket, g.area)).count();
        if n_gt == 0 {
            return None;
        }
        let mut taken = vec![false; gts.len()];
        let mut points: Vec<(f64, f64)> = Vec::new();
        let (mut tp, mut fp) = (0.0, 0.0);
        for &d in &order {
            let det = &dt[d];
            if det.category_id != cat {
                continue;
            }
            let mut pick: Option<usize> = None;
            for want_ignored in [false, true] {
                let mut best = t;
                for (g, ann) in gts.iter().enumerate() {
                    if taken[g] || ann.image_id != det.image_id || in_range(bucket, ann.area) == want_ignored {
                        continue;
                    }
                    let v = iou(det, ann);
                    if v >= best && (pick.is_none() || v > best) {
                        best = v;
                        pick = Some(g);
                    }
                }
                if pick.is_some() {
                    break;
                }
            }
            match pick {
                Some(g) => {
                    taken[g] = true;
                    if !in_range(bucket, gts[g].area) {
                        continue;
                    }
                    tp += 1.0;
                }
                None => {
                    if !in_range(bucket, det_area(det)) {
                        continue;
                    }
                    fp += 1.0;
                }
            }
            points.push((tp / n_gt as f64, tp / (tp + fp)));
        }
        let mut total = 0.0;
        for k in 0..=100 {
            let r = k as f64 / 100.0;
            let p = points
                .iter()
                .filter(|(rec, _)| *rec >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max);
            total += p;
        }
        Some(total / 101.0)
    };
    let mean_over = |bucket: usize, ts: &[f64]| -> Option<f64> {
        let vals: Vec<f64> = ts
            .iter()
            .flat_map(|&t| cats.iter().filter_map(move |&c| ap_at(bucket, t, c)))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    let all: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    MetricSet {
        ap: mean_over(0, &all),
        ap50: mean_over(0, &[0.5]),
        ap75: mean_over(0, &[0.75]),
        ap_s: mean_over(1, &all),
        ap_m: mean_over(2, &all),
        ap_l: mean_over(3, &all),
    }
}

fn rect_polygon(x: f64, y: f64, w: f64, h: f64) -> Vec<f64> {
    vec![x, y, x + w, y, x + w, y + h, x, y + h]
}

fn random_rect(rng: &mut ChaCha8Rng, h: usize, w: usize) -> [f64; 4] {
    let rw = rng.gen_range(1..=w);
    let rh = rng.gen_range(1..=h);
    let x = rng.gen_range(0..=w - rw);
    let y = rng.gen_range(0..=h - rh);
    [x as f64, y as f64, rw as f64, rh as f64]
}

/// At most 4 images, 5 ground-truth and 8 detection instances.
pub fn random_instance(seed: u64) -> (CocoDataset, Vec<Detection>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_images = rng.gen_range(1..=4);
    let mut ds = CocoDataset {
        categories: vec![
            CocoCategory { id: 1, name: "a".into() },
            CocoCategory { id: 2, name: "b".into() },
            CocoCategory { id: 3, name: "c".into() },
        ],
        ..Default::default()
    };
    for id in 1..=n_images {
        let side = [24, 48, 130][rng.gen_range(0..3)];
        ds.images.push(CocoImage {
            id,
            file_name: format!("{id}.ppm"),
            depth_file_name: String::new(),
            width: side,
            height: rng.gen_range(side / 2..=side),
        });
    }
    let n_gt = rng.gen_range(1..=5);
    for id in 1..=n_gt {
        let im = ds.images[rng.gen_range(0..ds.images.len())].clone();
        let r = random_rect(&mut rng, im.height, im.width);
        let m = polygon_to_mask(&[rect_polygon(r[0], r[1], r[2], r[3])], im.height, im.width).unwrap();
        ds.annotations.push(
            annotation_from_mask(id, im.id, rng.gen_range(1..=2), &m, &AnnotateOptions::default()).unwrap(),
        );
    }
    let n_dt = rng.gen_range(0..=8);
    let mut dt = Vec::new();
    for _ in 0..n_dt {
        let (image_id, category_id, rect) = if rng.gen_bool(0.6) {
            let g = &ds.annotations[rng.gen_range(0..ds.annotations.len())];
            let im = ds.image(g.image_id).unwrap();
            let mut r = g.bbox;
            let dx = rng.gen_range(-3i32..=3) as f64;
            let dy = rng.gen_range(-3i32..=3) as f64;
            r[0] = (r[0] + dx).clamp(0.0, im.width as f64 - 1.0);
            r[1] = (r[1] + dy).clamp(0.0, im.height as f64 - 1.0);
            r[2] = r[2].min(im.width as f64 - r[0]);
            r[3] = r[3].min(im.height as f64 - r[1]);
            let cat = if rng.gen_bool(0.85) { g.category_id } else { 3 };
            (g.image_id, cat, r)
        } else {
            let im = &ds.images[rng.gen_range(0..ds.images.len())];
            (im.id, rng.gen_range(1..=3), random_rect(&mut rng, im.height, im.width))
        };
        let score = [0.1, 0.3, 0.5, 0.5, 0.7, 0.9][rng.gen_range(0..6)];
        dt.push(Detection {
            image_id,
            category_id,
            score,
            bbox: rect,
            segmentation: Segmentation::Polygons(vec![rect_polygon(rect[0], rect[1], rect[2], rect[3])]),
        });
    }
    (ds, dt)
}

pub fn max_field_diff(a: &ApReport, b: &ApReport) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for (x, y) in [(&a.segm, &b.segm), (&a.bbox, &b.bbox)] {
        for ((_, u), (_, v)) in x.fields().iter().zip(y.fields().iter()) {
            match (u, v) {
                (Some(u), Some(v)) => worst = worst.max((u - v).abs()),
                (None, None) => {}
                _ => return None,
            }
        }
    }
    Some(worst)
}
