//! Dataset statistics: counts, relative-scale CDF and box proportions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{CocoDataset, CocoImage};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    /// Images carrying at least one annotation.
    pub image_count: usize,
    pub class_count: usize,
    pub mean_objects_per_image: f64,
    pub mean_categories_per_image: f64,
    pub per_category_instance_counts: BTreeMap<u64, usize>,
    /// Number of distinct categories in an image → number of such images.
    pub categories_per_image_histogram: BTreeMap<usize, usize>,
    /// Images without annotations, left out of every mean.
    pub unannotated_images: usize,
}

/// Counts over annotated images; zero-annotation images are excluded and tallied separately.
pub fn summarize(ds: &CocoDataset) -> Result<DatasetSummary> {
    let mut per_image: BTreeMap<u64, (usize, BTreeSet<u64>)> = BTreeMap::new();
    let known: BTreeSet<u64> = ds.images.iter().map(|i| i.id).collect();
    let mut per_category: BTreeMap<u64, usize> = ds.categories.iter().map(|c| (c.id, 0)).collect();
    for ann in &ds.annotations {
        if !known.contains(&ann.image_id) {
            return Err(Error::Validation(alloc::vec![format!(
                "annotation {}: unknown image {}",
                ann.id, ann.image_id
            )]));
        }
        let entry = per_image.entry(ann.image_id).or_default();
        entry.0 += 1;
        entry.1.insert(ann.category_id);
        *per_category.entry(ann.category_id).or_default() += 1;
    }
    let image_count = per_image.len();
    if image_count == 0 {
        return Err(Error::EmptyInput { op: "summarize" });
    }
    let mut histogram = BTreeMap::new();
    let mut category_total = 0usize;
    for (_, cats) in per_image.values() {
        *histogram.entry(cats.len()).or_default() += 1;
        category_total += cats.len();
    }
    Ok(DatasetSummary {
        image_count,
        class_count: ds.categories.len(),
        mean_objects_per_image: ds.annotations.len() as f64 / image_count as f64,
        mean_categories_per_image: category_total as f64 / image_count as f64,
        per_category_instance_counts: per_category,
        categories_per_image_histogram: histogram,
        unannotated_images: known.len() - image_count,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub relative_scale: f64,
    pub cumulative_fraction: f64,
}

fn image_of<'a>(images: &'a BTreeMap<u64, &CocoImage>, ann_id: u64, image_id: u64) -> Result<&'a CocoImage> {
    images
        .get(&image_id)
        .copied()
        .ok_or_else(|| Error::Validation(alloc::vec![format!("annotation {ann_id}: unknown image {image_id}")]))
}

/// Empirical CDF of √(area / image area), one point per annotation.
pub fn relative_scale_cdf(ds: &CocoDataset) -> Result<Vec<ScalePoint>> {
    let images: BTreeMap<u64, &CocoImage> = ds.images.iter().map(|i| (i.id, i)).collect();
    let mut scales = Vec::with_capacity(ds.annotations.len());
    let mut bad = Vec::new();
    for ann in &ds.annotations {
        let im = image_of(&images, ann.id, ann.image_id)?;
        let total = (im.width * im.height) as f64;
        if !(ann.area > 0.0) || ann.area > total {
            bad.push(format!("annotation {}: area {} outside (0, {total}]", ann.id, ann.area));
            continue;
        }
        scales.push(libm::sqrt(ann.area / total));
    }
    if !bad.is_empty() {
        return Err(Error::Validation(bad));
    }
    if scales.is_empty() {
        return Err(Error::EmptyInput { op: "relative_scale_cdf" });
    }
    scales.sort_by(f64::total_cmp);
    let n = scales.len() as f64;
    Ok(scales
        .into_iter()
        .enumerate()
        .map(|(i, s)| ScalePoint {
            relative_scale: s,
            cumulative_fraction: (i + 1) as f64 / n,
        })
        .collect())
}

/// Evaluates the empirical CDF on the grid `k / bins`, `k = 1..=bins`.
pub fn resample_cdf(points: &[ScalePoint], bins: usize) -> Vec<ScalePoint> {
    (1..=bins)
        .map(|k| {
            let x = k as f64 / bins as f64;
            let below = points.partition_point(|p| p.relative_scale <= x);
            ScalePoint {
                relative_scale: x,
                cumulative_fraction: if below == 0 { 0.0 } else { points[below - 1].cumulative_fraction },
            }
        })
        .collect()
}

/// `(bbox_w / image_w, bbox_h / image_h)` per annotation.
pub fn bbox_scatter(ds: &CocoDataset) -> Result<Vec<(f64, f64)>> {
    let images: BTreeMap<u64, &CocoImage> = ds.images.iter().map(|i| (i.id, i)).collect();
    let mut out = Vec::with_capacity(ds.annotations.len());
    let mut bad = Vec::new();
    for ann in &ds.annotations {
        let im = image_of(&images, ann.id, ann.image_id)?;
        let [x, y, w, h] = ann.bbox;
        let (iw, ih) = (im.width as f64, im.height as f64);
        if !(w > 0.0 && h > 0.0 && x >= 0.0 && y >= 0.0 && x + w <= iw && y + h <= ih) {
            bad.push(format!("annotation {}: bbox {:?} outside {iw}x{ih} image", ann.id, ann.bbox));
            continue;
        }
        out.push((w / iw, h / ih));
    }
    if !bad.is_empty() {
        return Err(Error::Validation(bad));
    }
    Ok(out)
}
