//! CSV outputs: dataset statistics and training traces.

use std::fs;
use std::path::Path;

use iamseg_core::data::CocoDataset;
use iamseg_core::model::{EpochRecord, LossComponents};
use iamseg_core::stats::{bbox_scatter, relative_scale_cdf, resample_cdf, summarize, DatasetSummary};

use crate::error::{Error, Result};

pub const STATS_FILES: [&str; 5] = [
    "summary.csv",
    "scale_cdf.csv",
    "bbox_scatter.csv",
    "instances_per_category.csv",
    "categories_per_image_hist.csv",
];

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), num)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let file = fs::File::create(path).map_err(Error::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(Error::io(path))
}

/// Writes the five statistics tables; `cdf_bins` adds a resampled CDF block.
pub fn write_stats(ds: &CocoDataset, out_dir: &Path, cdf_bins: Option<usize>) -> Result<DatasetSummary> {
    let summary = summarize(ds)?;
    write_rows(
        &out_dir.join(STATS_FILES[0]),
        &[
            "image_count",
            "class_count",
            "annotation_count",
            "mean_objects_per_image",
            "mean_categories_per_image",
            "unannotated_images",
        ],
        [[
            summary.image_count.to_string(),
            summary.class_count.to_string(),
            ds.annotations.len().to_string(),
            num(summary.mean_objects_per_image),
            num(summary.mean_categories_per_image),
            summary.unannotated_images.to_string(),
        ]],
    )?;

    let cdf = relative_scale_cdf(ds)?;
    let mut rows: Vec<[String; 3]> = cdf
        .iter()
        .map(|p| ["empirical".into(), num(p.relative_scale), num(p.cumulative_fraction)])
        .collect();
    if let Some(bins) = cdf_bins {
        rows.extend(
            resample_cdf(&cdf, bins)
                .iter()
                .map(|p| ["resampled".into(), num(p.relative_scale), num(p.cumulative_fraction)]),
        );
    }
    write_rows(
        &out_dir.join(STATS_FILES[1]),
        &["kind", "relative_scale", "cumulative_fraction"],
        rows,
    )?;

    let scatter = bbox_scatter(ds)?;
    write_rows(
        &out_dir.join(STATS_FILES[2]),
        &["annotation_id", "relative_width", "relative_height"],
        ds.annotations
            .iter()
            .zip(&scatter)
            .map(|(a, (w, h))| [a.id.to_string(), num(*w), num(*h)]),
    )?;

    let names: std::collections::BTreeMap<u64, &str> =
        ds.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    write_rows(
        &out_dir.join(STATS_FILES[3]),
        &["category_id", "name", "instances"],
        summary.per_category_instance_counts.iter().map(|(id, n)| {
            [
                id.to_string(),
                names.get(id).copied().unwrap_or("").to_string(),
                n.to_string(),
            ]
        }),
    )?;

    write_rows(
        &out_dir.join(STATS_FILES[4]),
        &["categories_in_image", "images"],
        summary
            .categories_per_image_histogram
            .iter()
            .map(|(k, n)| [k.to_string(), n.to_string()]),
    )?;
    Ok(summary)
}

pub fn trace_header() -> Vec<String> {
    let mut h = vec!["epoch".to_string()];
    h.extend(LossComponents::names().iter().map(|n| format!("loss_{n}")));
    h.extend(["ap50_seg".to_string(), "ap50_det".to_string()]);
    h
}

pub fn trace_row(r: &EpochRecord) -> Vec<String> {
    let mut row = vec![r.epoch.to_string()];
    row.extend(r.components.values().iter().map(|v| num(*v)));
    row.extend([opt_num(r.ap50_seg), opt_num(r.ap50_det)]);
    row
}

pub fn write_trace(path: &Path, trace: &[EpochRecord]) -> Result<()> {
    let header = trace_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(path, &header, trace.iter().map(trace_row))
}
