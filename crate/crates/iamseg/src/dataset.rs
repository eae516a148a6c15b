//! Datasets on disk: `annotations.json` next to `rgb/*.ppm` and `depth/*.pgm`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use iamseg_core::data::{
    annotate, annotation_from_mask, generate_scene, validate_dataset, AnnotateOptions, CocoCategory, CocoDataset,
    CocoImage, GeneratorConfig, Mask, SceneSample, SplitManifest,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{json, pnm};

pub const ANNOTATIONS: &str = "annotations.json";

/// Seed of the `index`-th scene of a run.
pub fn scene_seed(run_seed: u64, index: u64) -> u64 {
    run_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index)
}

/// Generates `count` scenes in parallel; output order follows the index.
pub fn generate_scenes(cfg: &GeneratorConfig, run_seed: u64, count: usize) -> Result<Vec<SceneSample>> {
    cfg.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_scene(cfg, scene_seed(run_seed, i)).map_err(Error::from))
        .collect()
}

/// Writes images and `annotations.json`; returns the dataset that was written.
pub fn build_coco(samples: &[SceneSample], out_dir: &Path, opts: &AnnotateOptions) -> Result<CocoDataset> {
    let annotated = annotate(samples, opts)?;
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    for (image, &k) in annotated.dataset.images.iter().zip(&annotated.kept) {
        let s = &samples[k];
        pnm::write_ppm(&out_dir.join(&image.file_name), s.width, s.height, &s.rgb)?;
        pnm::write_pgm16(&out_dir.join(&image.depth_file_name), s.width, s.height, &s.depth)?;
    }
    json::write_canonical(&out_dir.join(ANNOTATIONS), &annotated.dataset)?;
    Ok(annotated.dataset)
}

pub fn load_coco(path: &Path) -> Result<CocoDataset> {
    json::read_json(path)
}

/// Parses a COCO file and lists every broken invariant.
pub fn validate_coco(path: &Path) -> Result<Vec<String>> {
    Ok(validate_dataset(&load_coco(path)?))
}

/// Accepts either a dataset directory or the annotation file itself.
pub fn annotation_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(ANNOTATIONS)
    } else {
        path.to_path_buf()
    }
}

fn read_rgb(path: &Path, im: &CocoImage) -> Result<Vec<u8>> {
    let r = pnm::read(path)?;
    if r.channels != 3 || (r.width, r.height) != (im.width, im.height) {
        return Err(Error::format(path, format!("expected a {}x{} RGB image", im.width, im.height)));
    }
    if r.max_value > 255 {
        return Err(Error::format(path, "RGB images must be 8-bit"));
    }
    Ok(r.samples.into_iter().map(|v| v as u8).collect())
}

fn read_depth(path: &Path, im: &CocoImage) -> Result<Vec<u16>> {
    let r = pnm::read(path)?;
    if r.channels != 1 || (r.width, r.height) != (im.width, im.height) {
        return Err(Error::format(path, format!("expected a {}x{} grey image", im.width, im.height)));
    }
    Ok(r.samples)
}

/// Loads a dataset directory back into samples, in image order.
pub fn load_samples(dir: &Path) -> Result<(CocoDataset, Vec<SceneSample>)> {
    let ds = load_coco(&dir.join(ANNOTATIONS))?;
    let violations = validate_dataset(&ds);
    if !violations.is_empty() {
        return Err(iamseg_core::Error::Validation(violations).into());
    }
    let samples = ds
        .images
        .par_iter()
        .map(|im| {
            let rgb = read_rgb(&dir.join(&im.file_name), im)?;
            let depth = if im.depth_file_name.is_empty() {
                vec![0; im.width * im.height]
            } else {
                read_depth(&dir.join(&im.depth_file_name), im)?
            };
            let mut masks = Vec::new();
            let mut categories = Vec::new();
            for ann in ds.annotations.iter().filter(|a| a.image_id == im.id) {
                masks.push(ds.annotation_mask(ann)?);
                categories.push(ann.category_id);
            }
            Ok(SceneSample::new(im.height, im.width, rgb, depth, masks, categories)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ds, samples))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(Error::io(dir)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Category id from an `<instance>-<category>.pgm` file name.
fn mask_category(path: &Path) -> Result<u64> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    stem.rsplit_once('-')
        .and_then(|(_, c)| c.parse().ok())
        .ok_or_else(|| Error::format(path, "mask files are named <instance>-<category>.pgm"))
}

/// Builds a COCO file from `DIR/<image>/<instance>-<category>.pgm` masks, where
/// any nonzero sample is foreground. `categories.json` in `DIR`, when present,
/// names the categories; otherwise they are named after their ids.
pub fn convert_masks(dir: &Path, opts: &AnnotateOptions) -> Result<CocoDataset> {
    let names_path = dir.join("categories.json");
    let named: Option<Vec<CocoCategory>> = if names_path.exists() {
        Some(json::read_json(&names_path)?)
    } else {
        None
    };
    let mut ds = CocoDataset::default();
    let mut seen = BTreeMap::new();
    for image_dir in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        let mut masks: Vec<(u64, Mask)> = Vec::new();
        let mut size = None;
        for file in sorted_entries(&image_dir)? {
            if file.extension().and_then(|e| e.to_str()) != Some("pgm") {
                continue;
            }
            let r = pnm::read(&file)?;
            if r.channels != 1 {
                return Err(Error::format(&file, "masks must be single-channel"));
            }
            if *size.get_or_insert((r.width, r.height)) != (r.width, r.height) {
                return Err(Error::format(&file, "mask size differs from the other masks of its image"));
            }
            let bits = r.samples.iter().map(|&v| v != 0).collect();
            let mask = Mask::from_bits(r.height, r.width, bits)?;
            if !mask.is_empty() {
                masks.push((mask_category(&file)?, mask));
            }
        }
        let (Some((width, height)), false) = (size, masks.is_empty()) else {
            continue;
        };
        let image_id = ds.images.len() as u64 + 1;
        let name = image_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        ds.images.push(CocoImage {
            id: image_id,
            file_name: name,
            depth_file_name: String::new(),
            width,
            height,
        });
        for (category, mask) in &masks {
            seen.insert(*category, ());
            let id = ds.annotations.len() as u64 + 1;
            ds.annotations.push(annotation_from_mask(id, image_id, *category, mask, opts)?);
        }
    }
    ds.categories = match named {
        Some(c) => c,
        None => seen
            .keys()
            .map(|&id| CocoCategory {
                id,
                name: format!("category_{id}"),
            })
            .collect(),
    };
    let violations = validate_dataset(&ds);
    if !violations.is_empty() {
        return Err(iamseg_core::Error::Validation(violations).into());
    }
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub train_fraction: f64,
    pub train: SplitManifest,
    pub val: SplitManifest,
}
