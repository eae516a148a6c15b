//! COCO-style dataset records, construction from scenes, validation and splits.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::{mask_to_polygon, mask_to_rle, polygon_to_mask, rle_to_mask, Mask, Polygon, Rle};
use super::scene::{SceneSample, ShapeKind};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub depth_file_name: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: Segmentation,
    /// `[x, y, w, h]` in pixel-corner coordinates.
    pub bbox: [f64; 4],
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Polygons(Vec<Polygon>),
    Rle(RleJson),
}

/// RLE as stored in JSON: `size` is `[height, width]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RleJson {
    pub size: [usize; 2],
    pub counts: RleCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Raw(Vec<u32>),
    Compressed(String),
}

impl From<&Rle> for RleJson {
    fn from(rle: &Rle) -> Self {
        RleJson {
            size: [rle.height, rle.width],
            counts: RleCounts::Raw(rle.counts.clone()),
        }
    }
}

impl RleJson {
    pub fn to_rle(&self) -> Result<Rle> {
        let [height, width] = self.size;
        match &self.counts {
            RleCounts::Raw(counts) => Ok(Rle {
                height,
                width,
                counts: counts.clone(),
            }),
            RleCounts::Compressed(s) => Rle::from_compressed(height, width, s),
        }
    }
}

impl Segmentation {
    /// Decodes to a bitmap of the given image size.
    pub fn decode(&self, height: usize, width: usize) -> Result<Mask> {
        match self {
            Segmentation::Polygons(polys) => polygon_to_mask(polys, height, width),
            Segmentation::Rle(rle) => {
                if rle.size != [height, width] {
                    return Err(Error::Format(format!(
                        "rle size {:?} differs from image {height}x{width}",
                        rle.size
                    )));
                }
                rle_to_mask(&rle.to_rle()?)
            }
        }
    }
}

impl CocoDataset {
    pub fn image(&self, id: u64) -> Option<&CocoImage> {
        self.images.iter().find(|im| im.id == id)
    }

    /// Decoded mask of one annotation against its image size.
    pub fn annotation_mask(&self, ann: &CocoAnnotation) -> Result<Mask> {
        let image = self
            .image(ann.image_id)
            .ok_or_else(|| Error::contract(format!("annotation {} references missing image", ann.id)))?;
        ann.segmentation.decode(image.height, image.width)
    }
}

/// Knobs for [`annotate`].
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotateOptions {
    /// Masks needing more polygons than this are stored as RLE.
    pub polygon_limit: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions { polygon_limit: 4 }
    }
}

/// Dataset built from scenes plus the sample index behind each kept image.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotated {
    pub dataset: CocoDataset,
    pub kept: Vec<usize>,
}

pub fn rgb_file_name(image_id: u64) -> String {
    format!("rgb/{image_id:06}.ppm")
}

pub fn depth_file_name(image_id: u64) -> String {
    format!("depth/{image_id:06}.pgm")
}

pub fn shape_categories() -> Vec<CocoCategory> {
    [ShapeKind::Rectangle, ShapeKind::Ellipse]
        .iter()
        .map(|k| CocoCategory {
            id: k.category_id(),
            name: k.name().to_string(),
        })
        .collect()
}

/// Converts scenes to COCO records: masks become polygons (or RLE past the limit),
/// boxes and areas come from the masks, scenes without instances are dropped.
pub fn annotate(samples: &[SceneSample], opts: &AnnotateOptions) -> Result<Annotated> {
    let mut ds = CocoDataset {
        categories: shape_categories(),
        ..CocoDataset::default()
    };
    let mut kept = Vec::new();
    for (index, sample) in samples.iter().enumerate() {
        let masks: Vec<&Mask> = sample.instance_masks.iter().filter(|m| !m.is_empty()).collect();
        if masks.is_empty() {
            continue;
        }
        let image_id = ds.images.len() as u64 + 1;
        ds.images.push(CocoImage {
            id: image_id,
            file_name: rgb_file_name(image_id),
            depth_file_name: depth_file_name(image_id),
            width: sample.width,
            height: sample.height,
        });
        let cats = sample.instance_masks.iter().zip(&sample.categories).filter(|(m, _)| !m.is_empty());
        for (mask, &category_id) in cats {
            ds.annotations.push(annotation_from_mask(
                ds.annotations.len() as u64 + 1,
                image_id,
                category_id,
                mask,
                opts,
            )?);
        }
        kept.push(index);
    }
    let violations = validate_dataset(&ds);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(Annotated { dataset: ds, kept })
}

pub fn annotation_from_mask(
    id: u64,
    image_id: u64,
    category_id: u64,
    mask: &Mask,
    opts: &AnnotateOptions,
) -> Result<CocoAnnotation> {
    let polygons = mask_to_polygon(mask)?;
    let segmentation = if polygons.len() > opts.polygon_limit {
        Segmentation::Rle(RleJson::from(&mask_to_rle(mask)))
    } else {
        Segmentation::Polygons(polygons)
    };
    Ok(CocoAnnotation {
        id,
        image_id,
        category_id,
        segmentation,
        bbox: mask.tight_box().unwrap_or([0.0; 4]),
        area: mask.area() as f64,
        iscrowd: 0,
    })
}

fn duplicates(ids: impl Iterator<Item = u64>) -> Vec<u64> {
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dup.insert(id);
        }
    }
    dup.into_iter().collect()
}

/// Lists every broken dataset invariant; empty means valid.
pub fn validate_dataset(ds: &CocoDataset) -> Vec<String> {
    let mut out = Vec::new();
    for id in duplicates(ds.images.iter().map(|i| i.id)) {
        out.push(format!("image {id}: duplicate id"));
    }
    for id in duplicates(ds.categories.iter().map(|c| c.id)) {
        out.push(format!("category {id}: duplicate id"));
    }
    for id in duplicates(ds.annotations.iter().map(|a| a.id)) {
        out.push(format!("annotation {id}: duplicate id"));
    }
    let images: BTreeMap<u64, &CocoImage> = ds.images.iter().map(|i| (i.id, i)).collect();
    let categories: BTreeSet<u64> = ds.categories.iter().map(|c| c.id).collect();
    for im in &ds.images {
        if im.width == 0 || im.height == 0 {
            out.push(format!("image {}: zero size {}x{}", im.id, im.width, im.height));
        }
    }
    let mut annotated = BTreeSet::new();
    for ann in &ds.annotations {
        let id = ann.id;
        if !categories.contains(&ann.category_id) {
            out.push(format!("annotation {id}: unknown category {}", ann.category_id));
        }
        let Some(im) = images.get(&ann.image_id) else {
            out.push(format!("annotation {id}: unknown image {}", ann.image_id));
            continue;
        };
        annotated.insert(ann.image_id);
        if im.width == 0 || im.height == 0 {
            continue;
        }
        if let Segmentation::Polygons(polys) = &ann.segmentation {
            let outside = polys.iter().flat_map(|p| p.chunks(2)).any(|pt| {
                pt.len() != 2
                    || !(0.0..=im.width as f64).contains(&pt[0])
                    || !(0.0..=im.height as f64).contains(&pt[1])
            });
            if outside {
                out.push(format!("annotation {id}: polygon vertex outside image bounds"));
                continue;
            }
        }
        let mask = match ann.segmentation.decode(im.height, im.width) {
            Ok(m) => m,
            Err(e) => {
                out.push(format!("annotation {id}: undecodable segmentation ({e})"));
                continue;
            }
        };
        let Some(tight) = mask.tight_box() else {
            out.push(format!("annotation {id}: segmentation decodes to an empty mask"));
            continue;
        };
        let count = mask.area() as f64;
        if !((ann.area - count).abs() <= 1.0) {
            out.push(format!("annotation {id}: area {} differs from mask pixel count {count}", ann.area));
        }
        if ann.bbox.iter().zip(&tight).any(|(a, b)| (a - b).abs() > 1e-9) {
            out.push(format!(
                "annotation {id}: bbox {:?} is not the tight box {:?} of its mask",
                ann.bbox, tight
            ));
        }
    }
    for im in &ds.images {
        if !annotated.contains(&im.id) {
            out.push(format!("image {}: no annotations", im.id));
        }
    }
    out
}

/// Image and annotation ids belonging to one side of a split.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitManifest {
    pub image_ids: Vec<u64>,
    pub annotation_ids: Vec<u64>,
}

/// Seeded image-level split; the train side gets `floor(n * fraction)` images.
pub fn split_dataset(ds: &CocoDataset, train_fraction: f64, seed: u64) -> Result<(SplitManifest, SplitManifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::contract(format!(
            "split fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = ds.images.len();
    // The epsilon keeps products such as 0.29 * 100 from flooring one short.
    let n_train = libm::floor(n as f64 * train_fraction + 1e-9) as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::contract(format!(
            "split of {n} images at {train_fraction} leaves one side empty"
        )));
    }
    let mut ids: Vec<u64> = ds.images.iter().map(|i| i.id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let side = |chosen: &[u64]| {
        let set: BTreeSet<u64> = chosen.iter().copied().collect();
        SplitManifest {
            image_ids: set.iter().copied().collect(),
            annotation_ids: ds
                .annotations
                .iter()
                .filter(|a| set.contains(&a.image_id))
                .map(|a| a.id)
                .collect(),
        }
    };
    Ok((side(&ids[..n_train]), side(&ids[n_train..])))
}

/// Restricts a dataset to the images of a manifest.
pub fn subset(ds: &CocoDataset, manifest: &SplitManifest) -> CocoDataset {
    let keep: BTreeSet<u64> = manifest.image_ids.iter().copied().collect();
    CocoDataset {
        images: ds.images.iter().filter(|i| keep.contains(&i.id)).cloned().collect(),
        annotations: ds
            .annotations
            .iter()
            .filter(|a| keep.contains(&a.image_id))
            .cloned()
            .collect(),
        categories: ds.categories.clone(),
    }
}
