//! Synthetic scenes and the mask → polygon → COCO annotation pipeline.

mod coco;
mod mask;
mod scene;

pub use coco::{
    annotate, annotation_from_mask, depth_file_name, rgb_file_name, shape_categories, split_dataset, subset,
    validate_dataset, AnnotateOptions, Annotated, CocoAnnotation, CocoCategory, CocoDataset, CocoImage, RleCounts,
    RleJson, Segmentation, SplitManifest,
};
pub use mask::{mask_to_polygon, mask_to_rle, polygon_area, polygon_to_mask, rle_to_mask, Mask, Polygon, Rle};
pub use scene::{
    generate_scene, ownership, plan_scene, render_layout, ColorMode, DepthMode, GeneratorConfig, PlacedShape,
    SceneLayout, SceneSample, ShapeKind, Symmetry,
};
