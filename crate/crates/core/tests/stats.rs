use iamseg_core::data::*;
use iamseg_core::stats::*;
use iamseg_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(id: u64, w: usize, h: usize) -> CocoImage {
    CocoImage { id, file_name: format!("{id}.ppm"), depth_file_name: String::new(), width: w, height: h }
}

fn ann(id: u64, image_id: u64, category_id: u64, bbox: [f64; 4], area: f64) -> CocoAnnotation {
    let [x, y, w, h] = bbox;
    CocoAnnotation {
        id,
        image_id,
        category_id,
        segmentation: Segmentation::Polygons(vec![vec![x, y, x + w, y, x + w, y + h, x, y + h]]),
        bbox,
        area,
        iscrowd: 0,
    }
}

fn categories(n: u64) -> Vec<CocoCategory> {
    (1..=n).map(|id| CocoCategory { id, name: format!("c{id}") }).collect()
}

/// 3 images with 2/4/6 objects; image k uses categories 1..=k.
fn analytic_fixture() -> CocoDataset {
    let mut ds = CocoDataset { categories: categories(3), ..Default::default() };
    let mut next = 1;
    for (img, objects) in [(1u64, 2usize), (2, 4), (3, 6)] {
        ds.images.push(image(img, 10, 10));
        for k in 0..objects {
            let cat = (k as u64 % img) + 1;
            ds.annotations.push(ann(next, img, cat, [0.0, 0.0, 1.0, 1.0], 1.0));
            next += 1;
        }
    }
    ds
}

#[test]
fn analytic_summary() {
    let s = summarize(&analytic_fixture()).unwrap();
    assert_eq!(s.image_count, 3);
    assert_eq!(s.class_count, 3);
    assert_eq!(s.mean_objects_per_image, 4.0);
    assert_eq!(s.mean_categories_per_image, 2.0);
    assert_eq!(s.per_category_instance_counts.values().sum::<usize>(), 12);
    assert_eq!(s.categories_per_image_histogram.into_iter().collect::<Vec<_>>(), vec![(1, 1), (2, 1), (3, 1)]);
}

#[test]
fn single_image_three_categories() {
    let mut ds = CocoDataset { categories: categories(3), images: vec![image(1, 5, 5)], ..Default::default() };
    for c in 1..=3 {
        ds.annotations.push(ann(c, 1, c, [0.0, 0.0, 1.0, 1.0], 1.0));
    }
    assert_eq!(summarize(&ds).unwrap().mean_categories_per_image, 3.0);
}

#[test]
fn empty_dataset_is_rejected() {
    assert!(matches!(summarize(&CocoDataset::default()), Err(Error::EmptyInput { .. })));
}

#[test]
fn unannotated_images_are_excluded_from_means() {
    let mut ds = analytic_fixture();
    ds.images.push(image(9, 10, 10));
    let s = summarize(&ds).unwrap();
    assert_eq!((s.image_count, s.unannotated_images, s.mean_objects_per_image), (3, 1, 4.0));
}

#[test]
fn single_annotation_cdf() {
    let ds = CocoDataset {
        images: vec![image(1, 100, 100)],
        annotations: vec![ann(1, 1, 1, [0.0, 0.0, 5.0, 5.0], 25.0)],
        categories: categories(1),
    };
    let cdf = relative_scale_cdf(&ds).unwrap();
    assert_eq!(cdf, vec![ScalePoint { relative_scale: 0.05, cumulative_fraction: 1.0 }]);
}

#[test]
fn two_point_cdf() {
    // Areas giving scales 0.3 and 0.1 on a 100x100 image.
    let ds = CocoDataset {
        images: vec![image(1, 100, 100)],
        annotations: vec![
            ann(1, 1, 1, [0.0, 0.0, 30.0, 30.0], 900.0),
            ann(2, 1, 1, [0.0, 0.0, 10.0, 10.0], 100.0),
        ],
        categories: categories(1),
    };
    let cdf = relative_scale_cdf(&ds).unwrap();
    let pts: Vec<(f64, f64)> = cdf.iter().map(|p| (p.relative_scale, p.cumulative_fraction)).collect();
    assert_eq!(pts, vec![(0.1, 0.5), (0.3, 1.0)]);
    let grid = resample_cdf(&cdf, 100);
    assert_eq!(grid.len(), 100);
    assert_eq!(grid[8].cumulative_fraction, 0.0);
    assert_eq!(grid[9].cumulative_fraction, 0.5);
    assert_eq!(grid[99].cumulative_fraction, 1.0);
}

#[test]
fn sampled_scales_match_uniform_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let side = 1000usize;
    let mut ds = CocoDataset { images: vec![image(1, side, side)], categories: categories(1), ..Default::default() };
    for id in 1..=1000 {
        let s: f64 = rng.gen_range(1e-6..=0.2);
        let area = s * s * (side * side) as f64;
        ds.annotations.push(ann(id, 1, 1, [0.0, 0.0, 1.0, 1.0], area));
    }
    let cdf = relative_scale_cdf(&ds).unwrap();
    let below = cdf.iter().filter(|p| p.relative_scale < 0.04).count() as f64 / 1000.0;
    assert!((below - 0.2).abs() <= 0.04, "{below}");
}

#[test]
fn zero_area_is_a_validation_error() {
    let ds = CocoDataset {
        images: vec![image(1, 10, 10)],
        annotations: vec![ann(4, 1, 1, [0.0, 0.0, 1.0, 1.0], 0.0)],
        categories: categories(1),
    };
    match relative_scale_cdf(&ds) {
        Err(Error::Validation(v)) => assert!(v[0].starts_with("annotation 4")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn scatter_examples() {
    let ds = CocoDataset {
        images: vec![image(1, 100, 100)],
        annotations: vec![
            ann(1, 1, 1, [0.0, 0.0, 100.0, 100.0], 10000.0),
            ann(2, 1, 1, [10.0, 10.0, 50.0, 25.0], 1250.0),
            ann(3, 1, 1, [5.0, 5.0, 20.0, 20.0], 400.0),
        ],
        categories: categories(1),
    };
    let pts = bbox_scatter(&ds).unwrap();
    assert_eq!(pts[0], (1.0, 1.0));
    assert_eq!(pts[1], (0.5, 0.25));
    assert_eq!(pts[2].0, pts[2].1);

    let mut bad = ds.clone();
    bad.annotations[1].bbox = [60.0, 0.0, 50.0, 10.0];
    assert!(matches!(bbox_scatter(&bad), Err(Error::Validation(_))));
}

#[test]
fn generated_dataset_counts_agree() {
    let samples: Vec<SceneSample> =
        (0..12).map(|s| generate_scene(&GeneratorConfig::default(), s).unwrap()).collect();
    let ds = annotate(&samples, &AnnotateOptions::default()).unwrap().dataset;
    let s = summarize(&ds).unwrap();
    let n = ds.annotations.len();
    assert_eq!(bbox_scatter(&ds).unwrap().len(), n);
    assert_eq!(relative_scale_cdf(&ds).unwrap().len(), n);
    assert_eq!(s.per_category_instance_counts.values().sum::<usize>(), n);
    assert_eq!(s.categories_per_image_histogram.values().sum::<usize>(), s.image_count);
}

proptest! {
    #[test]
    fn summary_ignores_order_and_cdf_is_valid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ds = CocoDataset { categories: categories(4), ..Default::default() };
        let n_img = rng.gen_range(1..6);
        let mut id = 1;
        for img in 1..=n_img {
            ds.images.push(image(img, 20, 20));
            for _ in 0..rng.gen_range(1..5) {
                let side = rng.gen_range(1..=20) as f64;
                ds.annotations.push(ann(id, img, rng.gen_range(1..=4), [0.0, 0.0, side, side], side * side));
                id += 1;
            }
        }
        let base = summarize(&ds).unwrap();
        let mut shuffled = ds.clone();
        shuffled.images.shuffle(&mut rng);
        shuffled.annotations.shuffle(&mut rng);
        prop_assert_eq!(summarize(&shuffled).unwrap(), base);

        let cdf = relative_scale_cdf(&ds).unwrap();
        prop_assert_eq!(cdf.last().unwrap().cumulative_fraction, 1.0);
        for w in cdf.windows(2) {
            prop_assert!(w[0].relative_scale <= w[1].relative_scale);
            prop_assert!(w[0].cumulative_fraction <= w[1].cumulative_fraction);
        }
        for p in &cdf {
            prop_assert!(p.relative_scale > 0.0 && p.relative_scale <= 1.0);
        }
    }
}
