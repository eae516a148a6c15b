use std::fs;
use std::path::Path;

use clap::CommandFactory;
use iamseg::cli::{run, Cli, EXIT_INVALID, EXIT_OK, EXIT_USAGE};
use iamseg_core::data::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage, Segmentation};

fn iamseg(args: &[&str]) -> i32 {
    run(std::iter::once("iamseg").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn every_flag_is_documented() {
    let mut root = Cli::command();
    root.build();
    let mut checked = 0;
    for sub in root.get_subcommands() {
        let help = sub.clone().render_long_help().to_string();
        assert!(sub.get_about().is_some(), "{} lacks a description", sub.get_name());
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str();
            if id == "help" || id == "version" {
                continue;
            }
            let long = arg.get_long().unwrap_or_else(|| panic!("{}: {id} has no long flag", sub.get_name()));
            assert!(arg.get_help().is_some(), "{} --{long} has no help text", sub.get_name());
            assert!(help.contains(&format!("--{long}")), "{} --help omits --{long}", sub.get_name());
            checked += 1;
        }
    }
    assert!(checked > 40, "only {checked} flags seen");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(iamseg(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(iamseg(&["gen", "--out", "x", "--bogus-flag"]), EXIT_USAGE);
    assert_eq!(iamseg(&["gradcheck", "--module", "nope"]), EXIT_USAGE);
    assert_eq!(iamseg(&["bench", "--kinds", "rgb,banana"]), EXIT_USAGE);
    assert_eq!(iamseg(&["--threads", "0", "gradcheck", "--module", "matmul", "--trials", "1"]), EXIT_USAGE);
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(iamseg(&["--help"]), EXIT_OK);
    assert_eq!(iamseg(&["train", "--help"]), EXIT_OK);
}

#[test]
fn gradcheck_passes_for_a_module() {
    assert_eq!(iamseg(&["gradcheck", "--module", "iam", "--seed", "7"]), EXIT_OK);
}

fn square(id: u64, image_id: u64, category_id: u64, x: f64, y: f64, side: f64) -> CocoAnnotation {
    CocoAnnotation {
        id,
        image_id,
        category_id,
        segmentation: Segmentation::Polygons(vec![vec![x, y, x + side, y, x + side, y + side, x, y + side]]),
        bbox: [x, y, side, side],
        area: side * side,
        iscrowd: 0,
    }
}

/// Three 100×100 images with 2, 4 and 6 unit-spaced squares; image k uses
/// categories 1..=k, so the mean number of categories per image is 2.
fn analytic_fixture() -> CocoDataset {
    let mut ds = CocoDataset {
        categories: (1..=3)
            .map(|id| CocoCategory {
                id,
                name: format!("c{id}"),
            })
            .collect(),
        ..CocoDataset::default()
    };
    let mut next = 1;
    for (image_id, objects) in [(1u64, 2usize), (2, 4), (3, 6)] {
        ds.images.push(CocoImage {
            id: image_id,
            file_name: format!("{image_id}.ppm"),
            depth_file_name: String::new(),
            width: 100,
            height: 100,
        });
        for j in 0..objects {
            let category = 1 + (j as u64 % image_id);
            ds.annotations.push(square(next, image_id, category, 10.0 * j as f64, 5.0, 5.0));
            next += 1;
        }
    }
    ds
}

#[test]
fn stats_on_the_analytic_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("fixture.json");
    iamseg::json::write_canonical(&input, &analytic_fixture()).unwrap();
    assert_eq!(iamseg(&["validate", "--in", p(&input)]), EXIT_OK);
    let out = dir.path().join("s");
    assert_eq!(iamseg(&["stats", "--in", p(&input), "--out-dir", p(&out)]), EXIT_OK);
    for f in iamseg::report::STATS_FILES {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row, ["3", "3", "12", "4", "2", "0"]);
    let hist = fs::read_to_string(out.join("categories_per_image_hist.csv")).unwrap();
    assert_eq!(hist, "categories_in_image,images\n1,1\n2,1\n3,1\n");
    let per_cat = fs::read_to_string(out.join("instances_per_category.csv")).unwrap();
    assert_eq!(per_cat, "category_id,name,instances\n1,c1,6\n2,c2,4\n3,c3,2\n");
    let scatter = fs::read_to_string(out.join("bbox_scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 13);
    assert!(scatter.lines().skip(1).all(|l| l.ends_with(",0.05,0.05")));
}

#[test]
fn validate_flags_a_dangling_image_reference() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = analytic_fixture();
    ds.annotations[0].image_id = 99;
    let input = dir.path().join("bad.json");
    iamseg::json::write_canonical(&input, &ds).unwrap();
    assert_eq!(iamseg(&["validate", "--in", p(&input)]), EXIT_INVALID);
}

#[test]
fn malformed_json_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("broken.json");
    fs::write(&input, "{\"images\": [}").unwrap();
    assert_eq!(iamseg(&["validate", "--in", p(&input)]), EXIT_INVALID);
}

#[test]
fn gen_and_split_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let args = ["gen", "--out", p(out), "--count", "8", "--seed", "11", "--mode", "ambiguous"];
        assert_eq!(iamseg(&args), EXIT_OK);
        let split = out.join("split.json");
        assert_eq!(iamseg(&["split", "--in", p(out), "--out", p(&split), "--seed", "2"]), EXIT_OK);
    }
    for f in ["annotations.json", "generator.json", "split.json", "rgb/000002.ppm", "depth/000005.pgm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    fs::write(&cfg, r#"{"count": 3, "seed": 4, "generator": {"height": 32, "width": 40}}"#).unwrap();
    let out = dir.path().join("d");
    assert_eq!(iamseg(&["gen", "--out", p(&out), "--config", p(&cfg), "--width", "48"]), EXIT_OK);
    let ds = iamseg::dataset::load_coco(&out.join("annotations.json")).unwrap();
    assert_eq!(ds.images.len(), 3);
    assert!(ds.images.iter().all(|im| im.height == 32 && im.width == 48));
}

#[test]
fn convert_reads_per_instance_masks() {
    let dir = tempfile::tempdir().unwrap();
    let masks = dir.path().join("masks");
    let img = masks.join("scene_a");
    fs::create_dir_all(&img).unwrap();
    let mut a = vec![0u16; 6 * 5];
    let mut b = vec![0u16; 6 * 5];
    for r in 1..3 {
        for c in 1..4 {
            a[r * 5 + c] = 1;
        }
    }
    b[5 * 5 + 4] = 255;
    iamseg::pnm::write_pgm16(&img.join("1-2.pgm"), 5, 6, &a).unwrap();
    iamseg::pnm::write_pgm16(&img.join("2-7.pgm"), 5, 6, &b).unwrap();
    fs::create_dir_all(masks.join("empty_scene")).unwrap();
    let out = dir.path().join("coco.json");
    assert_eq!(iamseg(&["convert", "--masks", p(&masks), "--out", p(&out)]), EXIT_OK);
    let ds: CocoDataset = iamseg::dataset::load_coco(&out).unwrap();
    assert_eq!(ds.images.len(), 1);
    assert_eq!((ds.images[0].width, ds.images[0].height), (5, 6));
    assert_eq!(ds.annotations.len(), 2);
    assert_eq!(ds.annotations[0].bbox, [1.0, 1.0, 3.0, 2.0]);
    assert_eq!(ds.annotations[0].area, 6.0);
    assert_eq!(ds.annotations[1].category_id, 7);
    assert_eq!(ds.categories.iter().map(|c| c.id).collect::<Vec<_>>(), vec![2, 7]);
    assert_eq!(iamseg(&["validate", "--in", p(&out)]), EXIT_OK);
}

#[test]
fn eval_scores_ground_truth_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let ds = analytic_fixture();
    let gt = dir.path().join("gt.json");
    iamseg::json::write_canonical(&gt, &ds).unwrap();
    let dets: Vec<iamseg_core::eval::Detection> = ds
        .annotations
        .iter()
        .map(|a| iamseg_core::eval::Detection {
            image_id: a.image_id,
            category_id: a.category_id,
            score: 1.0,
            bbox: a.bbox,
            segmentation: a.segmentation.clone(),
        })
        .collect();
    let dt = dir.path().join("dt.json");
    iamseg::json::write_canonical(&dt, &dets).unwrap();
    let out = dir.path().join("report.json");
    assert_eq!(iamseg(&["eval", "--gt", p(&gt), "--dt", p(&dt), "--out", p(&out)]), EXIT_OK);
    let report: iamseg_core::eval::ApReport = iamseg::json::read_json(&out).unwrap();
    assert_eq!(report.segm.ap, Some(1.0));
    assert_eq!(report.bbox.ap50, Some(1.0));
    assert_eq!(report.segm.ap_m, None);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"ap_l\": \"undefined\""));
}

#[test]
fn train_writes_identical_artifacts_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let args = [
            "train", "--out", p(out), "--seed", "3", "--epochs", "2", "--train-size", "4", "--val-size", "2",
            "--kind", "iam+cdf", "--height", "32", "--width", "32", "--validate-every-epoch",
        ];
        assert_eq!(iamseg(&args), EXIT_OK);
    }
    let files = ["trace.csv", "report.json", "val_gt.json", "val_detections.json", "checkpoint/manifest.json"];
    for f in files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let mut tensors: Vec<_> = fs::read_dir(a.join("checkpoint")).unwrap().map(|e| e.unwrap().file_name()).collect();
    tensors.sort();
    assert!(tensors.len() > 10);
    for name in tensors {
        assert_eq!(
            fs::read(a.join("checkpoint").join(&name)).unwrap(),
            fs::read(b.join("checkpoint").join(&name)).unwrap()
        );
    }
    let trace = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    assert!(trace.starts_with("epoch,loss_total,loss_class,"));
    let model = iamseg::checkpoint::load_checkpoint(&a.join("checkpoint")).unwrap();
    assert_eq!(model.cfg.input_size, (32, 32));
}

#[test]
fn train_on_a_dataset_directory_with_a_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(iamseg(&["gen", "--out", p(&data), "--count", "5", "--height", "32", "--width", "32"]), EXIT_OK);
    let split = dir.path().join("split.json");
    assert_eq!(iamseg(&["split", "--in", p(&data), "--out", p(&split), "--train-fraction", "0.6"]), EXIT_OK);
    let out = dir.path().join("run");
    let args = ["train", "--out", p(&out), "--data", p(&data), "--split", p(&split), "--epochs", "1", "--kind", "none"];
    assert_eq!(iamseg(&args), EXIT_OK);
    let gt: CocoDataset = iamseg::dataset::load_coco(&out.join("val_gt.json")).unwrap();
    assert_eq!(gt.images.len(), 2);
}

#[test]
fn bench_tabulates_runs_and_means() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let args = [
        "bench", "--kinds", "rgb,iam", "--seeds", "2", "--epochs", "1", "--train-size", "3", "--val-size", "2",
        "--height", "32", "--width", "32", "--out", p(&out),
    ];
    assert_eq!(iamseg(&args), EXIT_OK);
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][..3], ["kind", "design", "seed"]);
    let keys: Vec<(&str, &str)> = rows[1..].iter().map(|r| (r[0], r[2])).collect();
    assert_eq!(
        keys,
        [("none", "0"), ("none", "1"), ("iam", "0"), ("iam", "1"), ("none", "mean"), ("iam", "mean")]
    );
    let again = dir.path().join("again.csv");
    let mut args2 = args;
    args2[args2.len() - 1] = p(&again);
    assert_eq!(iamseg(&args2), EXIT_OK);
    assert_eq!(text, fs::read_to_string(&again).unwrap());
}
