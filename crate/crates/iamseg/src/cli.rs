//! Argument parsing and the subcommand drivers.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iamseg_core::data::{annotate, AnnotateOptions, CocoDataset, DepthMode, GeneratorConfig, SceneSample};
use iamseg_core::eval::{evaluate, ApReport, Detection};
use iamseg_core::model::{predict, predictions_to_detections, train, FusionKind, Model, RoutingDesign};
use serde::{Deserialize, Serialize};

use crate::bench::{run_one, table_csv, write_table, Protocol, RunResult};
use crate::dataset::{self, build_coco, generate_scenes, SplitFile};
use crate::error::{Error, Result};
use crate::gradcheck::{check_module, GradModule, TOLERANCE};
use crate::{checkpoint, json, report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "iamseg", version, about = "RGB-D instance segmentation toolkit with attention-mix fusion")]
pub struct Cli {
    /// Cap on worker threads for parallel stages (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic RGB-D dataset (images plus COCO JSON)
    Gen(GenArgs),
    /// Build COCO JSON from a directory of per-instance mask images
    Convert(ConvertArgs),
    /// Check a COCO JSON file against every dataset invariant
    Validate(ValidateArgs),
    /// Write dataset statistics CSVs
    Stats(StatsArgs),
    /// Split a dataset into train and validation manifests
    Split(SplitArgs),
    /// Train a model and write checkpoint, trace and validation outputs
    Train(TrainArgs),
    /// Score detections against ground truth
    Eval(EvalArgs),
    /// Compare analytic gradients with central differences
    Gradcheck(GradcheckArgs),
    /// Train fusion kinds over several seeds and tabulate AP
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Distinct,
    Ambiguous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DepthArg {
    Flat,
    Gradient,
}

/// Scene generator overrides shared by `gen`, `train` and `bench`.
#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Colour mode of generated scenes
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Depth profile of generated objects
    #[arg(long, value_enum)]
    pub depth_mode: Option<DepthArg>,
    /// Image height in pixels
    #[arg(long)]
    pub height: Option<usize>,
    /// Image width in pixels
    #[arg(long)]
    pub width: Option<usize>,
    /// Fewest instances per scene
    #[arg(long)]
    pub min_instances: Option<usize>,
    /// Most instances per scene
    #[arg(long)]
    pub max_instances: Option<usize>,
}

impl SceneArgs {
    fn apply(&self, g: &mut GeneratorConfig) {
        if let Some(m) = self.mode {
            let base = match m {
                ModeArg::Distinct => GeneratorConfig::default(),
                ModeArg::Ambiguous => GeneratorConfig::ambiguous(),
            };
            g.color_mode = base.color_mode;
            g.shapes = base.shapes;
        }
        if let Some(d) = self.depth_mode {
            g.depth_mode = match d {
                DepthArg::Flat => DepthMode::Flat,
                DepthArg::Gradient => DepthMode::Gradient,
            };
        }
        set(&mut g.height, self.height);
        set(&mut g.width, self.width);
        set(&mut g.min_instances, self.min_instances);
        set(&mut g.max_instances, self.max_instances);
    }
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes to generate
    #[arg(long)]
    pub count: Option<usize>,
    /// Run seed (default 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Masks needing more polygons than this are stored as RLE
    #[arg(long)]
    pub polygon_limit: Option<usize>,
    /// JSON file with `generator`, `count` and `polygon_limit` fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub generator: GeneratorConfig,
    pub count: usize,
    pub polygon_limit: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            generator: GeneratorConfig::default(),
            count: 100,
            polygon_limit: AnnotateOptions::default().polygon_limit,
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Directory of `<image>/<instance>-<category>.pgm` masks
    #[arg(long)]
    pub masks: PathBuf,
    /// Output COCO JSON file
    #[arg(long)]
    pub out: PathBuf,
    /// Masks needing more polygons than this are stored as RLE
    #[arg(long, default_value_t = AnnotateOptions::default().polygon_limit)]
    pub polygon_limit: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// COCO JSON file or dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// COCO JSON file or dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Directory receiving the CSV files
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Bins of the resampled CDF block in scale_cdf.csv (0 disables it)
    #[arg(long, default_value_t = 100)]
    pub cdf_bins: usize,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// COCO JSON file or dataset directory
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output manifest JSON
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of images on the training side
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Shuffle seed (default 0)
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Training overrides shared by `train` and `bench`.
#[derive(Debug, Args)]
pub struct TrainingArgs {
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Samples per optimiser step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Synthetic training scenes per run
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Synthetic validation scenes per run
    #[arg(long)]
    pub val_size: Option<usize>,
    /// Object queries of the prediction head
    #[arg(long)]
    pub num_queries: Option<usize>,
    /// JSON file with `generator`, `train_size`, `val_size`, `model` and `train` fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArgs,
}

impl TrainingArgs {
    fn protocol(&self) -> Result<Protocol> {
        let mut p: Protocol = match &self.config {
            Some(path) => json::read_json(path)?,
            None => Protocol::default(),
        };
        self.scene.apply(&mut p.generator);
        set(&mut p.train.epochs, self.epochs);
        set(&mut p.train.lr, self.lr);
        set(&mut p.train.batch_size, self.batch_size);
        set(&mut p.train_size, self.train_size);
        set(&mut p.val_size, self.val_size);
        set(&mut p.model.num_queries, self.num_queries);
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output directory for checkpoint, trace and reports
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset directory to train on instead of synthetic scenes
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split manifest selecting train and validation images of --data
    #[arg(long, requires = "data")]
    pub split: Option<PathBuf>,
    /// Separate validation dataset directory
    #[arg(long, conflicts_with = "split")]
    pub val_data: Option<PathBuf>,
    /// Fusion kind: none, early, late, intra, inter, iam, cdf or iam+cdf
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<FusionKind>,
    /// Routing design A, B, C or D
    #[arg(long, value_parser = parse_design)]
    pub design: Option<RoutingDesign>,
    /// Run seed for data, initialisation and shuffling (default 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate on the validation set after every epoch
    #[arg(long)]
    pub validate_every_epoch: bool,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth COCO JSON file or dataset directory
    #[arg(long)]
    pub gt: PathBuf,
    /// Detections JSON (a list of detections)
    #[arg(long)]
    pub dt: PathBuf,
    /// Report JSON destination (standard output when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// matmul, softmax_rows, conv1x1, iam, cdf, set_loss or all
    #[arg(long, default_value = "all")]
    pub module: String,
    /// Base seed of the trials (default 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seeded trials per module
    #[arg(long, default_value_t = crate::gradcheck::TRIALS)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated fusion kinds
    #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "none,iam,cdf,iam+cdf")]
    pub kinds: Vec<FusionKind>,
    /// Comma-separated routing designs
    #[arg(long, value_delimiter = ',', value_parser = parse_design, default_value = "C")]
    pub designs: Vec<RoutingDesign>,
    /// Number of seeds per configuration
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// First seed (default 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination (standard output when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingArgs,
}

fn parse_kind(s: &str) -> std::result::Result<FusionKind, String> {
    s.parse().map_err(|e: iamseg_core::Error| e.to_string())
}

fn parse_design(s: &str) -> std::result::Result<RoutingDesign, String> {
    s.parse().map_err(|e: iamseg_core::Error| e.to_string())
}

fn seed_of(seed: Option<u64>) -> u64 {
    let s = seed.unwrap_or(0);
    eprintln!("seed: {s}");
    s
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_USAGE;
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Core(iamseg_core::Error::Validation(v)) = &e {
                for line in v {
                    eprintln!("  {line}");
                }
            }
            match e {
                Error::Usage(_) | Error::Core(iamseg_core::Error::Config(_)) => EXIT_USAGE,
                _ => EXIT_INVALID,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Convert(a) => convert(a),
        Command::Validate(a) => validate(a),
        Command::Stats(a) => stats(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench(a),
    }
}

fn gen(a: GenArgs) -> Result<i32> {
    let mut c: GenConfig = match &a.config {
        Some(path) => json::read_json(path)?,
        None => GenConfig::default(),
    };
    a.scene.apply(&mut c.generator);
    set(&mut c.count, a.count);
    set(&mut c.polygon_limit, a.polygon_limit);
    c.seed = seed_of(a.seed.or(a.config.as_ref().map(|_| c.seed)));
    let samples = generate_scenes(&c.generator, c.seed, c.count)?;
    let ds = build_coco(
        &samples,
        &a.out,
        &AnnotateOptions {
            polygon_limit: c.polygon_limit,
        },
    )?;
    json::write_canonical(&a.out.join("generator.json"), &c)?;
    eprintln!(
        "wrote {} images, {} annotations to {}",
        ds.images.len(),
        ds.annotations.len(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn convert(a: ConvertArgs) -> Result<i32> {
    let ds = dataset::convert_masks(
        &a.masks,
        &AnnotateOptions {
            polygon_limit: a.polygon_limit,
        },
    )?;
    json::write_canonical(&a.out, &ds)?;
    eprintln!("wrote {} images, {} annotations", ds.images.len(), ds.annotations.len());
    Ok(EXIT_OK)
}

fn validate(a: ValidateArgs) -> Result<i32> {
    let violations = dataset::validate_coco(&dataset::annotation_path(&a.input))?;
    if violations.is_empty() {
        println!("ok");
        Ok(EXIT_OK)
    } else {
        for v in &violations {
            println!("{v}");
        }
        eprintln!("{} violation(s)", violations.len());
        Ok(EXIT_INVALID)
    }
}

fn stats(a: StatsArgs) -> Result<i32> {
    let ds = dataset::load_coco(&dataset::annotation_path(&a.input))?;
    let violations = iamseg_core::data::validate_dataset(&ds);
    if !violations.is_empty() {
        eprintln!("warning: {} invariant violation(s); run `validate` for the list", violations.len());
    }
    let bins = (a.cdf_bins > 0).then_some(a.cdf_bins);
    let s = report::write_stats(&ds, &a.out_dir, bins)?;
    println!("images {}", s.image_count);
    println!("classes {}", s.class_count);
    println!("mean_objects_per_image {}", report::num(s.mean_objects_per_image));
    println!("mean_categories_per_image {}", report::num(s.mean_categories_per_image));
    if s.unannotated_images > 0 {
        eprintln!("note: {} image(s) without annotations left out of the means", s.unannotated_images);
    }
    Ok(EXIT_OK)
}

fn split(a: SplitArgs) -> Result<i32> {
    let seed = seed_of(a.seed);
    let ds = dataset::load_coco(&dataset::annotation_path(&a.input))?;
    let (train, val) = iamseg_core::data::split_dataset(&ds, a.train_fraction, seed)?;
    eprintln!("train {} images, val {} images", train.image_ids.len(), val.image_ids.len());
    json::write_canonical(
        &a.out,
        &SplitFile {
            seed,
            train_fraction: a.train_fraction,
            train,
            val,
        },
    )?;
    Ok(EXIT_OK)
}

fn select(ds: &CocoDataset, samples: &[SceneSample], ids: &[u64]) -> Vec<SceneSample> {
    ds.images
        .iter()
        .zip(samples)
        .filter(|(im, _)| ids.contains(&im.id))
        .map(|(_, s)| s.clone())
        .collect()
}

/// Scenes to train and validate on, from disk or generated.
fn training_data(a: &TrainArgs, p: &Protocol, seed: u64) -> Result<(Vec<SceneSample>, Vec<SceneSample>)> {
    let Some(dir) = &a.data else {
        return crate::bench::datasets(p, seed);
    };
    let (ds, samples) = dataset::load_samples(dir)?;
    if let Some(path) = &a.split {
        let manifest: SplitFile = json::read_json(path)?;
        return Ok((
            select(&ds, &samples, &manifest.train.image_ids),
            select(&ds, &samples, &manifest.val.image_ids),
        ));
    }
    let val = match &a.val_data {
        Some(v) => dataset::load_samples(v)?.1,
        None => Vec::new(),
    };
    Ok((samples, val))
}

/// Validation ground truth and detections; image ids follow the annotated order.
pub fn validation_outputs(model: &Model, val: &[SceneSample]) -> Result<(CocoDataset, Vec<Detection>)> {
    let ann = annotate(val, &AnnotateOptions::default())?;
    let mut dets = Vec::new();
    for (im, &k) in ann.dataset.images.iter().zip(&ann.kept) {
        let s = &val[k];
        let pred = predict(model, s)?;
        dets.extend(predictions_to_detections(&pred, im.id, s.height, s.width)?);
    }
    Ok((ann.dataset, dets))
}

fn train_cmd(a: TrainArgs) -> Result<i32> {
    let mut p = a.training.protocol()?;
    let seed = seed_of(a.seed.or(a.training.config.as_ref().map(|_| p.model.seed)));
    set(&mut p.model.fusion_kind, a.kind);
    set(&mut p.model.routing_design, a.design);
    p.model.seed = seed;
    if a.validate_every_epoch {
        p.train.validate_every_epoch = true;
    }
    let (train_set, val_set) = training_data(&a, &p, seed)?;
    let first = train_set.first().ok_or(iamseg_core::Error::EmptyInput { op: "train" })?;
    let size = (first.height, first.width);
    if train_set.iter().chain(&val_set).any(|s| (s.height, s.width) != size) {
        return Err(Error::Usage("all images must share one size".into()));
    }
    p.model.input_size = size;
    eprintln!(
        "training {} on {} scenes ({} validation), {} epochs",
        p.model.fusion_kind,
        train_set.len(),
        val_set.len(),
        p.train.epochs
    );
    let per_epoch_val: &[SceneSample] = if p.train.validate_every_epoch { &val_set } else { &[] };
    let out = train(&p.model, &train_set, per_epoch_val, &p.train, &mut |r| {
        eprintln!(
            "epoch {} loss {:.4} ap50_seg {} ap50_det {}",
            r.epoch,
            r.loss,
            report::opt_num(r.ap50_seg),
            report::opt_num(r.ap50_det)
        );
    })?;
    checkpoint::save_checkpoint(&a.out.join("checkpoint"), &out.model)?;
    report::write_trace(&a.out.join("trace.csv"), &out.trace)?;
    json::write_canonical(&a.out.join("protocol.json"), &p)?;
    if !val_set.is_empty() {
        let (gt, dets) = validation_outputs(&out.model, &val_set)?;
        let r = evaluate(&gt, &dets)?;
        json::write_canonical(&a.out.join("val_gt.json"), &gt)?;
        json::write_canonical(&a.out.join("val_detections.json"), &dets)?;
        json::write_canonical(&a.out.join("report.json"), &r)?;
        println!("{}", r.table());
    }
    Ok(EXIT_OK)
}

fn eval_cmd(a: EvalArgs) -> Result<i32> {
    let gt = dataset::load_coco(&dataset::annotation_path(&a.gt))?;
    let dt: Vec<Detection> = json::read_json(&a.dt)?;
    let r: ApReport = evaluate(&gt, &dt)?;
    match &a.out {
        Some(path) => {
            json::write_canonical(path, &r)?;
            println!("{}", r.table());
        }
        None => print!("{}", json::to_canonical_string(&r)?),
    }
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let modules: Vec<GradModule> = if a.module == "all" {
        GradModule::ALL.to_vec()
    } else {
        vec![a.module.parse().map_err(Error::Usage)?]
    };
    let seed = seed_of(a.seed);
    let mut ok = true;
    for m in modules {
        let err = check_module(m, seed, a.trials)?;
        let pass = err <= TOLERANCE;
        ok &= pass;
        println!("{m} {err:e} {}", if pass { "ok" } else { "FAIL" });
    }
    Ok(if ok { EXIT_OK } else { EXIT_INVALID })
}

fn bench(a: BenchArgs) -> Result<i32> {
    let p = a.training.protocol()?;
    let base = seed_of(a.seed);
    let mut results: Vec<RunResult> = Vec::new();
    for &kind in &a.kinds {
        for &design in &a.designs {
            for seed in base..base + a.seeds {
                let r = run_one(&p, kind, design, seed, &mut |_| {})?;
                eprintln!(
                    "{kind} {design} seed {seed}: ap50_seg {}",
                    report::opt_num(r.report.segm.ap50)
                );
                results.push(r);
            }
        }
    }
    match &a.out {
        Some(path) => write_table(path, &results)?,
        None => print!("{}", table_csv(&results)?),
    }
    Ok(EXIT_OK)
}
