//! Fusion-kind comparison on freshly generated synthetic datasets.

use std::path::Path;

use iamseg_core::data::{GeneratorConfig, SceneSample};
use iamseg_core::eval::ApReport;
use iamseg_core::model::{train, EpochRecord, FusionKind, ModelConfig, RoutingDesign, TrainOptions};
use serde::{Deserialize, Serialize};

use crate::dataset::generate_scenes;
use crate::error::{Error, Result};
use crate::report::{num, opt_num};

/// Everything a comparison run needs besides the kind, design and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    pub generator: GeneratorConfig,
    pub train_size: usize,
    pub val_size: usize,
    pub model: ModelConfig,
    pub train: TrainOptions,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            generator: GeneratorConfig::ambiguous(),
            train_size: 200,
            val_size: 50,
            model: ModelConfig::default(),
            train: TrainOptions {
                epochs: 120,
                validate_every_epoch: false,
                ..TrainOptions::default()
            },
        }
    }
}

impl Protocol {
    /// Colour-separable scenes, where RGB alone suffices.
    pub fn distinct() -> Self {
        Protocol {
            generator: GeneratorConfig::default(),
            ..Protocol::default()
        }
    }
}

/// Train and validation scenes of one seed; the two never share a scene seed.
pub fn datasets(p: &Protocol, seed: u64) -> Result<(Vec<SceneSample>, Vec<SceneSample>)> {
    let train = generate_scenes(&p.generator, 2 * seed, p.train_size)?;
    let val = generate_scenes(&p.generator, 2 * seed + 1, p.val_size)?;
    Ok((train, val))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub kind: FusionKind,
    pub design: RoutingDesign,
    pub seed: u64,
    pub report: ApReport,
    pub trace: Vec<EpochRecord>,
}

pub fn run_one(
    p: &Protocol,
    kind: FusionKind,
    design: RoutingDesign,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<RunResult> {
    let (train_set, val_set) = datasets(p, seed)?;
    let cfg = ModelConfig {
        fusion_kind: kind,
        routing_design: design,
        seed,
        input_size: (p.generator.height, p.generator.width),
        ..p.model.clone()
    };
    let out = train(&cfg, &train_set, &val_set, &p.train, on_epoch)?;
    let report = out
        .final_report
        .ok_or_else(|| Error::Usage("benchmark needs a non-empty validation set".into()))?;
    Ok(RunResult {
        kind,
        design,
        seed,
        report,
        trace: out.trace,
    })
}

pub const BENCH_HEADER: [&str; 9] = [
    "kind", "design", "seed", "ap_seg", "ap50_seg", "ap75_seg", "ap_det", "ap50_det", "ap75_det",
];

fn metrics(r: &ApReport) -> [Option<f64>; 6] {
    [r.segm.ap, r.segm.ap50, r.segm.ap75, r.bbox.ap, r.bbox.ap50, r.bbox.ap75]
}

/// Mean of the defined values, or `None` when there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-run rows followed by one mean row per (kind, design), in first-seen order.
pub fn table(results: &[RunResult]) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let mut row = vec![r.kind.to_string(), r.design.to_string(), r.seed.to_string()];
            row.extend(metrics(&r.report).iter().map(|m| opt_num(*m)));
            row
        })
        .collect();
    let mut groups: Vec<(FusionKind, RoutingDesign)> = Vec::new();
    for r in results {
        if !groups.contains(&(r.kind, r.design)) {
            groups.push((r.kind, r.design));
        }
    }
    for (kind, design) in groups {
        let members: Vec<&RunResult> = results.iter().filter(|r| (r.kind, r.design) == (kind, design)).collect();
        let mut row = vec![kind.to_string(), design.to_string(), "mean".to_string()];
        for col in 0..6 {
            row.push(mean_defined(members.iter().map(|r| metrics(&r.report)[col])).map_or("undefined".into(), num));
        }
        rows.push(row);
    }
    rows
}

pub fn table_csv(results: &[RunResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BENCH_HEADER)?;
    for row in table(results) {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_table(path: &Path, results: &[RunResult]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    std::fs::write(path, table_csv(results)?).map_err(Error::io(path))
}
