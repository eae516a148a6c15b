//! Two-stream RGB-D encoder with pluggable fusion, feature routing and a
//! query-based detection/segmentation head trained with a set loss.

mod backbone;
mod config;
mod head;
mod loss;
mod matching;
mod train;

pub use backbone::{backbone_forward, encode, input_tensors, BackboneOutput};
pub use config::{FusionKind, ModelConfig, RoutingDesign, StageSpec};
pub use head::{
    head_forward, route_features, DecoderParams, DecoderWeights, FeatureSource, HeadOutput, HeadParams, HeadWeights,
    Prediction, Routed,
};
pub use loss::{giou, match_cost, set_loss, LossComponents, LossWeights, PredVars, Target};
pub use matching::{hungarian_match, MatchResult};
pub use train::{
    evaluate_model, forward_sample, predict, predictions_to_detections, sample_loss, train, Adam, EpochRecord, Forward,
    TrainOptions, TrainOutcome,
};

use alloc::format;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::{AttentionWeights, CdfWeights, IamWeights, MergeWeights};
use crate::tensor::{param_block, ParamStore, Tensor};

param_block! {
    /// One convolution: `w[C_out, C_in, k, k]`, `b[C_out]`.
    ConvWeights => ConvParams { w, b }
}

impl ConvWeights {
    /// Uniform He initialisation for a ReLU layer.
    pub fn init<R: rand::Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Self {
        let fan_in = c_in * k * k;
        ConvWeights {
            w: Tensor::uniform(&[c_out, c_in, k, k], libm::sqrt(6.0 / fan_in as f64), rng),
            b: Tensor::zeros(&[c_out]),
        }
    }
}

/// Configuration plus every learnable tensor, keyed by dotted names.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Seeded initialisation; the same config always yields the same weights.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let two_streams = cfg.fusion_kind.uses_depth_stream();
        let first_in = 3;
        if cfg.fusion_kind == FusionKind::Early {
            MergeWeights::init(4, 3, &mut rng).register(&mut store, "early")?;
        }
        let mut c_in = first_in;
        for (i, stage) in cfg.blocks.iter().enumerate() {
            ConvWeights::init(c_in, stage.channels, 3, &mut rng).register(&mut store, &format!("rgb.s{}", i + 1))?;
            c_in = stage.channels;
        }
        if two_streams {
            let mut c_in = 1;
            for (i, stage) in cfg.blocks.iter().enumerate() {
                ConvWeights::init(c_in, stage.channels, 3, &mut rng)
                    .register(&mut store, &format!("depth.s{}", i + 1))?;
                c_in = stage.channels;
            }
        }
        for (i, stage) in cfg.blocks.iter().enumerate() {
            if !cfg.fuses_at(i) {
                continue;
            }
            let c = stage.channels;
            let prefix = format!("fuse.s{}", i + 1);
            match cfg.fusion_kind {
                FusionKind::Iam => IamWeights::init(c, &mut rng)?.register(&mut store, &format!("{prefix}.iam"))?,
                FusionKind::Cdf => CdfWeights::init(c, &mut rng).register(&mut store, &format!("{prefix}.cdf"))?,
                FusionKind::IamCdf => {
                    IamWeights::init(c, &mut rng)?.register(&mut store, &format!("{prefix}.iam"))?;
                    CdfWeights::init(c, &mut rng).register(&mut store, &format!("{prefix}.cdf"))?;
                }
                FusionKind::Intra | FusionKind::Inter => {
                    AttentionWeights::init(c, &mut rng)?.register(&mut store, &format!("{prefix}.rgb"))?;
                    AttentionWeights::init(c, &mut rng)?.register(&mut store, &format!("{prefix}.depth"))?;
                }
                FusionKind::None | FusionKind::Early | FusionKind::Late => {}
            }
        }
        let c_last = cfg.blocks[3].channels;
        if cfg.fusion_kind == FusionKind::Late {
            MergeWeights::init(2 * c_last, c_last, &mut rng).register(&mut store, "late")?;
        }
        head::init_head(cfg, &mut rng, &mut store)?;
        Ok(Model { cfg: cfg.clone(), params: store })
    }
}
