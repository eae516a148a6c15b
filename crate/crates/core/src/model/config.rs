use core::fmt;
use core::str::FromStr;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::conv_out_len;

/// Where and how depth enters the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FusionKind {
    /// RGB only; the depth stream is never built.
    #[serde(rename = "none", alias = "rgb")]
    None,
    #[serde(rename = "early")]
    Early,
    #[serde(rename = "late")]
    Late,
    #[serde(rename = "intra")]
    Intra,
    #[serde(rename = "inter")]
    Inter,
    #[serde(rename = "iam")]
    Iam,
    /// Channel-wise gating fed with the plain concatenated features.
    #[serde(rename = "cdf")]
    Cdf,
    #[serde(rename = "iam+cdf")]
    IamCdf,
}

impl FusionKind {
    pub const ALL: [FusionKind; 8] = [
        FusionKind::None,
        FusionKind::Early,
        FusionKind::Late,
        FusionKind::Intra,
        FusionKind::Inter,
        FusionKind::Iam,
        FusionKind::Cdf,
        FusionKind::IamCdf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::None => "none",
            FusionKind::Early => "early",
            FusionKind::Late => "late",
            FusionKind::Intra => "intra",
            FusionKind::Inter => "inter",
            FusionKind::Iam => "iam",
            FusionKind::Cdf => "cdf",
            FusionKind::IamCdf => "iam+cdf",
        }
    }

    /// Whether a separate depth stream runs next to the RGB one.
    pub fn uses_depth_stream(self) -> bool {
        !matches!(self, FusionKind::None | FusionKind::Early)
    }

    /// Whether the kind inserts a block at flagged stages.
    pub fn is_stage_block(self) -> bool {
        matches!(
            self,
            FusionKind::Intra | FusionKind::Inter | FusionKind::Iam | FusionKind::Cdf | FusionKind::IamCdf
        )
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "rgb" | "rgb-only" => Ok(FusionKind::None),
            "cdf-only" => Ok(FusionKind::Cdf),
            "iam-only" => Ok(FusionKind::Iam),
            _ => FusionKind::ALL
                .into_iter()
                .find(|k| k.name() == s)
                .ok_or_else(|| Error::Config(format!("unknown fusion kind {s:?}"))),
        }
    }
}

/// Which final map feeds detection and which feeds segmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoutingDesign {
    /// Aggregated map to both heads.
    A,
    /// Aggregated map to detection, RGB map to segmentation.
    B,
    /// RGB map to detection, aggregated map to segmentation.
    C,
    /// RGB map to both; the aggregated map is only an auxiliary target.
    D,
}

impl RoutingDesign {
    pub const ALL: [RoutingDesign; 4] = [RoutingDesign::A, RoutingDesign::B, RoutingDesign::C, RoutingDesign::D];
}

impl fmt::Display for RoutingDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for RoutingDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(RoutingDesign::A),
            "B" | "b" => Ok(RoutingDesign::B),
            "C" | "c" => Ok(RoutingDesign::C),
            "D" | "d" => Ok(RoutingDesign::D),
            other => Err(Error::contract(format!("unknown routing design {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// `(H, W)` of the input images.
    pub input_size: (usize, usize),
    /// Four 3×3 convolution stages.
    pub blocks: Vec<StageSpec>,
    pub fusion_kind: FusionKind,
    /// Fusion-block placement per stage; the first entry must stay false.
    pub insertion_mask: [bool; 4],
    pub routing_design: RoutingDesign,
    pub num_queries: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Width of the per-query mask embedding.
    pub mask_dim: usize,
    /// Hidden width of the query feed-forward layer.
    pub ffn_dim: usize,
    /// Appends normalised x/y channels to the mask decoder input.
    pub coord_channels: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: (64, 64),
            blocks: vec![
                StageSpec { channels: 16, stride: 2 },
                StageSpec { channels: 32, stride: 2 },
                StageSpec { channels: 64, stride: 2 },
                StageSpec { channels: 64, stride: 2 },
            ],
            fusion_kind: FusionKind::IamCdf,
            insertion_mask: [false, true, true, true],
            routing_design: RoutingDesign::C,
            num_queries: 8,
            num_classes: 2,
            seed: 0,
            mask_dim: 16,
            ffn_dim: 64,
            coord_channels: true,
        }
    }
}

impl ModelConfig {
    /// Spatial size after each stage.
    pub fn stage_sizes(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = self.input_size;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, s) in self.blocks.iter().enumerate() {
            h = conv_out_len(h, 3, s.stride, 1)
                .ok_or_else(|| Error::Config(format!("stage {} does not fit height {h}", i + 1)))?;
            w = conv_out_len(w, 3, s.stride, 1)
                .ok_or_else(|| Error::Config(format!("stage {} does not fit width {w}", i + 1)))?;
            out.push((h, w));
        }
        Ok(out)
    }

    /// Whether a fusion block runs after stage `index` (0-based).
    pub fn fuses_at(&self, index: usize) -> bool {
        self.fusion_kind.is_stage_block() && self.insertion_mask[index]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if self.blocks.len() != 4 {
            return fail(format!("expected 4 encoder stages, got {}", self.blocks.len()));
        }
        if self.insertion_mask[0] {
            return fail("no fusion block can sit at the first stage".into());
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return fail("input size must be positive".into());
        }
        for (i, s) in self.blocks.iter().enumerate() {
            if s.channels == 0 || s.stride == 0 {
                return fail(format!("stage {} has zero channels or stride", i + 1));
            }
            if self.fuses_at(i) && s.channels % 2 != 0 {
                return fail(format!("stage {} needs an even channel count for fusion", i + 1));
            }
        }
        let sizes = self.stage_sizes()?;
        let (h2, w2) = sizes[1];
        let (h4, w4) = sizes[3];
        if h2 < h4 || w2 < w4 {
            return fail("stage 2 must be at least as large as stage 4".into());
        }
        if self.num_queries == 0 || self.num_classes == 0 || self.mask_dim == 0 || self.ffn_dim == 0 {
            return fail("num_queries, num_classes, mask_dim and ffn_dim must be positive".into());
        }
        Ok(())
    }
}
