//! Seeded synthetic RGB-D scenes with instance masks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::Mask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

impl ShapeKind {
    pub fn category_id(self) -> u64 {
        match self {
            ShapeKind::Rectangle => 1,
            ShapeKind::Ellipse => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Ellipse => "ellipse",
        }
    }
}

/// How instance colours relate to each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    /// Every instance gets its own well-separated colour.
    Distinct,
    /// Instances tile one rectangle in a single shared colour; only depth separates them.
    Ambiguous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthMode {
    Flat,
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub shapes: Vec<ShapeKind>,
    pub color_mode: ColorMode,
    pub depth_mode: DepthMode,
    pub min_depth_gap: u16,
    /// Smallest and largest side length of a placed shape, in pixels.
    pub min_extent: usize,
    pub max_extent: usize,
    /// Fraction of a shape that must stay visible after occlusion.
    pub min_visible: f64,
    pub max_retries: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            height: 64,
            width: 64,
            min_instances: 2,
            max_instances: 4,
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Ellipse],
            color_mode: ColorMode::Distinct,
            depth_mode: DepthMode::Flat,
            min_depth_gap: 2000,
            min_extent: 12,
            max_extent: 30,
            min_visible: 0.5,
            max_retries: 200,
        }
    }
}

impl GeneratorConfig {
    pub fn ambiguous() -> Self {
        GeneratorConfig {
            color_mode: ColorMode::Ambiguous,
            shapes: vec![ShapeKind::Rectangle],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.height < 8 || self.width < 8 {
            return fail(format!("image {}x{} is smaller than 8x8", self.height, self.width));
        }
        if self.min_instances > self.max_instances {
            return fail(format!(
                "instance range {}..={} is empty",
                self.min_instances, self.max_instances
            ));
        }
        if self.shapes.is_empty() {
            return fail("shape palette is empty".into());
        }
        if self.color_mode == ColorMode::Ambiguous && !self.shapes.contains(&ShapeKind::Rectangle) {
            return fail("ambiguous colour mode tiles rectangles; the palette has none".into());
        }
        if self.min_extent < 2 || self.min_extent > self.max_extent {
            return fail(format!("extent range {}..={} is invalid", self.min_extent, self.max_extent));
        }
        if self.min_extent + 2 > self.height.min(self.width) {
            return fail(format!("min_extent {} does not fit the image", self.min_extent));
        }
        if self.min_depth_gap == 0 {
            return fail("min_depth_gap must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.min_visible) {
            return fail(format!("min_visible {} outside [0, 1]", self.min_visible));
        }
        if depth_levels(self.max_instances + 1, self.min_depth_gap, self.depth_mode).is_none() {
            return fail("depth gap too large for the 16-bit range".into());
        }
        Ok(())
    }
}

/// One generated RGB-D image with its instances.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub height: usize,
    pub width: usize,
    /// Row-major interleaved RGB.
    pub rgb: Vec<u8>,
    /// Row-major depth, larger is farther.
    pub depth: Vec<u16>,
    pub instance_masks: Vec<Mask>,
    pub categories: Vec<u64>,
    /// Tight `[x, y, w, h]` boxes of the masks.
    pub boxes: Vec<[f64; 4]>,
}

impl SceneSample {
    /// Assembles a sample, deriving boxes from the masks.
    pub fn new(
        height: usize,
        width: usize,
        rgb: Vec<u8>,
        depth: Vec<u16>,
        instance_masks: Vec<Mask>,
        categories: Vec<u64>,
    ) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(Error::dim("scene rgb", &[height, width, 3], &[rgb.len()]));
        }
        if depth.len() != height * width {
            return Err(Error::dim("scene depth", &[height, width], &[depth.len()]));
        }
        if categories.len() != instance_masks.len() {
            return Err(Error::dim("scene categories", &[instance_masks.len()], &[categories.len()]));
        }
        let mut boxes = Vec::with_capacity(instance_masks.len());
        for (i, m) in instance_masks.iter().enumerate() {
            if (m.height(), m.width()) != (height, width) {
                return Err(Error::dim("scene mask", &[height, width], &[m.height(), m.width()]));
            }
            boxes.push(
                m.tight_box()
                    .ok_or_else(|| Error::contract(format!("scene instance {i} has an empty mask")))?,
            );
        }
        Ok(SceneSample {
            height,
            width,
            rgb,
            depth,
            instance_masks,
            categories,
            boxes,
        })
    }
}

/// A symmetry of the pixel grid: optional transpose, then optional flips.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Symmetry {
    pub transpose: bool,
    pub flip_x: bool,
    pub flip_y: bool,
}

impl Symmetry {
    /// All eight symmetries of a square grid, identity first.
    pub fn all() -> [Symmetry; 8] {
        core::array::from_fn(|i| Symmetry {
            transpose: i & 4 != 0,
            flip_x: i & 1 != 0,
            flip_y: i & 2 != 0,
        })
    }

    pub fn output_dims(self, height: usize, width: usize) -> (usize, usize) {
        if self.transpose {
            (width, height)
        } else {
            (height, width)
        }
    }

    /// Source index of output pixel `(r, c)` for a `height × width` source.
    fn source(self, height: usize, width: usize, r: usize, c: usize) -> usize {
        let (oh, ow) = self.output_dims(height, width);
        let r = if self.flip_y { oh - 1 - r } else { r };
        let c = if self.flip_x { ow - 1 - c } else { c };
        if self.transpose {
            c * width + r
        } else {
            r * width + c
        }
    }

    fn permutation(self, height: usize, width: usize) -> Vec<usize> {
        let (oh, ow) = self.output_dims(height, width);
        (0..oh * ow).map(|i| self.source(height, width, i / ow, i % ow)).collect()
    }
}

impl SceneSample {
    /// The same scene under a grid symmetry; instances keep their order.
    pub fn transformed(&self, sym: Symmetry) -> Result<Self> {
        let (oh, ow) = sym.output_dims(self.height, self.width);
        let perm = sym.permutation(self.height, self.width);
        let rgb = perm
            .iter()
            .flat_map(|&p| self.rgb[3 * p..3 * p + 3].iter().copied())
            .collect();
        let depth = perm.iter().map(|&p| self.depth[p]).collect();
        let masks = self
            .instance_masks
            .iter()
            .map(|m| Mask::from_bits(oh, ow, perm.iter().map(|&p| m.bits()[p]).collect()))
            .collect::<Result<Vec<_>>>()?;
        SceneSample::new(oh, ow, rgb, depth, masks, self.categories.clone())
    }
}

/// A placed shape before rasterisation.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacedShape {
    pub kind: ShapeKind,
    /// Pixel bounds, `x1`/`y1` exclusive.
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub color: [u8; 3],
    /// Depth at the shape centre.
    pub depth: f64,
    /// Depth change per pixel along x and y.
    pub tilt: (f64, f64),
}

impl PlacedShape {
    pub fn covers(&self, row: usize, col: usize) -> bool {
        if row < self.y0 || row >= self.y1 || col < self.x0 || col >= self.x1 {
            return false;
        }
        match self.kind {
            ShapeKind::Rectangle => true,
            ShapeKind::Ellipse => {
                let (cx, cy) = self.centre();
                let rx = (self.x1 - self.x0) as f64 / 2.0;
                let ry = (self.y1 - self.y0) as f64 / 2.0;
                let dx = (col as f64 + 0.5 - cx) / rx;
                let dy = (row as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    pub fn depth_at(&self, row: usize, col: usize) -> f64 {
        let (cx, cy) = self.centre();
        self.depth + self.tilt.0 * (col as f64 + 0.5 - cx) + self.tilt.1 * (row as f64 + 0.5 - cy)
    }

    fn centre(&self) -> (f64, f64) {
        ((self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0)
    }

    fn full_area(&self, height: usize, width: usize) -> usize {
        (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.covers(r, c))
            .count()
    }
}

/// Shapes plus background, the input to rasterisation.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub background: [u8; 3],
    pub background_depth: f64,
    pub background_tilt: (f64, f64),
    pub shapes: Vec<PlacedShape>,
}

const DEPTH_NEAR: f64 = 6000.0;
const DEPTH_FAR: f64 = 60000.0;

/// Evenly usable depth band per level: base spacing and tilt budget.
fn depth_levels(levels: usize, gap: u16, mode: DepthMode) -> Option<(f64, f64)> {
    let gap = gap as f64;
    let spacing = match mode {
        DepthMode::Flat => gap,
        DepthMode::Gradient => 2.0 * gap,
    };
    let span = spacing * levels.saturating_sub(1) as f64;
    let budget = gap / 2.0;
    (DEPTH_NEAR + span <= DEPTH_FAR && DEPTH_FAR + 1.5 * budget <= u16::MAX as f64).then_some((spacing, budget))
}

/// Draws `n` depths at least `spacing` apart inside the object band, sorted ascending.
fn draw_depths(rng: &mut ChaCha8Rng, n: usize, spacing: f64) -> Vec<f64> {
    let slack = DEPTH_FAR - DEPTH_NEAR - spacing * n as f64;
    let mut offsets: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * slack.max(0.0)).collect();
    offsets.sort_by(f64::total_cmp);
    offsets
        .iter()
        .enumerate()
        .map(|(i, o)| libm::round(DEPTH_NEAR + o + spacing * i as f64))
        .collect()
}

fn random_color(rng: &mut ChaCha8Rng, avoid: &[[u8; 3]]) -> [u8; 3] {
    loop {
        let c = [rng.gen::<u8>(), rng.gen::<u8>(), rng.gen::<u8>()];
        let far = avoid
            .iter()
            .all(|a| a.iter().zip(&c).map(|(&x, &y)| (x as i32 - y as i32).abs()).sum::<i32>() >= 120);
        if far {
            return c;
        }
    }
}

/// Tilt whose depth change across an object stays within `budget`.
fn draw_tilt(rng: &mut ChaCha8Rng, mode: DepthMode, budget: f64, extent: f64) -> (f64, f64) {
    match mode {
        DepthMode::Flat => (0.0, 0.0),
        DepthMode::Gradient => {
            let per_axis = budget / 2.0 / extent.max(1.0);
            (rng.gen_range(-per_axis..=per_axis), rng.gen_range(-per_axis..=per_axis))
        }
    }
}

/// Samples shape placement, colours and depths for one scene.
pub fn plan_scene(cfg: &GeneratorConfig, seed: u64) -> Result<SceneLayout> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.max_retries.max(1) {
        let layout = match cfg.color_mode {
            ColorMode::Distinct => try_distinct(cfg, &mut rng),
            ColorMode::Ambiguous => try_ambiguous(cfg, &mut rng),
        };
        if let Some(layout) = layout {
            return Ok(layout);
        }
    }
    Err(Error::Generation(format!(
        "no feasible placement after {} attempts",
        cfg.max_retries
    )))
}

fn background(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng, budget: f64) -> ([u8; 3], f64, (f64, f64)) {
    let colour = random_color(rng, &[]);
    let extent = cfg.height.max(cfg.width) as f64;
    let tilt = draw_tilt(rng, cfg.depth_mode, budget, extent);
    (colour, DEPTH_FAR + budget, tilt)
}

fn try_distinct(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Option<SceneLayout> {
    let n = rng.gen_range(cfg.min_instances..=cfg.max_instances);
    let (spacing, budget) = depth_levels(n + 1, cfg.min_depth_gap, cfg.depth_mode)?;
    let (bg, bg_depth, bg_tilt) = background(cfg, rng, budget);
    let mut depths = draw_depths(rng, n, spacing);
    depths.shuffle(rng);
    let mut colours = vec![bg];
    let mut shapes = Vec::with_capacity(n);
    for depth in depths {
        let kind = *cfg.shapes.choose(rng)?;
        let max_w = cfg.max_extent.min(cfg.width - 2);
        let max_h = cfg.max_extent.min(cfg.height - 2);
        let w = rng.gen_range(cfg.min_extent..=max_w.max(cfg.min_extent));
        let h = rng.gen_range(cfg.min_extent..=max_h.max(cfg.min_extent));
        let x0 = rng.gen_range(1..=cfg.width - 1 - w);
        let y0 = rng.gen_range(1..=cfg.height - 1 - h);
        let color = random_color(rng, &colours);
        colours.push(color);
        let tilt = draw_tilt(rng, cfg.depth_mode, budget, w.max(h) as f64);
        shapes.push(PlacedShape {
            kind,
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
            color,
            depth,
            tilt,
        });
    }
    let layout = SceneLayout {
        height: cfg.height,
        width: cfg.width,
        background: bg,
        background_depth: bg_depth,
        background_tilt: bg_tilt,
        shapes,
    };
    let owners = ownership(&layout);
    for (i, s) in layout.shapes.iter().enumerate() {
        let visible = owners.iter().filter(|&&o| o == Some(i)).count();
        let full = s.full_area(cfg.height, cfg.width);
        if visible == 0 || (visible as f64) < cfg.min_visible * full as f64 {
            return None;
        }
    }
    Some(layout)
}

/// Guillotine-cuts one rectangle into `n` touching pieces.
fn try_ambiguous(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Option<SceneLayout> {
    let n = rng.gen_range(cfg.min_instances..=cfg.max_instances);
    let (spacing, budget) = depth_levels(n + 1, cfg.min_depth_gap, cfg.depth_mode)?;
    let (bg, bg_depth, bg_tilt) = background(cfg, rng, budget);
    let colour = random_color(rng, &[bg]);
    let min = cfg.min_extent;
    let longest = |limit: usize| limit.saturating_sub(4).max(min);
    let span = |rng: &mut ChaCha8Rng, limit: usize, pieces: usize| {
        let lo = (min * pieces.min(2)).min(longest(limit));
        rng.gen_range(lo..=longest(limit))
    };
    let cw = span(rng, cfg.width, n);
    let ch = span(rng, cfg.height, n);
    let x = rng.gen_range(2..=cfg.width - 2 - cw);
    let y = rng.gen_range(2..=cfg.height - 2 - ch);
    let mut pieces = vec![(x, y, x + cw, y + ch)];
    while pieces.len() < n {
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by_key(|(_, p)| (p.2 - p.0) * (p.3 - p.1))?;
        let (x0, y0, x1, y1) = pieces[idx];
        let vertical = (x1 - x0) >= (y1 - y0);
        let (lo, hi) = if vertical { (x0, x1) } else { (y0, y1) };
        if hi - lo < 2 * min {
            return None;
        }
        let cut = rng.gen_range(lo + min..=hi - min);
        pieces.swap_remove(idx);
        if vertical {
            pieces.push((x0, y0, cut, y1));
            pieces.push((cut, y0, x1, y1));
        } else {
            pieces.push((x0, y0, x1, cut));
            pieces.push((x0, cut, x1, y1));
        }
    }
    pieces.sort_unstable_by_key(|p| (p.1, p.0));
    let mut depths = draw_depths(rng, n, spacing);
    depths.shuffle(rng);
    let shapes = pieces
        .into_iter()
        .zip(depths)
        .map(|((x0, y0, x1, y1), depth)| PlacedShape {
            kind: ShapeKind::Rectangle,
            x0,
            y0,
            x1,
            y1,
            color: colour,
            depth,
            tilt: draw_tilt(rng, cfg.depth_mode, budget, (x1 - x0).max(y1 - y0) as f64),
        })
        .collect();
    Some(SceneLayout {
        height: cfg.height,
        width: cfg.width,
        background: bg,
        background_depth: bg_depth,
        background_tilt: bg_tilt,
        shapes,
    })
}

/// Index of the nearest covering shape per pixel.
pub fn ownership(layout: &SceneLayout) -> Vec<Option<usize>> {
    let mut owners = vec![None; layout.height * layout.width];
    for r in 0..layout.height {
        for c in 0..layout.width {
            let mut best: Option<(usize, f64)> = None;
            for (i, s) in layout.shapes.iter().enumerate() {
                if s.covers(r, c) {
                    let d = s.depth_at(r, c);
                    if best.map_or(true, |(_, bd)| d < bd) {
                        best = Some((i, d));
                    }
                }
            }
            owners[r * layout.width + c] = best.map(|b| b.0);
        }
    }
    owners
}

/// Rasterises a layout with a depth buffer.
pub fn render_layout(layout: &SceneLayout) -> Result<SceneSample> {
    let (h, w) = (layout.height, layout.width);
    let owners = ownership(layout);
    let mut rgb = Vec::with_capacity(h * w * 3);
    let mut depth = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (colour, d) = match owners[r * w + c] {
                Some(i) => (layout.shapes[i].color, layout.shapes[i].depth_at(r, c)),
                None => {
                    let (tx, ty) = layout.background_tilt;
                    let d = layout.background_depth
                        + tx * (c as f64 + 0.5 - w as f64 / 2.0)
                        + ty * (r as f64 + 0.5 - h as f64 / 2.0);
                    (layout.background, d)
                }
            };
            rgb.extend_from_slice(&colour);
            depth.push(libm::round(d).clamp(0.0, u16::MAX as f64) as u16);
        }
    }
    let mut masks = Vec::new();
    let mut categories = Vec::new();
    for (i, s) in layout.shapes.iter().enumerate() {
        let m = Mask::from_bits(h, w, owners.iter().map(|&o| o == Some(i)).collect())?;
        if !m.is_empty() {
            masks.push(m);
            categories.push(s.kind.category_id());
        }
    }
    SceneSample::new(h, w, rgb, depth, masks, categories)
}

pub fn generate_scene(cfg: &GeneratorConfig, seed: u64) -> Result<SceneSample> {
    render_layout(&plan_scene(cfg, seed)?)
}
