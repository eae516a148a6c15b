//! Binary masks and their polygon and run-length encodings.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat `x0, y0, x1, y1, ...` vertex list in pixel-corner coordinates.
pub type Polygon = Vec<f64>;

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        Self::from_bits(height, width, vec![false; height * width])
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::contract(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if bits.len() != height * width {
            return Err(Error::dim("mask", &[height, width], &[bits.len()]));
        }
        Ok(Mask {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::from_bits(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        row < self.height && col < self.width && self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight `[x, y, w, h]` box in pixel-corner coordinates.
    pub fn tight_box(&self) -> Option<[f64; 4]> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let (r, c) = (i / self.width, i % self.width);
            x0 = x0.min(c);
            y0 = y0.min(r);
            x1 = x1.max(c + 1);
            y1 = y1.max(r + 1);
        }
        (x0 != usize::MAX).then(|| [x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64])
    }

    pub fn intersection_area(&self, other: &Mask) -> Result<usize> {
        self.same_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count())
    }

    pub(crate) fn same_dims(&self, other: &Mask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::dim(
                "mask",
                &[self.height, self.width],
                &[other.height, other.width],
            ));
        }
        Ok(())
    }

    /// 4-connected components as pixel index lists, ordered by first pixel in row-major scan.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let (h, w) = (self.height, self.width);
        let mut label = vec![usize::MAX; h * w];
        let mut out = Vec::new();
        for start in 0..h * w {
            if !self.bits[start] || label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = Vec::new();
            let mut queue = VecDeque::from([start]);
            label[start] = id;
            while let Some(i) = queue.pop_front() {
                members.push(i);
                let (r, c) = (i / w, i % w);
                let mut visit = |j: usize| {
                    if self.bits[j] && label[j] == usize::MAX {
                        label[j] = id;
                        queue.push_back(j);
                    }
                };
                if r > 0 {
                    visit(i - w);
                }
                if r + 1 < h {
                    visit(i + w);
                }
                if c > 0 {
                    visit(i - 1);
                }
                if c + 1 < w {
                    visit(i + 1);
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}

type Vertex = (i64, i64);

fn direction(a: Vertex, b: Vertex) -> Vertex {
    ((b.0 - a.0).signum(), (b.1 - a.1).signum())
}

/// Traces every boundary loop of `mask`, one group per 4-connected component.
///
/// Outer boundaries have positive shoelace area in `(x, y)`, holes negative.
/// Where a loop touches itself at a corner the left turn is taken, and each
/// loop starts at its smallest `(y, x)` vertex.
pub fn mask_to_polygon(mask: &Mask) -> Result<Vec<Polygon>> {
    if mask.is_empty() {
        return Err(Error::contract("mask_to_polygon: mask is empty"));
    }
    let w = mask.width;
    let mut polygons = Vec::new();
    for component in mask.components() {
        let inside = |r: i64, c: i64| -> bool {
            r >= 0
                && c >= 0
                && (r as usize) < mask.height
                && (c as usize) < w
                && component.binary_search(&(r as usize * w + c as usize)).is_ok()
        };
        let mut edges: Vec<(Vertex, Vertex)> = Vec::new();
        for &i in &component {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            if !inside(r - 1, c) {
                edges.push(((c, r), (c + 1, r)));
            }
            if !inside(r, c + 1) {
                edges.push(((c + 1, r), (c + 1, r + 1)));
            }
            if !inside(r + 1, c) {
                edges.push(((c + 1, r + 1), (c, r + 1)));
            }
            if !inside(r, c - 1) {
                edges.push(((c, r + 1), (c, r)));
            }
        }
        edges.sort_unstable_by_key(|&((x, y), (x2, y2))| (y, x, y2, x2));
        let mut used = vec![false; edges.len()];
        let outgoing = |v: Vertex| {
            let lo = edges.partition_point(|e| (e.0 .1, e.0 .0) < (v.1, v.0));
            let hi = edges.partition_point(|e| (e.0 .1, e.0 .0) <= (v.1, v.0));
            lo..hi
        };
        let mut loops = Vec::new();
        for first in 0..edges.len() {
            if used[first] {
                continue;
            }
            let mut verts = vec![edges[first].0];
            used[first] = true;
            let mut current = first;
            loop {
                let (from, to) = edges[current];
                let incoming = direction(from, to);
                let mut best: Option<(usize, i64)> = None;
                for j in outgoing(to) {
                    if used[j] && j != first {
                        continue;
                    }
                    let out = direction(edges[j].0, edges[j].1);
                    let cross = incoming.0 * out.1 - incoming.1 * out.0;
                    let rank = match cross {
                        c if c > 0 => 0,
                        0 => 1,
                        _ => 2,
                    };
                    if best.map_or(true, |(_, r)| rank < r) {
                        best = Some((j, rank));
                    }
                }
                let (next, _) = best.ok_or_else(|| Error::contract("mask_to_polygon: open boundary"))?;
                if next == first {
                    break;
                }
                used[next] = true;
                verts.push(edges[next].0);
                current = next;
            }
            loops.push(simplify(verts));
        }
        loops.sort_by_key(|l| (l[0].1, l[0].0));
        polygons.extend(
            loops
                .into_iter()
                .map(|l| l.into_iter().flat_map(|(x, y)| [x as f64, y as f64]).collect()),
        );
    }
    Ok(polygons)
}

/// Drops collinear vertices and rotates to the smallest `(y, x)` vertex.
fn simplify(verts: Vec<Vertex>) -> Vec<Vertex> {
    let n = verts.len();
    let kept: Vec<Vertex> = (0..n)
        .filter(|&i| {
            let prev = verts[(i + n - 1) % n];
            let next = verts[(i + 1) % n];
            direction(prev, verts[i]) != direction(verts[i], next)
        })
        .map(|i| verts[i])
        .collect();
    let start = (0..kept.len()).min_by_key(|&i| (kept[i].1, kept[i].0)).unwrap_or(0);
    kept[start..].iter().chain(&kept[..start]).copied().collect()
}

/// Signed shoelace area in `(x, y)` coordinates.
pub fn polygon_area(poly: &[f64]) -> f64 {
    let n = poly.len() / 2;
    let twice: f64 = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            poly[2 * i] * poly[2 * j + 1] - poly[2 * j] * poly[2 * i + 1]
        })
        .sum();
    twice / 2.0
}

/// Even-odd fill of pixel centres over all polygons jointly.
pub fn polygon_to_mask(polygons: &[Polygon], height: usize, width: usize) -> Result<Mask> {
    let mut mask = Mask::new(height, width)?;
    for poly in polygons {
        if poly.len() < 6 || poly.len() % 2 != 0 {
            return Err(Error::contract(format!(
                "polygon_to_mask: degenerate polygon with {} coordinates",
                poly.len()
            )));
        }
        for pt in poly.chunks(2) {
            if !(0.0..=width as f64).contains(&pt[0]) || !(0.0..=height as f64).contains(&pt[1]) {
                return Err(Error::contract(format!(
                    "polygon_to_mask: vertex ({}, {}) outside {width}x{height}",
                    pt[0], pt[1]
                )));
            }
        }
    }
    let mut xs = Vec::new();
    for r in 0..height {
        let y = r as f64 + 0.5;
        xs.clear();
        for poly in polygons {
            let n = poly.len() / 2;
            for i in 0..n {
                let j = (i + 1) % n;
                let (x1, y1, x2, y2) = (poly[2 * i], poly[2 * i + 1], poly[2 * j], poly[2 * j + 1]);
                if (y1 <= y) != (y2 <= y) {
                    xs.push(x1 + (y - y1) * (x2 - x1) / (y2 - y1));
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            for c in 0..width {
                let x = c as f64 + 0.5;
                if x >= pair[0] && x < pair[1] {
                    mask.bits[r * width + c] = !mask.bits[r * width + c];
                }
            }
        }
    }
    Ok(mask)
}

/// Column-major run lengths, the first run counting zeros.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

pub fn mask_to_rle(mask: &Mask) -> Rle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for c in 0..mask.width {
        for r in 0..mask.height {
            let bit = mask.bits[r * mask.width + c];
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
    }
    counts.push(run);
    Rle {
        height: mask.height,
        width: mask.width,
        counts,
    }
}

pub fn rle_to_mask(rle: &Rle) -> Result<Mask> {
    let total: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    if total != (rle.height * rle.width) as u64 {
        return Err(Error::Format(format!(
            "rle counts sum to {total}, expected {}",
            rle.height * rle.width
        )));
    }
    let mut mask = Mask::new(rle.height, rle.width)?;
    let mut pos = 0usize;
    for (k, &run) in rle.counts.iter().enumerate() {
        if k % 2 == 1 {
            for p in pos..pos + run as usize {
                let (c, r) = (p / rle.height, p % rle.height);
                mask.bits[r * rle.width + c] = true;
            }
        }
        pos += run as usize;
    }
    Ok(mask)
}

impl Rle {
    /// COCO's compact ASCII form of `counts`.
    pub fn to_compressed(&self) -> String {
        let mut out = String::new();
        for (i, &count) in self.counts.iter().enumerate() {
            let mut x = count as i64;
            if i > 2 {
                x -= self.counts[i - 2] as i64;
            }
            loop {
                let mut c = x & 0x1f;
                x >>= 5;
                let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    c |= 0x20;
                }
                out.push((c as u8 + 48) as char);
                if !more {
                    break;
                }
            }
        }
        out
    }

    pub fn from_compressed(height: usize, width: usize, s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut p = 0;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0;
            loop {
                let c = bytes[p]
                    .checked_sub(48)
                    .filter(|&c| c < 64)
                    .ok_or_else(|| Error::Format(format!("rle string: invalid byte at {p}")))?
                    as i64;
                if k > 12 {
                    return Err(Error::Format(format!("rle string: run too long at {p}")));
                }
                x |= (c & 0x1f) << (5 * k);
                p += 1;
                k += 1;
                if c & 0x20 == 0 {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
                if p >= bytes.len() {
                    return Err(Error::Format("rle string: truncated run".into()));
                }
            }
            if counts.len() > 2 {
                x += counts[counts.len() - 2] as i64;
            }
            let v = u32::try_from(x).map_err(|_| Error::Format(format!("rle string: bad count {x}")))?;
            counts.push(v);
        }
        Ok(Rle {
            height,
            width,
            counts,
        })
    }
}
