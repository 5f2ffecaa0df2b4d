//! Prompt transfer by exhaustive cosine-similarity search.
//!
//! Every template prompt is moved to the target pixel whose descriptor has the
//! highest cosine similarity with the descriptor under the prompt. Ties go to
//! the smallest row-major index and zero-norm vectors score 0.

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::io::encode_gray8_png;
use crate::model::pixel::normalize_in_place;
use crate::model::{l2_normalize, Image2D, LabelMap, Mask, PixelFeatureMap, Point, Polarity, PromptSet};

/// Target rows scanned per parallel work item.
const ROWS_PER_TASK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub source: Point,
    pub target: Point,
    pub similarity: f64,
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Dense cosine-similarity field of one template point over a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::InvalidDimensions(format!(
                "{} values for a {height}x{width} heatmap",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidArgument("heatmap values must lie in [-1, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Maximum cell, ties to the smallest row-major index.
    pub fn argmax(&self) -> (Point, f64) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (
            Point::new(best / self.width, best % self.width),
            self.values[best],
        )
    }

    /// Grayscale codes `round((v + 1) * 127.5)`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_gray8_png(self.height, self.width, &self.to_gray8())
    }
}

fn check_channels(template: &PixelFeatureMap, target: &PixelFeatureMap) -> Result<()> {
    if template.channels() != target.channels() {
        return Err(Error::ChannelMismatch {
            expected: template.channels(),
            found: target.channels(),
        });
    }
    Ok(())
}

fn normalized(map: &PixelFeatureMap) -> Cow<'_, PixelFeatureMap> {
    if map.is_normalized() {
        Cow::Borrowed(map)
    } else {
        Cow::Owned(l2_normalize(map))
    }
}

fn unit_query(map: &PixelFeatureMap, p: Point) -> Vec<f64> {
    let mut v = map.pixel(p.row, p.col).to_vec();
    if !map.is_normalized() {
        normalize_in_place(&mut v);
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Within this of +-1 a cosine is rounding noise of unit vectors.
pub const SIMILARITY_SNAP: f64 = 1e-12;

/// Cosine of two unit vectors, clamped to `[-1, 1]`; identical vectors give
/// exactly 1.
fn unit_similarity(a: &[f64], b: &[f64]) -> f64 {
    let s = dot(a, b);
    if s >= 1.0 - SIMILARITY_SNAP {
        1.0
    } else if s <= -1.0 + SIMILARITY_SNAP {
        -1.0
    } else {
        s
    }
}

/// Best `(similarity, linear index)` per query over all target pixels.
fn argmax_batch(queries: &[Vec<f64>], target: &PixelFeatureMap) -> Vec<(f64, usize)> {
    let width = target.width();
    let channels = target.channels();
    let row_len = width * channels;
    let partials: Vec<Vec<(f64, usize)>> = target
        .data()
        .par_chunks(row_len * ROWS_PER_TASK)
        .enumerate()
        .map(|(chunk, block)| {
            let base = chunk * ROWS_PER_TASK * width;
            let mut best = vec![(f64::NEG_INFINITY, usize::MAX); queries.len()];
            for (i, px) in block.chunks_exact(channels).enumerate() {
                for (q, slot) in queries.iter().zip(best.iter_mut()) {
                    let s = unit_similarity(q, px);
                    if s > slot.0 {
                        *slot = (s, base + i);
                    }
                }
            }
            best
        })
        .collect();
    // chunks arrive in index order, so strict `>` keeps the earliest maximum
    let mut best = vec![(f64::NEG_INFINITY, usize::MAX); queries.len()];
    for part in partials {
        for (slot, cand) in best.iter_mut().zip(part) {
            if cand.0 > slot.0 {
                *slot = cand;
            }
        }
    }
    best
}

/// Transfers every prompt (positives then negatives) from the template to the
/// target.
pub fn correspond(
    template_feats: &PixelFeatureMap,
    prompts: &PromptSet,
    target_feats: &PixelFeatureMap,
) -> Result<Vec<Match>> {
    check_channels(template_feats, target_feats)?;
    let (h, w) = template_feats.dims();
    for (_, p) in prompts.iter() {
        p.check_bounds(h, w)?;
    }
    if prompts.is_empty() {
        return Ok(Vec::new());
    }
    let queries: Vec<Vec<f64>> = prompts.iter().map(|(_, p)| unit_query(template_feats, p)).collect();
    let target = normalized(target_feats);
    let best = argmax_batch(&queries, &target);
    let tw = target.width();
    Ok(prompts
        .iter()
        .zip(best)
        .enumerate()
        .map(|(i, ((polarity, source), (sim, idx)))| Match {
            source,
            target: Point::new(idx / tw, idx % tw),
            similarity: sim,
            polarity,
            label: prompts.label(i).filter(|l| !l.is_empty()).map(str::to_owned),
        })
        .collect())
}

pub fn similarity_heatmap(
    template_feats: &PixelFeatureMap,
    point: Point,
    target_feats: &PixelFeatureMap,
) -> Result<Heatmap> {
    check_channels(template_feats, target_feats)?;
    let (h, w) = template_feats.dims();
    point.check_bounds(h, w)?;
    let query = unit_query(template_feats, point);
    let target = normalized(target_feats);
    let values: Vec<f64> = target
        .data()
        .par_chunks(target.channels())
        .map(|px| unit_similarity(&query, px))
        .collect();
    Ok(Heatmap {
        height: target.height(),
        width: target.width(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// Left-right: `(r, c) -> (r, Q-1-c)`.
    #[serde(alias = "h")]
    Horizontal,
    /// Up-down: `(r, c) -> (P-1-r, c)`.
    #[serde(alias = "v")]
    Vertical,
}

impl FlipAxis {
    pub fn short_name(self) -> &'static str {
        match self {
            FlipAxis::Horizontal => "h",
            FlipAxis::Vertical => "v",
        }
    }
}

impl std::str::FromStr for FlipAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "h" | "horizontal" => Ok(FlipAxis::Horizontal),
            "v" | "vertical" => Ok(FlipAxis::Vertical),
            other => Err(Error::InvalidArgument(format!("unknown flip axis {other:?}"))),
        }
    }
}

impl Point {
    pub fn flipped(self, dims: (usize, usize), axis: FlipAxis) -> Point {
        match axis {
            FlipAxis::Horizontal => Point::new(self.row, dims.1 - 1 - self.col),
            FlipAxis::Vertical => Point::new(dims.0 - 1 - self.row, self.col),
        }
    }
}

/// Mirrors a row-major raster whose pixels are `elem`-wide.
fn flip_raster<T: Copy>(data: &[T], height: usize, width: usize, elem: usize, axis: FlipAxis) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    let row_len = width * elem;
    for r in 0..height {
        let src_r = match axis {
            FlipAxis::Horizontal => r,
            FlipAxis::Vertical => height - 1 - r,
        };
        let row = &data[src_r * row_len..(src_r + 1) * row_len];
        match axis {
            FlipAxis::Vertical => out.extend_from_slice(row),
            FlipAxis::Horizontal => {
                for px in row.chunks_exact(elem).rev() {
                    out.extend_from_slice(px);
                }
            }
        }
    }
    out
}

/// Pixel-grid mirroring. Channels of feature maps are left untouched.
pub trait Flip: Sized {
    fn flipped(&self, axis: FlipAxis) -> Self;
}

impl Flip for Image2D {
    fn flipped(&self, axis: FlipAxis) -> Self {
        let (h, w) = self.dims();
        Image2D::from_parts_unchecked(
            self.id().to_owned(),
            h,
            w,
            flip_raster(self.pixels(), h, w, 1, axis),
        )
    }
}

impl Flip for PixelFeatureMap {
    fn flipped(&self, axis: FlipAxis) -> Self {
        let (h, w) = self.dims();
        PixelFeatureMap::from_parts(
            h,
            w,
            self.channels(),
            flip_raster(self.data(), h, w, self.channels(), axis),
            self.is_normalized(),
        )
    }
}

impl Flip for Mask {
    fn flipped(&self, axis: FlipAxis) -> Self {
        let (h, w) = self.dims();
        Mask::new(h, w, flip_raster(self.bits(), h, w, 1, axis)).expect("same dims")
    }
}

impl Flip for LabelMap {
    fn flipped(&self, axis: FlipAxis) -> Self {
        let (h, w) = self.dims();
        LabelMap::new(h, w, flip_raster(self.labels(), h, w, 1, axis)).expect("same dims")
    }
}

impl Flip for Heatmap {
    fn flipped(&self, axis: FlipAxis) -> Self {
        Heatmap {
            height: self.height,
            width: self.width,
            values: flip_raster(&self.values, self.height, self.width, 1, axis),
        }
    }
}

pub fn flip_prompts(prompts: &PromptSet, dims: (usize, usize), axis: FlipAxis) -> PromptSet {
    PromptSet {
        image: prompts.image.clone(),
        positive: prompts.positive.iter().map(|p| p.flipped(dims, axis)).collect(),
        negative: prompts.negative.iter().map(|p| p.flipped(dims, axis)).collect(),
        labels: prompts.labels.clone(),
    }
}
