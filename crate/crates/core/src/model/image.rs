use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel coordinate, `(row, col)` with the origin at the top-left.
///
/// Serializes as a two-element array `[row, col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Point {
    pub row: usize,
    pub col: usize,
}

impl Point {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn in_bounds(self, height: usize, width: usize) -> bool {
        self.row < height && self.col < width
    }

    pub fn check_bounds(self, height: usize, width: usize) -> Result<()> {
        if self.in_bounds(height, width) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                row: self.row,
                col: self.col,
                height,
                width,
            })
        }
    }
}

impl From<[usize; 2]> for Point {
    fn from([row, col]: [usize; 2]) -> Self {
        Self { row, col }
    }
}

impl From<Point> for [usize; 2] {
    fn from(p: Point) -> Self {
        [p.row, p.col]
    }
}

impl From<(usize, usize)> for Point {
    fn from((row, col): (usize, usize)) -> Self {
        Self { row, col }
    }
}

/// Single-channel image with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    id: String,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image2D {
    pub fn new(id: impl Into<String>, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!(
                "image must be at least 1x1, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::InvalidDimensions(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(i) = pixels
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "intensity {} at index {i} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self {
            id: id.into(),
            height,
            width,
            pixels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
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

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub(crate) fn from_parts_unchecked(id: String, height: usize, width: usize, pixels: Vec<f64>) -> Self {
        Self {
            id,
            height,
            width,
            pixels,
        }
    }
}

/// Binary segmentation raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::InvalidDimensions(format!(
                "{} bits for a {height}x{width} mask",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn contains(&self, p: Point) -> bool {
        self.get(p.row, p.col)
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }
}

/// Integer label raster, used by the oracle mask predictor and for cluster maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::InvalidDimensions(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            height: mask.height,
            width: mask.width,
            labels: mask.bits.iter().map(|&b| u32::from(b)).collect(),
        }
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

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn region(&self, label: u32) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l == label).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Positive and negative point prompts placed on one image.
///
/// `labels`, when present, names the positives first and then the negatives;
/// it may cover only the positives.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default)]
    pub positive: Vec<Point>,
    #[serde(default)]
    pub negative: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl PromptSet {
    pub fn new(positive: Vec<Point>, negative: Vec<Point>) -> Self {
        Self {
            image: None,
            positive,
            negative,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All prompts in canonical order: positives, then negatives.
    pub fn iter(&self) -> impl Iterator<Item = (Polarity, Point)> + '_ {
        self.positive
            .iter()
            .map(|p| (Polarity::Positive, *p))
            .chain(self.negative.iter().map(|p| (Polarity::Negative, *p)))
    }

    pub fn get(&self, index: usize) -> Option<(Polarity, Point)> {
        self.iter().nth(index)
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels
            .as_ref()
            .and_then(|l| l.get(index))
            .map(String::as_str)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for (_, p) in self.iter() {
            p.check_bounds(height, width)?;
        }
        for list in [&self.positive, &self.negative] {
            let mut seen = std::collections::HashSet::with_capacity(list.len());
            for p in list {
                if !seen.insert(*p) {
                    return Err(Error::DuplicatePrompt {
                        row: p.row,
                        col: p.col,
                    });
                }
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.positive.len() && labels.len() != self.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} labels for {} positive / {} total prompts",
                    labels.len(),
                    self.positive.len(),
                    self.len()
                )));
            }
        }
        Ok(())
    }

    /// Adds a prompt, keeping labels aligned when present.
    pub fn push(&mut self, polarity: Polarity, point: Point, label: Option<String>) -> Result<()> {
        let list = match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        };
        if list.contains(&point) {
            return Err(Error::DuplicatePrompt {
                row: point.row,
                col: point.col,
            });
        }
        let insert_at = match polarity {
            Polarity::Positive => self.positive.len(),
            Polarity::Negative => self.len(),
        };
        if self.labels.is_some() || label.is_some() {
            let mut labels = self.labels.take().unwrap_or_default();
            labels.resize(self.len(), String::new());
            labels.insert(insert_at, label.unwrap_or_default());
            self.labels = Some(labels);
        }
        match polarity {
            Polarity::Positive => self.positive.push(point),
            Polarity::Negative => self.negative.push(point),
        }
        Ok(())
    }

    /// Removes the prompt at a canonical index, returning it.
    pub fn remove(&mut self, index: usize) -> Option<(Polarity, Point)> {
        let removed = if index < self.positive.len() {
            (Polarity::Positive, self.positive.remove(index))
        } else if index < self.len() {
            (
                Polarity::Negative,
                self.negative.remove(index - self.positive.len()),
            )
        } else {
            return None;
        };
        if let Some(labels) = &mut self.labels {
            if index < labels.len() {
                labels.remove(index);
            }
        }
        Some(removed)
    }
}
