//! Mask generation from propagated prompts.

use std::collections::HashMap;
use std::collections::VecDeque;

use serde::Serialize;

use crate::correspondence::{Heatmap, Match};
use crate::error::{Error, Result};
use crate::model::{Image2D, LabelMap, Mask, Point, Polarity};

#[derive(Debug, Clone, PartialEq)]
pub struct MaskCandidate {
    pub mask: Mask,
    pub score: f64,
}

/// A point-promptable mask predictor.
pub trait MaskPredictor: Send + Sync {
    fn predict(&self, image: &Image2D, positive: &[Point], negative: &[Point]) -> Result<Vec<MaskCandidate>>;

    /// Whether `predict` may run on several threads at once.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

impl<P: MaskPredictor + ?Sized> MaskPredictor for std::sync::Arc<P> {
    fn predict(&self, image: &Image2D, positive: &[Point], negative: &[Point]) -> Result<Vec<MaskCandidate>> {
        (**self).predict(image, positive, negative)
    }

    fn concurrent_safe(&self) -> bool {
        (**self).concurrent_safe()
    }
}

/// Deterministic predictor backed by hidden label images, keyed by image id.
///
/// The predicted mask is the union of label regions that hold at least one
/// positive and no negative prompt; the score is the fraction of positives
/// inside it.
#[derive(Debug, Clone, Default)]
pub struct OraclePredictor {
    labels: HashMap<String, LabelMap>,
}

impl OraclePredictor {
    pub fn new(labels: HashMap<String, LabelMap>) -> Self {
        Self { labels }
    }

    pub fn single(image_id: impl Into<String>, labels: LabelMap) -> Self {
        let mut map = HashMap::new();
        map.insert(image_id.into(), labels);
        Self { labels: map }
    }

    pub fn insert(&mut self, image_id: impl Into<String>, labels: LabelMap) {
        self.labels.insert(image_id.into(), labels);
    }

    pub fn has(&self, image_id: &str) -> bool {
        self.labels.contains_key(image_id)
    }
}

impl MaskPredictor for OraclePredictor {
    fn predict(&self, image: &Image2D, positive: &[Point], negative: &[Point]) -> Result<Vec<MaskCandidate>> {
        let labels = self
            .labels
            .get(image.id())
            .ok_or_else(|| Error::Predictor(format!("oracle has no label map for image {:?}", image.id())))?;
        if labels.dims() != image.dims() {
            return Err(Error::Predictor(format!(
                "label map {:?} does not match image {:?}",
                labels.dims(),
                image.dims()
            )));
        }
        let (h, w) = image.dims();
        for p in positive.iter().chain(negative) {
            p.check_bounds(h, w)?;
        }
        let excluded: Vec<u32> = negative.iter().map(|p| labels.get(p.row, p.col)).collect();
        let mut chosen: Vec<u32> = positive
            .iter()
            .map(|p| labels.get(p.row, p.col))
            .filter(|l| !excluded.contains(l))
            .collect();
        chosen.sort_unstable();
        chosen.dedup();
        let bits: Vec<bool> = labels
            .labels()
            .iter()
            .map(|l| chosen.binary_search(l).is_ok())
            .collect();
        let mask = Mask::new(h, w, bits)?;
        let score = if positive.is_empty() {
            0.0
        } else {
            positive.iter().filter(|p| mask.contains(**p)).count() as f64 / positive.len() as f64
        };
        Ok(vec![MaskCandidate { mask, score }])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationOutcome {
    pub mask: Mask,
    pub predictor_score: f64,
    pub prompts_used: Vec<Match>,
    pub candidates_considered: usize,
    pub selected: usize,
}

#[derive(Serialize)]
struct OutcomeMetadata<'a> {
    score: f64,
    prompts: &'a [Match],
    candidates: usize,
    selected: usize,
}

impl SegmentationOutcome {
    /// `{"score": f, "prompts": [...], "candidates": k, "selected": i}`
    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::to_value(OutcomeMetadata {
            score: self.predictor_score,
            prompts: &self.prompts_used,
            candidates: self.candidates_considered,
            selected: self.selected,
        })
        .expect("metadata serializes")
    }
}

/// Runs the predictor on the propagated prompts and keeps the best-scoring
/// candidate (first one on ties).
pub fn segment_with_prompts(
    target: &Image2D,
    matches: &[Match],
    predictor: &dyn MaskPredictor,
) -> Result<SegmentationOutcome> {
    let (h, w) = target.dims();
    for m in matches {
        m.target.check_bounds(h, w)?;
    }
    let split = |polarity| -> Vec<Point> {
        matches
            .iter()
            .filter(|m| m.polarity == polarity)
            .map(|m| m.target)
            .collect()
    };
    let positive = split(Polarity::Positive);
    let negative = split(Polarity::Negative);
    if positive.is_empty() {
        return Err(Error::NoPositivePrompts);
    }
    let candidates = predictor
        .predict(target, &positive, &negative)
        .map_err(|e| e.context(format!("mask predictor on image {:?}", target.id())))?;
    if candidates.is_empty() {
        return Err(Error::Predictor("predictor returned no candidates".into()));
    }
    let mut selected = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.mask.dims() != (h, w) {
            return Err(Error::Predictor(format!(
                "candidate {i} mask is {:?}, image is {:?}",
                c.mask.dims(),
                (h, w)
            )));
        }
        if !c.score.is_finite() {
            return Err(Error::Predictor(format!("candidate {i} has non-finite score")));
        }
        if c.score > candidates[selected].score {
            selected = i;
        }
    }
    let candidates_considered = candidates.len();
    let best = candidates.into_iter().nth(selected).expect("index in range");
    Ok(SegmentationOutcome {
        mask: best.mask,
        predictor_score: best.score,
        prompts_used: matches.to_vec(),
        candidates_considered,
        selected,
    })
}

/// Nearest-rank percentile: the `ceil(p * N)`-th smallest value (1-based).
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Keeps pixels whose best similarity over all heatmaps reaches the
/// nearest-rank `percentile` of those best similarities.
pub fn similarity_threshold_mask(heatmaps: &[Heatmap], percentile: f64) -> Result<Mask> {
    let first = heatmaps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no heatmaps".into()))?;
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile must be in (0, 1), got {percentile}"
        )));
    }
    let dims = first.dims();
    if let Some(bad) = heatmaps.iter().find(|h| h.dims() != dims) {
        return Err(Error::DimensionMismatch(format!(
            "heatmap {:?} vs {:?}",
            bad.dims(),
            dims
        )));
    }
    let mut best = first.values().to_vec();
    for hm in &heatmaps[1..] {
        for (b, v) in best.iter_mut().zip(hm.values()) {
            *b = b.max(*v);
        }
    }
    let mut sorted = best.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = nearest_rank(&sorted, percentile);
    Mask::new(dims.0, dims.1, best.iter().map(|&s| s >= threshold).collect())
}

/// Largest 4-connected foreground component; ties keep the one reached first
/// in row-major order.
pub fn largest_component(mask: &Mask) -> Mask {
    let (h, w) = mask.dims();
    let mut comp = vec![usize::MAX; h * w];
    let mut best: Option<(usize, usize)> = None; // (component id, size)
    let mut queue = VecDeque::new();
    let mut next_id = 0;
    for start in 0..h * w {
        if !mask.bits()[start] || comp[start] != usize::MAX {
            continue;
        }
        let id = next_id;
        next_id += 1;
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask.bits()[j] && comp[j] == usize::MAX {
                    comp[j] = id;
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
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((id, size));
        }
    }
    match best {
        None => mask.clone(),
        Some((id, _)) => Mask::new(h, w, comp.iter().map(|&c| c == id).collect()).expect("same dims"),
    }
}
