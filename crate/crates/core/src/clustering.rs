//! Joint k-means over the pixel descriptors of several images, and colored
//! label overlays that keep one color per cluster across images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::io::encode_rgb8_png;
use crate::model::{l2_normalize, Image2D, LabelMap, PixelFeatureMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iterations: usize,
    /// Stop once `(previous - current) / previous` inertia drops below this.
    pub tolerance: f64,
    /// L2-normalize descriptors before clustering.
    pub normalize: bool,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoClusterResult {
    pub k: usize,
    pub channels: usize,
    /// `k x channels`, row-major.
    pub centroids: Vec<f64>,
    #[serde(skip)]
    pub label_maps: Vec<LabelMap>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

impl CoClusterResult {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.channels..(i + 1) * self.channels]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Nearest centroid per point (ties to the lower index) and the total cost.
fn assign(points: &[f64], centroids: &[f64], c: usize) -> (Vec<u32>, f64) {
    let costs: Vec<(u32, f64)> = points
        .par_chunks(c)
        .map(|p| {
            let mut best = (0u32, f64::INFINITY);
            for (j, centroid) in centroids.chunks_exact(c).enumerate() {
                let d = sq_dist(p, centroid);
                if d < best.1 {
                    best = (j as u32, d);
                }
            }
            best
        })
        .collect();
    let inertia = costs.iter().map(|(_, d)| d).sum();
    (costs.into_iter().map(|(l, _)| l).collect(), inertia)
}

fn kmeans_pp(points: &[f64], c: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / c;
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut nearest: Vec<f64> = points
        .chunks_exact(c)
        .map(|p| sq_dist(p, &points[chosen[0] * c..(chosen[0] + 1) * c]))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on an already-covered point
            if nearest[pick] == 0.0 {
                pick = nearest.iter().rposition(|w| *w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // every remaining point duplicates a chosen center
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        let center = &points[next * c..(next + 1) * c];
        nearest
            .par_iter_mut()
            .zip(points.par_chunks(c))
            .for_each(|(w, p)| *w = w.min(sq_dist(p, center)));
    }
    chosen
        .iter()
        .flat_map(|&i| points[i * c..(i + 1) * c].iter().copied())
        .collect()
}

/// Cluster means; an empty cluster takes the point of the largest cluster
/// that lies farthest from that cluster's mean.
fn update(points: &[f64], labels: &mut [u32], c: usize, k: usize) -> Vec<f64> {
    loop {
        let mut sums = vec![0.0; k * c];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.chunks_exact(c).zip(labels.iter()) {
            let l = l as usize;
            counts[l] += 1;
            for (s, v) in sums[l * c..(l + 1) * c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (j, &n) in counts.iter().enumerate() {
            if n > 0 {
                sums[j * c..(j + 1) * c].iter_mut().for_each(|s| *s /= n as f64);
            }
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return sums;
        };
        let largest = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
        let mean = &sums[largest * c..(largest + 1) * c];
        let mut far = (usize::MAX, -1.0);
        for (i, (p, &l)) in points.chunks_exact(c).zip(labels.iter()).enumerate() {
            if l as usize == largest {
                let d = sq_dist(p, mean);
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        labels[far.0] = empty as u32;
    }
}

/// Pools every pixel of `maps` and runs seeded k-means++ / Lloyd.
pub fn co_cluster(maps: &[PixelFeatureMap], k: usize, seed: u64, options: KMeansOptions) -> Result<CoClusterResult> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no feature maps to cluster".into()))?;
    let c = first.channels();
    if let Some(bad) = maps.iter().find(|m| m.channels() != c) {
        return Err(Error::ChannelMismatch {
            expected: c,
            found: bad.channels(),
        });
    }
    let n: usize = maps.iter().map(|m| m.height() * m.width()).sum();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={n} (pooled pixel count)"
        )));
    }
    let mut points = Vec::with_capacity(n * c);
    for m in maps {
        if options.normalize {
            points.extend_from_slice(l2_normalize(m).data());
        } else {
            points.extend_from_slice(m.data());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(&points, c, k, &mut rng);
    let (mut labels, mut inertia) = assign(&points, &centroids, c);
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < options.max_iterations && inertia > 0.0 {
        iterations += 1;
        let mut working = labels.clone();
        centroids = update(&points, &mut working, c, k);
        let (next_labels, next_inertia) = assign(&points, &centroids, c);
        history.push(next_inertia);
        let unchanged = next_labels == labels;
        let rel = (inertia - next_inertia) / inertia;
        labels = next_labels;
        inertia = next_inertia;
        if unchanged || rel < options.tolerance {
            break;
        }
    }

    let mut label_maps = Vec::with_capacity(maps.len());
    let mut at = 0;
    for m in maps {
        let len = m.height() * m.width();
        label_maps.push(LabelMap::new(m.height(), m.width(), labels[at..at + len].to_vec())?);
        at += len;
    }
    Ok(CoClusterResult {
        k,
        channels: c,
        centroids,
        label_maps,
        inertia,
        iterations,
        inertia_history: history,
    })
}

/// Minimum per-pair channel separation (max over R, G, B) targeted by the palette.
pub const PALETTE_MIN_SEPARATION: u8 = 32;
const PALETTE_CANDIDATES: usize = 64;

/// Deterministic palette: color `i` depends only on `seed` and colors `0..i`,
/// so every prefix is stable. Each color is the most distant of a batch of
/// random candidates from the colors before it.
pub fn palette(seed: u64, len: usize) -> Vec<[u8; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut colors: Vec<[u8; 3]> = Vec::with_capacity(len);
    for _ in 0..len {
        let mut best = ([0u8; 3], -1i32);
        for _ in 0..PALETTE_CANDIDATES {
            let cand: [u8; 3] = [rng.random(), rng.random(), rng.random()];
            let sep = colors
                .iter()
                .map(|c| channel_distance(*c, cand) as i32)
                .min()
                .unwrap_or(i32::MAX);
            if sep > best.1 {
                best = (cand, sep);
            }
        }
        colors.push(best.0);
    }
    colors
}

/// Largest absolute per-channel difference.
pub fn channel_distance(a: [u8; 3], b: [u8; 3]) -> u8 {
    (0..3).map(|i| a[i].abs_diff(b[i])).max().unwrap()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbRaster {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_rgb8_png(self.height, self.width, &self.data)
    }
}

/// Overlay opacity of the cluster color.
pub const OVERLAY_ALPHA: f64 = 0.5;

/// Tints each pixel with its label's palette color.
pub fn render_label_overlay(image: &Image2D, labels: &LabelMap, palette_seed: u64) -> Result<RgbRaster> {
    if image.dims() != labels.dims() {
        return Err(Error::DimensionMismatch(format!(
            "image {:?} vs labels {:?}",
            image.dims(),
            labels.dims()
        )));
    }
    let len = labels.labels().iter().max().map_or(0, |m| *m as usize + 1);
    let colors = palette(palette_seed, len);
    let mut data = Vec::with_capacity(image.pixels().len() * 3);
    for (v, &l) in image.pixels().iter().zip(labels.labels()) {
        let gray = v * 255.0;
        for ch in colors[l as usize] {
            let mixed = (1.0 - OVERLAY_ALPHA) * gray + OVERLAY_ALPHA * f64::from(ch);
            data.push(mixed.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RgbRaster {
        height: image.height(),
        width: image.width(),
        data,
    })
}
