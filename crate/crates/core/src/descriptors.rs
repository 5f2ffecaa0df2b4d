//! Descriptor enrichment on patch grids: log-radius compass binning of each
//! cell's neighborhood, and mean aggregation of repeated feature samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::pixel::normalize_in_place;
use crate::model::FeatureGrid;

/// Compass directions in bin order, as `(dy, dx)` unit steps.
pub const COMPASS: [(i64, i64); 8] = [
    (-1, 0),  // N
    (-1, 1),  // NE
    (0, 1),   // E
    (1, 1),   // SE
    (1, 0),   // S
    (1, -1),  // SW
    (0, -1),  // W
    (-1, -1), // NW
];

const MAX_LEVELS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogBinParams {
    pub levels: usize,
    #[serde(default = "default_directions")]
    pub directions: usize,
}

fn default_directions() -> usize {
    8
}

impl Default for LogBinParams {
    fn default() -> Self {
        Self {
            levels: 2,
            directions: 8,
        }
    }
}

impl LogBinParams {
    pub fn new(levels: usize) -> Result<Self> {
        let params = Self {
            levels,
            directions: 8,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > MAX_LEVELS {
            return Err(Error::InvalidArgument(format!(
                "log-bin levels must be in 1..={MAX_LEVELS}, got {}",
                self.levels
            )));
        }
        if self.directions != 8 {
            return Err(Error::InvalidArgument(format!(
                "log binning uses 8 compass directions, got {}",
                self.directions
            )));
        }
        Ok(())
    }

    /// Chebyshev radius of the ring sampled at `level` (1-based): `2^(level-1)`.
    pub fn radius(level: usize) -> i64 {
        1 << (level - 1)
    }

    pub fn output_channels(&self, input_channels: usize) -> usize {
        input_channels * (1 + self.directions * self.levels)
    }
}

/// Compass sector of a nonzero offset: the direction whose bearing is
/// within 22.5 degrees. Integer offsets never fall on a sector boundary.
pub fn sector_of(dy: i64, dx: i64) -> usize {
    let bearing = (dx as f64).atan2(-(dy as f64)); // 0 at north, clockwise
    let step = std::f64::consts::FRAC_PI_4;
    (bearing / step).round().rem_euclid(8.0) as usize
}

/// Offsets on the Chebyshev ring of `radius`, each tagged with its sector.
pub fn ring_offsets(radius: i64) -> Vec<(i64, i64, usize)> {
    let mut ring = Vec::with_capacity(8 * radius as usize);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dy.abs().max(dx.abs()) == radius {
                ring.push((dy, dx, sector_of(dy, dx)));
            }
        }
    }
    ring
}

/// Enriches each cell with the mean of its neighbors in every compass sector
/// at radii `1, 2, 4, ...`.
///
/// Output layout per cell: the center vector, then for level 1..=L and each
/// direction in [`COMPASS`] order, one `D`-vector. Out-of-grid cells are left
/// out of each mean and an empty sector is zero. Every output cell is L2
/// normalized.
pub fn log_bin_enrich(grid: &FeatureGrid, params: LogBinParams) -> Result<FeatureGrid> {
    params.validate()?;
    let rows = grid.rows();
    let cols = grid.cols();
    let d = grid.channels();
    let out_d = params.output_channels(d);
    let rings: Vec<Vec<(i64, i64, usize)>> = (1..=params.levels)
        .map(|l| ring_offsets(LogBinParams::radius(l)))
        .collect();

    let mut data = vec![0.0; rows * cols * out_d];
    data.par_chunks_mut(cols * out_d)
        .enumerate()
        .for_each(|(r, out_row)| {
            let mut counts = [0usize; 8];
            for (c, out) in out_row.chunks_exact_mut(out_d).enumerate() {
                out[..d].copy_from_slice(grid.cell(r, c));
                for (level, ring) in rings.iter().enumerate() {
                    let base = d * (1 + 8 * level);
                    let bins = &mut out[base..base + 8 * d];
                    counts.fill(0);
                    for &(dy, dx, sector) in ring {
                        let (y, x) = (r as i64 + dy, c as i64 + dx);
                        if y < 0 || x < 0 || y >= rows as i64 || x >= cols as i64 {
                            continue;
                        }
                        counts[sector] += 1;
                        let bin = &mut bins[sector * d..(sector + 1) * d];
                        for (acc, v) in bin.iter_mut().zip(grid.cell(y as usize, x as usize)) {
                            *acc += v;
                        }
                    }
                    for (sector, &n) in counts.iter().enumerate() {
                        if n > 1 {
                            let inv = n as f64;
                            bins[sector * d..(sector + 1) * d]
                                .iter_mut()
                                .for_each(|v| *v /= inv);
                        }
                    }
                }
                normalize_in_place(out);
            }
        });

    let mut geometry = grid.geometry();
    geometry.channels = out_d;
    FeatureGrid::new(geometry, data)
}

/// Elementwise mean of feature samples that share one geometry.
pub fn aggregate_feature_samples(grids: &[FeatureGrid]) -> Result<FeatureGrid> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidArgument("no feature samples to aggregate".into()))?;
    let geometry = first.geometry();
    for (i, g) in grids.iter().enumerate().skip(1) {
        if g.geometry() != geometry {
            return Err(Error::Geometry(format!(
                "sample {i} geometry {:?} differs from sample 0 {:?}",
                g.geometry(),
                geometry
            )));
        }
    }
    if grids.len() == 1 {
        return Ok(first.clone());
    }
    let n = grids.len() as f64;
    let mut sum = vec![0.0; first.data().len()];
    for g in grids {
        for (acc, v) in sum.iter_mut().zip(g.data()) {
            *acc += v;
        }
    }
    sum.iter_mut().for_each(|v| *v /= n);
    FeatureGrid::new(geometry, sum)
}
