use rayon::prelude::*;

use super::grid::FeatureGrid;
use crate::error::{Error, Result};

/// Vectors with an L2 norm below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Dense per-pixel descriptor field, stored `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl PixelFeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidDimensions(format!(
                "feature map must be at least 1x1x1, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidDimensions(format!(
                "{} values for a {height}x{width}x{channels} map",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            normalized: false,
        })
    }

    pub(crate) fn from_parts(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        normalized: bool,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
            normalized,
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

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    /// Multiplies every value by `factor`. Clears the normalized flag unless
    /// the map was already normalized and `factor` is one.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| v * factor).collect(),
            normalized: self.normalized && factor == 1.0,
        }
    }
}

/// Per-axis interpolation lookup: lower index, upper index, fractional weight.
fn axis_table(extent: usize, offset: f32, stride: u32, cells: usize) -> Vec<(usize, usize, f64)> {
    let offset = f64::from(offset);
    let stride = f64::from(stride);
    let max = (cells - 1) as f64;
    (0..extent)
        .map(|p| {
            let g = ((p as f64 - offset) / stride).clamp(0.0, max);
            let lo = g.floor() as usize;
            let hi = (lo + 1).min(cells - 1);
            (lo, hi, g - lo as f64)
        })
        .collect()
}

/// Interpolates a patch grid to one descriptor per source pixel.
///
/// Pixels outside the span of patch centers take the nearest border value.
pub fn upsample_bilinear(grid: &FeatureGrid) -> PixelFeatureMap {
    let (height, width) = grid.source_dims();
    let (stride_y, stride_x) = grid.stride();
    let (offset_y, offset_x) = grid.offset();
    let channels = grid.channels();
    let rows = axis_table(height, offset_y, stride_y, grid.rows());
    let cols = axis_table(width, offset_x, stride_x, grid.cols());

    let mut data = vec![0.0; height * width * channels];
    data.par_chunks_mut(width * channels)
        .zip(rows.par_iter())
        .for_each(|(out_row, &(y0, y1, ty))| {
            for (out_px, &(x0, x1, tx)) in out_row.chunks_exact_mut(channels).zip(&cols) {
                let a = grid.cell(y0, x0);
                let b = grid.cell(y0, x1);
                let c = grid.cell(y1, x0);
                let d = grid.cell(y1, x1);
                for k in 0..channels {
                    let top = a[k] + tx * (b[k] - a[k]);
                    let bottom = c[k] + tx * (d[k] - c[k]);
                    out_px[k] = top + ty * (bottom - top);
                }
            }
        });
    PixelFeatureMap::from_parts(height, width, channels, data, false)
}

pub(crate) fn normalize_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < ZERO_NORM_EPS {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Scales every pixel vector to unit L2 norm; near-zero vectors become zero.
pub fn l2_normalize(map: &PixelFeatureMap) -> PixelFeatureMap {
    let mut data = map.data.clone();
    data.par_chunks_mut(map.channels).for_each(normalize_in_place);
    PixelFeatureMap::from_parts(map.height, map.width, map.channels, data, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::grid::GridGeometry;

    #[test]
    fn constant_grid_gives_constant_map() {
        let grid = FeatureGrid::with_uniform_stride(3, 3, 2, 4, (11, 10), [0.7, -1.25].repeat(9)).unwrap();
        let map = upsample_bilinear(&grid);
        assert_eq!(map.dims(), (11, 10));
        for px in map.pixels() {
            assert_eq!(px, &[0.7, -1.25]);
        }
    }

    #[test]
    fn midpoint_between_two_centers() {
        // centers at pixel columns 0 and 4, values 0 and 2
        let grid = FeatureGrid::with_uniform_stride(1, 2, 1, 4, (1, 5), vec![0.0, 2.0]).unwrap();
        let map = upsample_bilinear(&grid);
        assert_eq!(map.pixel(0, 2), &[1.0]);
        assert_eq!(map.pixel(0, 1), &[0.5]);
    }

    #[test]
    fn exact_at_patch_centers_with_offset() {
        let geom = GridGeometry {
            rows: 3,
            cols: 4,
            channels: 3,
            stride_y: 3,
            stride_x: 2,
            offset_y: 1.0,
            offset_x: 2.0,
            source_dims: (9, 10),
        };
        let data: Vec<f64> = (0..36).map(|i| (i as f64).sin()).collect();
        let grid = FeatureGrid::new(geom, data).unwrap();
        let map = upsample_bilinear(&grid);
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(map.pixel(1 + 3 * i, 2 + 2 * j), grid.cell(i, j));
            }
        }
        // clamped margins
        assert_eq!(map.pixel(0, 0), grid.cell(0, 0));
        assert_eq!(map.pixel(8, 9), grid.cell(2, 3));
    }

    #[test]
    fn single_cell_grid_is_constant() {
        let grid = FeatureGrid::with_uniform_stride(1, 1, 2, 1, (4, 3), vec![1.0, 2.0]).unwrap();
        let map = upsample_bilinear(&grid);
        assert!(map.pixels().all(|p| p == [1.0, 2.0]));
    }

    #[test]
    fn normalize_examples() {
        let map = PixelFeatureMap::new(1, 3, 2, vec![3.0, 4.0, 0.0, 0.0, 1e-13, 0.0]).unwrap();
        let n = l2_normalize(&map);
        assert!(n.is_normalized());
        assert_eq!(n.pixel(0, 0), &[0.6, 0.8]);
        assert_eq!(n.pixel(0, 1), &[0.0, 0.0]);
        assert_eq!(n.pixel(0, 2), &[0.0, 0.0]);
    }

    #[test]
    fn normalize_keeps_unit_vectors() {
        let s = 0.5f64.sqrt();
        let map = PixelFeatureMap::new(1, 2, 2, vec![s, s, 1.0, 0.0]).unwrap();
        let n = l2_normalize(&map);
        for (a, b) in map.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
