use std::path::Path;

use crate::error::{Error, Result};

pub const DFG1_MAGIC: &[u8; 4] = b"DFG1";
pub const DFG1_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 8 * 4 + 2 * 4;

/// Coarse patch-token feature map, stored `(row, col, channel)`.
///
/// Patch `(i, j)` is centered at pixel `(offset_y + i * stride_y, offset_x + j * stride_x)`
/// of a `source_dims` image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
    stride_y: u32,
    stride_x: u32,
    offset_y: f32,
    offset_x: f32,
    source_dims: (usize, usize),
}

/// Geometry shared by grids that are compatible for aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub stride_y: u32,
    pub stride_x: u32,
    pub offset_y: f32,
    pub offset_x: f32,
    pub source_dims: (usize, usize),
}

impl FeatureGrid {
    pub fn new(geometry: GridGeometry, data: Vec<f64>) -> Result<Self> {
        let GridGeometry {
            rows,
            cols,
            channels,
            stride_y,
            stride_x,
            offset_y,
            offset_x,
            source_dims,
        } = geometry;
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::Geometry(format!(
                "grid must be at least 1x1x1, got {rows}x{cols}x{channels}"
            )));
        }
        if stride_y == 0 || stride_x == 0 {
            return Err(Error::Geometry("stride must be >= 1".into()));
        }
        let (height, width) = source_dims;
        if height == 0 || width == 0 {
            return Err(Error::Geometry("source dims must be nonzero".into()));
        }
        check_axis("row", offset_y, stride_y, rows, height)?;
        check_axis("col", offset_x, stride_x, cols, width)?;
        if data.len() != rows * cols * channels {
            return Err(Error::Geometry(format!(
                "{} values for a {rows}x{cols}x{channels} grid",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            data,
            stride_y,
            stride_x,
            offset_y,
            offset_x,
            source_dims,
        })
    }

    /// Grid whose patch centers tile the image at `stride` starting at pixel 0.
    pub fn with_uniform_stride(
        rows: usize,
        cols: usize,
        channels: usize,
        stride: u32,
        source_dims: (usize, usize),
        data: Vec<f64>,
    ) -> Result<Self> {
        Self::new(
            GridGeometry {
                rows,
                cols,
                channels,
                stride_y: stride,
                stride_x: stride,
                offset_y: 0.0,
                offset_x: 0.0,
                source_dims,
            },
            data,
        )
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            stride_y: self.stride_y,
            stride_x: self.stride_x,
            offset_y: self.offset_y,
            offset_x: self.offset_x,
            source_dims: self.source_dims,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> (u32, u32) {
        (self.stride_y, self.stride_x)
    }

    pub fn offset(&self) -> (f32, f32) {
        (self.offset_y, self.offset_x)
    }

    pub fn source_dims(&self) -> (usize, usize) {
        self.source_dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Serializes to the DFG1 wire format. Values are narrowed to `f32`.
    pub fn to_dfg1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(DFG1_MAGIC);
        for v in [
            DFG1_VERSION,
            self.rows as u32,
            self.cols as u32,
            self.channels as u32,
            self.source_dims.0 as u32,
            self.source_dims.1 as u32,
            self.stride_y,
            self.stride_x,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.offset_y.to_le_bytes());
        out.extend_from_slice(&self.offset_x.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_dfg1_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != DFG1_MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::PayloadSizeMismatch {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let u32_at = |i: usize| {
            let at = 4 + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
        };
        let version = u32_at(0);
        if version != DFG1_VERSION {
            return Err(Error::BadVersion(version));
        }
        let rows = u32_at(1) as usize;
        let cols = u32_at(2) as usize;
        let channels = u32_at(3) as usize;
        let source_dims = (u32_at(4) as usize, u32_at(5) as usize);
        let stride_y = u32_at(6);
        let stride_x = u32_at(7);
        let offset_y = f32::from_le_bytes(bytes[36..40].try_into().unwrap());
        let offset_x = f32::from_le_bytes(bytes[40..44].try_into().unwrap());

        let count = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Geometry("grid size overflows".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if Some(payload.len()) != count.checked_mul(4) {
            return Err(Error::PayloadSizeMismatch {
                expected: HEADER_LEN + count.saturating_mul(4),
                found: bytes.len(),
            });
        }
        let mut data = Vec::with_capacity(count);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite(i));
            }
            data.push(f64::from(v));
        }
        Self::new(
            GridGeometry {
                rows,
                cols,
                channels,
                stride_y,
                stride_x,
                offset_y,
                offset_x,
                source_dims,
            },
            data,
        )
    }
}

fn check_axis(name: &str, offset: f32, stride: u32, count: usize, extent: usize) -> Result<()> {
    let first = f64::from(offset);
    let last = first + (count as f64 - 1.0) * f64::from(stride);
    if !first.is_finite() || first < 0.0 || last > (extent - 1) as f64 {
        return Err(Error::Geometry(format!(
            "{name} patch centers [{first}, {last}] fall outside [0, {}]",
            extent - 1
        )));
    }
    Ok(())
}

pub fn load_feature_grid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureGrid::from_dfg1_bytes(&bytes).map_err(|e| e.context(path.display().to_string()))
}

pub fn save_feature_grid(grid: &FeatureGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, grid.to_dfg1_bytes()).map_err(|e| Error::io(path, e))
}
