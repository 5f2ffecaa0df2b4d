//! Domain types, coordinate conventions and file I/O.
//!
//! Coordinates are `(row, col)`, 0-indexed from the top-left pixel.

pub mod grid;
pub mod image;
pub mod io;
pub mod pixel;

pub use self::grid::{load_feature_grid, save_feature_grid, FeatureGrid, GridGeometry};
pub use self::image::{Image2D, LabelMap, Mask, Point, Polarity, PromptSet};
pub use self::pixel::{l2_normalize, upsample_bilinear, PixelFeatureMap};
