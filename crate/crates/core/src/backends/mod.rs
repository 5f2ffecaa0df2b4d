//! Feature acquisition: the model registry and feature providers.
//!
//! Model inference never runs in-process. [`FileProvider`] reads precomputed
//! DFG1 grids; [`ExternalProvider`] asks an HTTP inference host.

mod external;
mod file;
mod registry;

use std::sync::Arc;

pub use self::external::{
    ExternalConfig, ExternalProvider, FeatureRequest, HttpMaskPredictor, MaskRequest, MaskResponse, WireCandidate,
};
pub use self::file::FileProvider;
pub use self::registry::{registry, registry_lookup, EmbeddingKind, ModelSpec};

use crate::error::Result;
use crate::model::{FeatureGrid, Image2D};

pub trait FeatureProvider: Send + Sync {
    /// Grid for `image` under `model`; repeated calls return identical data.
    fn features_for(&self, image: &Image2D, model: &ModelSpec) -> Result<Arc<FeatureGrid>>;

    /// True when features are computed from the pixels sent, so a transformed
    /// image gets its own features. File-backed providers key on the id only.
    fn fetches_pixels(&self) -> bool {
        false
    }
}

impl<P: FeatureProvider + ?Sized> FeatureProvider for Arc<P> {
    fn features_for(&self, image: &Image2D, model: &ModelSpec) -> Result<Arc<FeatureGrid>> {
        (**self).features_for(image, model)
    }

    fn fetches_pixels(&self) -> bool {
        (**self).fetches_pixels()
    }
}
