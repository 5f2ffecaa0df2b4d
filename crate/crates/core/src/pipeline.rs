use crate::backends::{FeatureProvider, ModelSpec};
use crate::correspondence::{Flip, FlipAxis};
use crate::descriptors::{log_bin_enrich, LogBinParams};
use crate::error::Result;
use crate::model::{upsample_bilinear, Image2D, PixelFeatureMap};

/// Provider grid, optionally log-bin enriched, up-sampled to pixels.
pub fn pixel_features(
    provider: &dyn FeatureProvider,
    image: &Image2D,
    model: &ModelSpec,
    enrichment: Option<LogBinParams>,
) -> Result<PixelFeatureMap> {
    let grid = provider.features_for(image, model)?;
    Ok(match enrichment {
        Some(params) => upsample_bilinear(&log_bin_enrich(&grid, params)?),
        None => upsample_bilinear(&grid),
    })
}

/// Features of `image` mirrored along `axis`.
///
/// Providers that compute from pixels are asked for the mirrored image
/// (id suffixed `@flip-h` / `@flip-v`); file-backed features are mirrored by
/// the engine instead.
pub fn flipped_pixel_features(
    provider: &dyn FeatureProvider,
    image: &Image2D,
    model: &ModelSpec,
    enrichment: Option<LogBinParams>,
    axis: FlipAxis,
) -> Result<PixelFeatureMap> {
    if provider.fetches_pixels() {
        let flipped = image
            .flipped(axis)
            .with_id(format!("{}@flip-{}", image.id(), axis.short_name()));
        pixel_features(provider, &flipped, model, enrichment)
    } else {
        Ok(pixel_features(provider, image, model, enrichment)?.flipped(axis))
    }
}
