//! One-shot segmentation and landmark localization by propagating point
//! prompts from a single annotated template through dense feature
//! correspondence.
//!
//! The flow is: acquire patch features from a [`backends::FeatureProvider`],
//! optionally enrich them ([`descriptors`]), up-sample to pixels
//! ([`model::upsample_bilinear`]), move each prompt to its most similar target
//! pixel ([`correspondence::correspond`]) and hand the moved prompts to a
//! point-promptable mask predictor ([`segmentation`]). [`metrics`] and
//! [`eval`] score the results.

pub mod backends;
pub mod clustering;
pub mod correspondence;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod segmentation;

pub use error::{Error, Result};
