use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    /// Patch tokens from a transformer block.
    Token,
    /// Output of the image encoder's neck.
    EncoderOutput,
    /// Intermediate decoder activations of a denoising model.
    DiffusionIntermediate,
}

/// A feature source. DINO ids follow `d[VERSION][SZ][PS]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelSpec {
    pub id: &'static str,
    pub patch_size: u32,
    /// Transformer block whose tokens are used; `None` for non-token sources.
    pub embedding_layer: Option<u32>,
    pub embedding_kind: EmbeddingKind,
    /// Channel count of the raw (un-enriched) features.
    pub channels: usize,
    /// Excluded from quantitative evaluation; only used for cluster overlays.
    pub visualization_only: bool,
    pub notes: &'static str,
}

impl ModelSpec {
    /// Overlapping-patch stride used when a request does not set one.
    pub fn default_stride(&self) -> u32 {
        (self.patch_size / 2).max(1)
    }

    /// Default number of noisy forward passes to average.
    pub fn default_samples(&self) -> u32 {
        match self.embedding_kind {
            EmbeddingKind::DiffusionIntermediate => 8,
            _ => 1,
        }
    }
}

const fn dino(id: &'static str, patch_size: u32, layer: u32, channels: usize, notes: &'static str) -> ModelSpec {
    ModelSpec {
        id,
        patch_size,
        embedding_layer: Some(layer),
        embedding_kind: EmbeddingKind::Token,
        channels,
        visualization_only: false,
        notes,
    }
}

static REGISTRY: [ModelSpec; 11] = [
    dino("d1s8", 8, 11, 384, "DINOv1 ViT-S/8"),
    dino("d1s16", 16, 11, 384, "DINOv1 ViT-S/16"),
    dino("d1b8", 8, 11, 768, "DINOv1 ViT-B/8"),
    dino("d1b16", 16, 11, 768, "DINOv1 ViT-B/16"),
    dino("d2s14", 14, 11, 384, "DINOv2 ViT-S/14"),
    dino("d2b14", 14, 11, 768, "DINOv2 ViT-B/14"),
    dino("d2l14", 14, 23, 1024, "DINOv2 ViT-L/14"),
    dino("d2g14", 14, 39, 1536, "DINOv2 ViT-g/14"),
    ModelSpec {
        id: "sd",
        patch_size: 16,
        embedding_layer: None,
        embedding_kind: EmbeddingKind::DiffusionIntermediate,
        channels: 1280,
        visualization_only: false,
        notes: "Stable Diffusion 2.1 decoder features, averaged over noisy samples",
    },
    ModelSpec {
        id: "sam",
        patch_size: 16,
        embedding_layer: None,
        embedding_kind: EmbeddingKind::EncoderOutput,
        channels: 256,
        visualization_only: false,
        notes: "SAM ViT-H image encoder output",
    },
    ModelSpec {
        id: "clip",
        patch_size: 16,
        embedding_layer: Some(11),
        embedding_kind: EmbeddingKind::Token,
        channels: 768,
        visualization_only: true,
        notes: "CLIP ViT-B vision encoder; cluster overlays only",
    },
];

pub fn registry() -> &'static [ModelSpec] {
    &REGISTRY
}

pub fn registry_lookup(id: &str) -> Result<&'static ModelSpec> {
    REGISTRY
        .iter()
        .find(|m| m.id == id)
        .ok_or_else(|| Error::UnknownModel(id.to_owned()))
}
