//! Annotation sessions: a template with editable prompts plus target images.
//!
//! Prompt edits publish a new [`Snapshot`]; every derived artifact is cached
//! inside the snapshot it was computed from, so a response never mixes two
//! revisions and stale entries disappear with their snapshot.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use corrseg::backends::{registry_lookup, FeatureProvider, ModelSpec};
use corrseg::correspondence::{correspond, similarity_heatmap, Match};
use corrseg::descriptors::LogBinParams;
use corrseg::model::io::{encode_mask_png, load_image, load_label_map};
use corrseg::model::{l2_normalize, Image2D, PixelFeatureMap, Point, Polarity, PromptSet};
use corrseg::pipeline::pixel_features;
use corrseg::segmentation::{segment_with_prompts, MaskPredictor, OraclePredictor};
use corrseg::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ApiError, ApiResult};

/// Body of `POST /sessions`. Paths are resolved by the server process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub template: PathBuf,
    #[serde(default)]
    pub prompts: PromptSet,
    pub targets: Vec<PathBuf>,
    pub model: String,
    #[serde(default)]
    pub enrichment: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enrichment_levels: Option<usize>,
    /// Overrides the server's feature root for this session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_root: Option<PathBuf>,
    /// Label images for the oracle predictor, keyed by target id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub oracle_labels: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageInfo {
    pub id: String,
    pub height: usize,
    pub width: usize,
}

impl From<&Image2D> for ImageInfo {
    fn from(img: &Image2D) -> Self {
        Self {
            id: img.id().to_owned(),
            height: img.height(),
            width: img.width(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum ArtifactKind {
    Correspondence,
    Mask,
    Heatmap(usize),
}

/// Prompts at one revision and everything derived from them.
#[derive(Debug)]
pub struct Snapshot {
    pub revision: u64,
    pub prompts: PromptSet,
    artifacts: Mutex<HashMap<(usize, ArtifactKind), Arc<Vec<u8>>>>,
}

impl Snapshot {
    fn new(revision: u64, prompts: PromptSet) -> Arc<Self> {
        Arc::new(Self {
            revision,
            prompts,
            artifacts: Mutex::default(),
        })
    }
}

pub struct Session {
    pub id: String,
    pub config: SessionConfig,
    template: Image2D,
    targets: Vec<Image2D>,
    model: &'static ModelSpec,
    enrichment: Option<LogBinParams>,
    provider: Arc<dyn FeatureProvider>,
    predictor: Option<Arc<dyn MaskPredictor>>,
    oracle: OraclePredictor,
    features: Mutex<HashMap<String, Arc<PixelFeatureMap>>>,
    committed: RwLock<Arc<Snapshot>>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("revision", &self.snapshot().revision)
            .finish_non_exhaustive()
    }
}

/// An edit applied to the prompt set.
#[derive(Debug, Clone, Deserialize)]
pub struct PromptEdit {
    pub polarity: Polarity,
    pub point: Point,
    #[serde(default)]
    pub label: Option<String>,
}

impl Session {
    pub fn create(
        id: String,
        config: SessionConfig,
        provider: Arc<dyn FeatureProvider>,
        predictor: Option<Arc<dyn MaskPredictor>>,
    ) -> Result<Self, ApiError> {
        let model = registry_lookup(&config.model)?;
        let enrichment = match (config.enrichment, config.enrichment_levels) {
            (false, _) => None,
            (true, None) => Some(LogBinParams::default()),
            (true, Some(levels)) => Some(LogBinParams::new(levels)?),
        };
        let template = load_image(&config.template)?;
        config.prompts.validate(template.height(), template.width())?;
        let mut targets: Vec<Image2D> = Vec::with_capacity(config.targets.len());
        for path in &config.targets {
            let img = load_image(path)?;
            if targets.iter().any(|t| t.id() == img.id()) {
                return Err(ApiError::unprocessable(
                    "duplicate_target",
                    format!("target id {:?} appears twice", img.id()),
                ));
            }
            targets.push(img);
        }
        let mut oracle = OraclePredictor::default();
        for (target_id, path) in &config.oracle_labels {
            let labels = load_label_map(path)?;
            oracle.insert(target_id.clone(), labels);
        }
        let snapshot = Snapshot::new(0, config.prompts.clone());
        Ok(Self {
            id,
            config,
            template,
            targets,
            model,
            enrichment,
            provider,
            predictor,
            oracle,
            features: Mutex::default(),
            committed: RwLock::new(snapshot),
        })
    }

    /// The last committed revision.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.committed.read().unwrap().clone()
    }

    pub fn template_info(&self) -> ImageInfo {
        ImageInfo::from(&self.template)
    }

    pub fn target_infos(&self) -> Vec<ImageInfo> {
        self.targets.iter().map(ImageInfo::from).collect()
    }

    fn edit<T>(&self, f: impl FnOnce(&mut PromptSet) -> ApiResult<T>) -> ApiResult<(Arc<Snapshot>, T)> {
        let mut committed = self.committed.write().unwrap();
        let mut prompts = committed.prompts.clone();
        let out = f(&mut prompts)?;
        let next = Snapshot::new(committed.revision + 1, prompts);
        *committed = next.clone();
        Ok((next, out))
    }

    /// Adds a prompt; returns the new snapshot and the prompt's index.
    pub fn add_prompt(&self, edit: PromptEdit) -> ApiResult<(Arc<Snapshot>, usize)> {
        let (h, w) = self.template.dims();
        edit.point.check_bounds(h, w)?;
        self.edit(|prompts| {
            prompts.push(edit.polarity, edit.point, edit.label)?;
            let index = match edit.polarity {
                Polarity::Positive => prompts.positive.len() - 1,
                Polarity::Negative => prompts.len() - 1,
            };
            Ok(index)
        })
    }

    pub fn remove_prompt(&self, index: usize) -> ApiResult<Arc<Snapshot>> {
        self.edit(|prompts| {
            prompts.remove(index).map(|_| ()).ok_or_else(|| {
                ApiError::not_found("prompt_not_found", format!("no prompt at index {index}"))
            })
        })
        .map(|(snap, ())| snap)
    }

    fn target_index(&self, target_id: &str) -> ApiResult<usize> {
        self.targets
            .iter()
            .position(|t| t.id() == target_id)
            .ok_or_else(|| ApiError::not_found("target_not_found", format!("no target {target_id:?}")))
    }

    fn features(&self, image: &Image2D) -> Result<Arc<PixelFeatureMap>, Error> {
        if let Some(f) = self.features.lock().unwrap().get(image.id()) {
            return Ok(f.clone());
        }
        let feats = Arc::new(l2_normalize(&pixel_features(
            self.provider.as_ref(),
            image,
            self.model,
            self.enrichment,
        )?));
        let mut cache = self.features.lock().unwrap();
        Ok(cache.entry(image.id().to_owned()).or_insert(feats).clone())
    }

    fn cached(
        &self,
        snap: &Snapshot,
        target: usize,
        kind: ArtifactKind,
        build: impl FnOnce() -> ApiResult<Vec<u8>>,
    ) -> ApiResult<Arc<Vec<u8>>> {
        if let Some(hit) = snap.artifacts.lock().unwrap().get(&(target, kind)) {
            return Ok(hit.clone());
        }
        let bytes = Arc::new(build()?);
        let mut artifacts = snap.artifacts.lock().unwrap();
        Ok(artifacts.entry((target, kind)).or_insert(bytes).clone())
    }

    fn matches(&self, snap: &Snapshot, target: &Image2D) -> ApiResult<Vec<Match>> {
        let template_feats = self.features(&self.template)?;
        let target_feats = self.features(target)?;
        Ok(correspond(&template_feats, &snap.prompts, &target_feats)?)
    }

    /// JSON `{"revision", "target", "matches"}`.
    pub fn correspondence(&self, target_id: &str) -> ApiResult<(u64, Arc<Vec<u8>>)> {
        let t = self.target_index(target_id)?;
        let snap = self.snapshot();
        let body = self.cached(&snap, t, ArtifactKind::Correspondence, || {
            let matches = self.matches(&snap, &self.targets[t])?;
            serde_json::to_vec(&json!({
                "revision": snap.revision,
                "target": target_id,
                "matches": matches,
            }))
            .map_err(|e| ApiError::internal(e.to_string()))
        })?;
        Ok((snap.revision, body))
    }

    /// JSON with the mask PNG (base64), the predictor outcome and the
    /// propagated prompts.
    pub fn mask(&self, target_id: &str) -> ApiResult<(u64, Arc<Vec<u8>>)> {
        let t = self.target_index(target_id)?;
        let snap = self.snapshot();
        if snap.prompts.positive.is_empty() {
            return Err(ApiError::conflict(
                "no_positive_prompts",
                "a mask needs at least one positive prompt",
            ));
        }
        let body = self.cached(&snap, t, ArtifactKind::Mask, || {
            let target = &self.targets[t];
            let predictor: &dyn MaskPredictor = match &self.predictor {
                Some(p) => p.as_ref(),
                None if self.oracle.has(target.id()) => &self.oracle,
                None => {
                    return Err(ApiError::unprocessable(
                        "no_predictor",
                        format!("no predictor endpoint and no oracle labels for {:?}", target.id()),
                    ))
                }
            };
            let matches = self.matches(&snap, target)?;
            let outcome = segment_with_prompts(target, &matches, predictor)?;
            let png = encode_mask_png(&outcome.mask)?;
            serde_json::to_vec(&json!({
                "revision": snap.revision,
                "target": target_id,
                "mask_png_base64": BASE64.encode(png),
                "mask_pixels": outcome.mask.count(),
                "outcome": outcome.metadata_json(),
            }))
            .map_err(|e| ApiError::internal(e.to_string()))
        })?;
        Ok((snap.revision, body))
    }

    /// Grayscale PNG of one prompt's similarity over the target.
    pub fn heatmap(&self, target_id: &str, prompt: usize) -> ApiResult<(u64, Arc<Vec<u8>>)> {
        let t = self.target_index(target_id)?;
        let snap = self.snapshot();
        let (_, point) = snap
            .prompts
            .get(prompt)
            .ok_or_else(|| ApiError::not_found("prompt_not_found", format!("no prompt at index {prompt}")))?;
        let body = self.cached(&snap, t, ArtifactKind::Heatmap(prompt), || {
            let template_feats = self.features(&self.template)?;
            let target_feats = self.features(&self.targets[t])?;
            Ok(similarity_heatmap(&template_feats, point, &target_feats)?.to_png()?)
        })?;
        Ok((snap.revision, body))
    }
}

