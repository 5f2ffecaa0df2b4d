use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{ExternalConfig, ExternalProvider, FeatureProvider, FileProvider};
use crate::descriptors::LogBinParams;
use crate::error::{Error, Result};
use crate::model::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Segmentation,
    Localization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub image: PathBuf,
    pub prompts: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PredictorSpec {
    /// Label-image oracle. Without `label_maps` each target's ground-truth
    /// mask serves as a two-region label map.
    Oracle {
        #[serde(default)]
        label_maps: Option<Vec<PathBuf>>,
    },
    External { endpoint: String },
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec::Oracle { label_maps: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSpec {
    File { root: PathBuf },
    External(ExternalConfig),
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::File {
            root: PathBuf::from("features"),
        }
    }
}

/// One evaluation task. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task_id: String,
    pub kind: TaskKind,
    pub template: TemplateSpec,
    pub targets: Vec<PathBuf>,
    /// Mask PNGs (segmentation) or landmark JSON files (localization), one per target.
    pub ground_truth: Vec<PathBuf>,
    pub models: Vec<String>,
    #[serde(default)]
    pub enrichment: Option<LogBinParams>,
    #[serde(default)]
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub provider: ProviderSpec,
    pub output_dir: PathBuf,
    #[serde(default = "yes")]
    pub export_heatmaps: bool,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn yes() -> bool {
    true
}

/// Landmark ground truth: a bare point list or an object with `positive`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum LandmarkFile {
    Points(Vec<Point>),
    Prompts { positive: Vec<Point> },
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<Vec<Point>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed: LandmarkFile =
        serde_json::from_slice(&bytes).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Ok(match parsed {
        LandmarkFile::Points(p) => p,
        LandmarkFile::Prompts { positive } => positive,
    })
}

impl TaskManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: TaskManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn from_json(json: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: TaskManifest = serde_json::from_str(json)?;
        manifest.base_dir = base_dir.into();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.len() != self.ground_truth.len() {
            return Err(Error::LengthMismatch(format!(
                "{} targets but {} ground-truth entries",
                self.targets.len(),
                self.ground_truth.len()
            )));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidArgument("manifest lists no models".into()));
        }
        if let Some(params) = &self.enrichment {
            params.validate()?;
        }
        if let PredictorSpec::Oracle {
            label_maps: Some(maps),
        } = &self.predictor
        {
            if maps.len() != self.targets.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} label maps for {} targets",
                    maps.len(),
                    self.targets.len()
                )));
            }
        }
        Ok(())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn build_provider(&self) -> Arc<dyn FeatureProvider> {
        match &self.provider {
            ProviderSpec::File { root } => Arc::new(FileProvider::new(self.resolve(root))),
            ProviderSpec::External(config) => Arc::new(ExternalProvider::new(config.clone())),
        }
    }
}

/// Image id used for feature lookup: the file stem.
pub fn image_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
