use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{FeatureProvider, ModelSpec};
use crate::descriptors::aggregate_feature_samples;
use crate::error::{Error, Result};
use crate::model::{load_feature_grid, FeatureGrid, Image2D};

/// Reads precomputed grids from `root/<model_id>/<image_id>.dfg1`.
///
/// When the single file is absent, sample files `<image_id>.s<k>.dfg1` are
/// averaged instead.
#[derive(Debug)]
pub struct FileProvider {
    root: PathBuf,
    cache: Mutex<HashMap<(String, String), Arc<FeatureGrid>>>,
}

impl FileProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn sample_files(dir: &Path, image_id: &str) -> Result<Vec<PathBuf>> {
        let prefix = format!("{image_id}.s");
        let mut samples: Vec<(u64, PathBuf)> = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(index) = name
                .strip_prefix(&prefix)
                .and_then(|rest| rest.strip_suffix(".dfg1"))
                .and_then(|k| k.parse::<u64>().ok())
            else {
                continue;
            };
            samples.push((index, entry.path()));
        }
        samples.sort();
        Ok(samples.into_iter().map(|(_, p)| p).collect())
    }

    fn load(&self, image_id: &str, model: &ModelSpec) -> Result<FeatureGrid> {
        let dir = self.root.join(model.id);
        if !dir.is_dir() {
            return Err(Error::NoFeatures {
                model: model.id.to_owned(),
                detail: format!("directory {} not found", dir.display()),
            });
        }
        let single = dir.join(format!("{image_id}.dfg1"));
        if single.is_file() {
            return load_feature_grid(&single);
        }
        let samples = Self::sample_files(&dir, image_id)?;
        if samples.is_empty() {
            return Err(Error::NoFeatures {
                model: model.id.to_owned(),
                detail: format!("{} not found", single.display()),
            });
        }
        let grids = samples
            .iter()
            .map(load_feature_grid)
            .collect::<Result<Vec<_>>>()?;
        aggregate_feature_samples(&grids)
    }
}

impl FeatureProvider for FileProvider {
    fn features_for(&self, image: &Image2D, model: &ModelSpec) -> Result<Arc<FeatureGrid>> {
        let key = (model.id.to_owned(), image.id().to_owned());
        if let Some(grid) = self.cache.lock().unwrap().get(&key) {
            return Ok(grid.clone());
        }
        let grid = self.load(image.id(), model)?;
        if grid.source_dims() != image.dims() {
            return Err(Error::Geometry(format!(
                "features for {:?} ({}) cover {:?} but the image is {:?}",
                image.id(),
                model.id,
                grid.source_dims(),
                image.dims()
            )));
        }
        let grid = Arc::new(grid);
        let mut cache = self.cache.lock().unwrap();
        Ok(cache.entry(key).or_insert(grid).clone())
    }
}
