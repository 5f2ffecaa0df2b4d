use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use tracing::{info, warn};

use super::manifest::{image_id_of, load_landmarks, PredictorSpec, TaskKind, TaskManifest};
use crate::backends::{registry_lookup, FeatureProvider, HttpMaskPredictor, ModelSpec};
use crate::clustering::{co_cluster, render_label_overlay, KMeansOptions};
use crate::correspondence::{correspond, flip_prompts, similarity_heatmap, FlipAxis, Match};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate_report, cells_csv, dice, localization_error, prompt_accuracy, LocalizationError, NedFlag, Report,
    TargetMetrics,
};
use crate::model::io::{load_image, load_label_map, load_mask, load_prompts, write_bytes};
use crate::model::{l2_normalize, Image2D, LabelMap, PixelFeatureMap, Polarity, PromptSet};
use crate::pipeline::{flipped_pixel_features, pixel_features};
use crate::segmentation::{segment_with_prompts, MaskPredictor, OraclePredictor};

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Restrict to these model ids (manifest order is kept).
    pub models: Option<Vec<String>>,
    /// Worker threads; defaults to the number of hardware threads.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub cells: Vec<TargetMetrics>,
    pub report: Report,
    pub output_dir: PathBuf,
}

impl EvalSummary {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.failure.is_some()).count()
    }
}

fn failure_reason(e: &Error) -> String {
    if e.is_missing_input() {
        "missing input".into()
    } else {
        e.to_string()
    }
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

fn model_ids<'a>(manifest: &'a TaskManifest, options: &EvalOptions) -> Vec<&'a str> {
    manifest
        .models
        .iter()
        .map(String::as_str)
        .filter(|id| options.models.as_ref().is_none_or(|keep| keep.iter().any(|k| k == id)))
        .collect()
}

struct Template {
    image: Image2D,
    prompts: PromptSet,
}

fn load_template(manifest: &TaskManifest) -> Result<Template> {
    let image = load_image(manifest.resolve(&manifest.template.image))?;
    let prompts = load_prompts(manifest.resolve(&manifest.template.prompts))?;
    prompts.validate(image.height(), image.width())?;
    Ok(Template { image, prompts })
}

/// Normalized template features for one model.
type TemplateFeats = std::result::Result<(&'static ModelSpec, Arc<PixelFeatureMap>), String>;

fn template_features(
    manifest: &TaskManifest,
    provider: &dyn FeatureProvider,
    template: &std::result::Result<Template, String>,
    model_id: &str,
) -> TemplateFeats {
    let template = template.as_ref().map_err(Clone::clone)?;
    let model = registry_lookup(model_id).map_err(|e| e.to_string())?;
    let feats = pixel_features(provider, &template.image, model, manifest.enrichment)
        .map_err(|e| format!("template: {}", failure_reason(&e)))?;
    Ok((model, Arc::new(l2_normalize(&feats))))
}

#[derive(Serialize)]
struct CellRecord<'a> {
    metrics: &'a TargetMetrics,
    matches: &'a [Match],
    #[serde(skip_serializing_if = "Option::is_none")]
    segmentation: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    localization: Option<&'a LocalizationError>,
}

struct CellContext<'a> {
    manifest: &'a TaskManifest,
    provider: &'a dyn FeatureProvider,
    predictor: Option<&'a dyn MaskPredictor>,
    template: &'a Template,
    model: &'static ModelSpec,
    template_feats: &'a PixelFeatureMap,
    out_dir: PathBuf,
}

impl CellContext<'_> {
    fn run(&self, index: usize) -> Result<TargetMetrics> {
        let manifest = self.manifest;
        let target_path = manifest.resolve(&manifest.targets[index]);
        let target = load_image(&target_path)?;
        let target_feats = l2_normalize(&pixel_features(
            self.provider,
            &target,
            self.model,
            manifest.enrichment,
        )?);
        let matches = correspond(self.template_feats, &self.template.prompts, &target_feats)?;
        let mut metrics = TargetMetrics {
            task: manifest.task_id.clone(),
            model: self.model.id.to_owned(),
            target: target.id().to_owned(),
            ..Default::default()
        };
        let gt_path = manifest.resolve(&manifest.ground_truth[index]);
        let stem = self.out_dir.join(target.id());
        let mut segmentation = None;
        let mut localization = None;
        match manifest.kind {
            TaskKind::Segmentation => {
                let gt = load_mask(&gt_path)?;
                if gt.dims() != target.dims() {
                    return Err(Error::DimensionMismatch(format!(
                        "ground truth {:?} vs target {:?}",
                        gt.dims(),
                        target.dims()
                    )));
                }
                let oracle;
                let predictor: &dyn MaskPredictor = match self.predictor {
                    Some(p) => p,
                    None => {
                        let labels = match &manifest.predictor {
                            PredictorSpec::Oracle {
                                label_maps: Some(maps),
                            } => load_label_map(manifest.resolve(&maps[index]))?,
                            _ => LabelMap::from_mask(&gt),
                        };
                        oracle = OraclePredictor::single(target.id(), labels);
                        &oracle
                    }
                };
                let outcome = segment_with_prompts(&target, &matches, predictor)?;
                let acc = prompt_accuracy(&matches, &gt)?;
                metrics.dice = Some(dice(&outcome.mask, &gt)?);
                metrics.acc_pos = acc.positive_value();
                metrics.acc_neg = acc.negative_value();
                write_bytes(
                    path_with_suffix(&stem, "_mask.png"),
                    &crate::model::io::encode_mask_png(&outcome.mask)?,
                )?;
                segmentation = Some(outcome.metadata_json());
            }
            TaskKind::Localization => {
                let landmarks = load_landmarks(&gt_path)?;
                let positives: Vec<Match> = matches
                    .iter()
                    .filter(|m| m.polarity == Polarity::Positive)
                    .cloned()
                    .collect();
                let err = localization_error(&positives, &landmarks, target.dims())?;
                metrics.ned = Some(err.mean);
                localization = Some(err);
            }
        }
        if manifest.export_heatmaps {
            for (i, (_, point)) in self.template.prompts.iter().enumerate() {
                let hm = similarity_heatmap(self.template_feats, point, &target_feats)?;
                write_bytes(path_with_suffix(&stem, &format!("_heatmap_{i}.png")), &hm.to_png()?)?;
            }
        }
        let record = CellRecord {
            metrics: &metrics,
            matches: &matches,
            segmentation,
            localization: localization.as_ref(),
        };
        write_bytes(path_with_suffix(&stem, ".json"), &serde_json::to_vec_pretty(&record)?)?;
        Ok(metrics)
    }
}

fn path_with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Evaluates every (model, target) cell of a task and writes
/// `report.csv`, `report.json`, `cells.csv` plus per-cell artifacts under
/// `output_dir/<model>/`.
pub fn run_eval(manifest: &TaskManifest, options: &EvalOptions) -> Result<EvalSummary> {
    let provider = manifest.build_provider();
    let predictor: Option<Box<dyn MaskPredictor>> = match &manifest.predictor {
        PredictorSpec::External { endpoint } => Some(Box::new(HttpMaskPredictor::new(endpoint.clone()))),
        PredictorSpec::Oracle { .. } => None,
    };
    let output_dir = manifest.output_dir();
    let models = model_ids(manifest, options);
    let template = load_template(manifest).map_err(|e| format!("template: {}", failure_reason(&e)));
    let pool = pool(options.jobs)?;

    let cells = pool.install(|| {
        let template_feats: Vec<TemplateFeats> = models
            .par_iter()
            .map(|id| template_features(manifest, provider.as_ref(), &template, id))
            .collect();
        let jobs: Vec<(usize, usize)> = (0..models.len())
            .flat_map(|m| (0..manifest.targets.len()).map(move |t| (m, t)))
            .collect();
        jobs.par_iter()
            .map(|&(m, t)| {
                let model_id = models[m];
                let target_id = image_id_of(&manifest.targets[t]);
                let started = Instant::now();
                let result = match (&template_feats[m], &template) {
                    (Ok((model, feats)), Ok(tpl)) => CellContext {
                        manifest,
                        provider: provider.as_ref(),
                        predictor: predictor.as_deref(),
                        template: tpl,
                        model,
                        template_feats: feats,
                        out_dir: output_dir.join(model_id),
                    }
                    .run(t)
                    .map_err(|e| failure_reason(&e)),
                    (Err(reason), _) => Err(reason.clone()),
                    (_, Err(reason)) => Err(reason.clone()),
                };
                let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
                match result {
                    Ok(metrics) => {
                        info!(task = %manifest.task_id, model = model_id, target = %target_id, elapsed_ms, "cell done");
                        metrics
                    }
                    Err(reason) => {
                        warn!(task = %manifest.task_id, model = model_id, target = %target_id, %reason, "cell failed");
                        TargetMetrics::failed(&manifest.task_id, model_id, &target_id, reason)
                    }
                }
            })
            .collect::<Vec<_>>()
    });

    let report = aggregate_report(&cells);
    write_bytes(output_dir.join("report.csv"), report.to_csv()?.as_bytes())?;
    write_bytes(output_dir.join("report.json"), report.to_json()?.as_bytes())?;
    write_bytes(output_dir.join("cells.csv"), cells_csv(&cells)?.as_bytes())?;
    Ok(EvalSummary {
        cells,
        report,
        output_dir,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessCell {
    pub model: String,
    pub target: String,
    /// `baseline`, `h` or `v`.
    pub variant: String,
    pub ned: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub task: String,
    pub model: String,
    pub variant: String,
    pub n_targets: usize,
    pub ned_mean: Option<f64>,
    pub ned_flag: Option<NedFlag>,
    /// Mean absolute per-target difference from the baseline NED.
    pub ned_deviation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RobustnessSummary {
    pub cells: Vec<RobustnessCell>,
    pub rows: Vec<RobustnessRow>,
    pub output_dir: PathBuf,
}

impl RobustnessSummary {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.failure.is_some()).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(["task", "model", "variant", "n_targets", "ned_mean", "ned_flag", "ned_deviation"])
            .map_err(err)?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.task.clone(),
                r.model.clone(),
                r.variant.clone(),
                r.n_targets.to_string(),
                f(r.ned_mean),
                r.ned_flag.map(|x| x.as_str().to_owned()).unwrap_or_default(),
                f(r.ned_deviation),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }
}

/// Re-runs localization with the template mirrored along each axis while the
/// targets stay as they are; writes `robustness.csv` / `robustness.json`.
pub fn run_robustness(manifest: &TaskManifest, axes: &[FlipAxis], options: &EvalOptions) -> Result<RobustnessSummary> {
    if manifest.kind != TaskKind::Localization {
        return Err(Error::InvalidArgument(
            "robustness runs need a localization manifest".into(),
        ));
    }
    let mut unique_axes: Vec<FlipAxis> = Vec::new();
    for a in axes {
        if !unique_axes.contains(a) {
            unique_axes.push(*a);
        }
    }
    let provider = manifest.build_provider();
    let output_dir = manifest.output_dir();
    let models = model_ids(manifest, options);
    let template = load_template(manifest);
    let variants: Vec<Option<FlipAxis>> = std::iter::once(None)
        .chain(unique_axes.iter().copied().map(Some))
        .collect();
    let variant_name = |v: Option<FlipAxis>| v.map_or("baseline", FlipAxis::short_name).to_owned();
    let pool = pool(options.jobs)?;

    type Variants = Vec<(PromptSet, PixelFeatureMap)>;
    let per_model: Vec<std::result::Result<(&'static ModelSpec, Variants), String>> = pool.install(|| {
        models
            .par_iter()
            .map(|id| {
                let tpl = template.as_ref().map_err(|e| format!("template: {}", failure_reason(e)))?;
                let model = registry_lookup(id).map_err(|e| e.to_string())?;
                let dims = tpl.image.dims();
                variants
                    .iter()
                    .map(|v| {
                        let feats = match v {
                            None => pixel_features(provider.as_ref(), &tpl.image, model, manifest.enrichment),
                            Some(axis) => flipped_pixel_features(
                                provider.as_ref(),
                                &tpl.image,
                                model,
                                manifest.enrichment,
                                *axis,
                            ),
                        }
                        .map_err(|e| format!("template: {}", failure_reason(&e)))?;
                        let prompts = match v {
                            None => tpl.prompts.clone(),
                            Some(axis) => flip_prompts(&tpl.prompts, dims, *axis),
                        };
                        Ok((prompts, l2_normalize(&feats)))
                    })
                    .collect::<std::result::Result<Variants, String>>()
                    .map(|vs| (model, vs))
            })
            .collect()
    });

    let jobs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..manifest.targets.len()).map(move |t| (m, t)))
        .collect();
    let nested: Vec<Vec<RobustnessCell>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, t)| {
                let model_id = models[m];
                let target_id = image_id_of(&manifest.targets[t]);
                let result = (|| -> std::result::Result<Vec<f64>, String> {
                    let (model, variants) = per_model[m].as_ref().map_err(Clone::clone)?;
                    let run = || -> Result<Vec<f64>> {
                        let target = load_image(manifest.resolve(&manifest.targets[t]))?;
                        let landmarks = load_landmarks(manifest.resolve(&manifest.ground_truth[t]))?;
                        let feats = l2_normalize(&pixel_features(
                            provider.as_ref(),
                            &target,
                            model,
                            manifest.enrichment,
                        )?);
                        variants
                            .iter()
                            .map(|(prompts, tfeats)| {
                                let positives = PromptSet::new(prompts.positive.clone(), vec![]);
                                let matches = correspond(tfeats, &positives, &feats)?;
                                Ok(localization_error(&matches, &landmarks, target.dims())?.mean)
                            })
                            .collect()
                    };
                    run().map_err(|e| failure_reason(&e))
                })();
                variants
                    .iter()
                    .enumerate()
                    .map(|(i, v)| RobustnessCell {
                        model: model_id.to_owned(),
                        target: target_id.clone(),
                        variant: variant_name(*v),
                        ned: result.as_ref().ok().map(|neds| neds[i]),
                        failure: result.as_ref().err().cloned(),
                    })
                    .collect()
            })
            .collect()
    });
    let cells: Vec<RobustnessCell> = nested.into_iter().flatten().collect();

    let mut rows = Vec::new();
    for model_id in &models {
        let baseline: Vec<&RobustnessCell> = cells
            .iter()
            .filter(|c| c.model == *model_id && c.variant == "baseline")
            .collect();
        for v in &variants {
            let name = variant_name(*v);
            let group: Vec<&RobustnessCell> = cells
                .iter()
                .filter(|c| c.model == *model_id && c.variant == name)
                .collect();
            let neds: Vec<f64> = group.iter().filter_map(|c| c.ned).collect();
            let ned_mean = (!neds.is_empty()).then(|| neds.iter().sum::<f64>() / neds.len() as f64);
            let devs: Vec<f64> = group
                .iter()
                .zip(&baseline)
                .filter_map(|(c, b)| Some((c.ned? - b.ned?).abs()))
                .collect();
            rows.push(RobustnessRow {
                task: manifest.task_id.clone(),
                model: (*model_id).to_owned(),
                variant: name,
                n_targets: neds.len(),
                ned_mean,
                ned_flag: ned_mean.map(NedFlag::classify),
                ned_deviation: (!devs.is_empty()).then(|| devs.iter().sum::<f64>() / devs.len() as f64),
            });
        }
    }
    let summary = RobustnessSummary {
        cells,
        rows,
        output_dir: output_dir.clone(),
    };
    write_bytes(output_dir.join("robustness.csv"), summary.to_csv()?.as_bytes())?;
    write_bytes(
        output_dir.join("robustness.json"),
        &serde_json::to_vec_pretty(&serde_json::json!({
            "rows": summary.rows,
            "cells": summary.cells,
        }))?,
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterModelResult {
    pub model: String,
    pub images: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub inertia: Option<f64>,
    pub iterations: Option<usize>,
    pub failure: Option<String>,
}

/// Co-clusters template and target features per model and writes RGB
/// overlays to `output_dir/cluster/<model>/<image>.png`.
pub fn run_cluster(
    manifest: &TaskManifest,
    k: usize,
    seed: u64,
    kmeans: KMeansOptions,
    options: &EvalOptions,
) -> Result<Vec<ClusterModelResult>> {
    let provider = manifest.build_provider();
    let out_root = manifest.output_dir().join("cluster");
    let paths: Vec<PathBuf> = std::iter::once(manifest.template.image.clone())
        .chain(manifest.targets.iter().cloned())
        .collect();
    let pool = pool(options.jobs)?;
    let models = model_ids(manifest, options);
    let results = pool.install(|| {
        models
            .iter()
            .map(|id| {
                let images: Vec<String> = paths.iter().map(|p| image_id_of(p)).collect();
                let run = || -> Result<(f64, usize)> {
                    let model = registry_lookup(id)?;
                    let loaded: Vec<Image2D> = paths
                        .iter()
                        .map(|p| load_image(manifest.resolve(p)))
                        .collect::<Result<_>>()?;
                    let maps: Vec<PixelFeatureMap> = loaded
                        .par_iter()
                        .map(|img| pixel_features(provider.as_ref(), img, model, manifest.enrichment))
                        .collect::<Result<_>>()?;
                    let result = co_cluster(&maps, k, seed, kmeans)?;
                    let dir = out_root.join(id);
                    for (img, labels) in loaded.iter().zip(&result.label_maps) {
                        let overlay = render_label_overlay(img, labels, seed)?;
                        write_bytes(dir.join(format!("{}.png", img.id())), &overlay.to_png()?)?;
                    }
                    write_bytes(dir.join("result.json"), &serde_json::to_vec_pretty(&result)?)?;
                    Ok((result.inertia, result.iterations))
                };
                let started = Instant::now();
                let outcome = run();
                info!(model = id, elapsed_ms = started.elapsed().as_secs_f64() * 1e3, "cluster done");
                ClusterModelResult {
                    model: (*id).to_owned(),
                    images,
                    k,
                    seed,
                    inertia: outcome.as_ref().ok().map(|r| r.0),
                    iterations: outcome.as_ref().ok().map(|r| r.1),
                    failure: outcome.err().map(|e| failure_reason(&e)),
                }
            })
            .collect::<Vec<_>>()
    });
    write_bytes(out_root.join("summary.json"), &serde_json::to_vec_pretty(&results)?)?;
    Ok(results)
}
