//! Python bindings: feature grids, prompt transfer, masks and metrics.
//!
//! Points are `(row, col)` tuples; feature data is a flat row-major list of
//! floats (pixel-major, channels innermost).

use std::path::PathBuf;

use corrseg::correspondence::{self as corr};
use corrseg::descriptors::{self, LogBinParams};
use corrseg::eval::{self, EvalOptions, TaskManifest};
use corrseg::model::{self, io, Point, Polarity};
use corrseg::{clustering, metrics, segmentation};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

create_exception!(corrseg, CorrsegError, PyException);

fn py_err(e: corrseg::Error) -> PyErr {
    CorrsegError::new_err(e.to_string())
}

type Rc<T> = Result<T, corrseg::Error>;

fn ok<T>(r: Rc<T>) -> PyResult<T> {
    r.map_err(py_err)
}

fn point((row, col): (usize, usize)) -> Point {
    Point::new(row, col)
}

fn polarity_name(p: Polarity) -> &'static str {
    match p {
        Polarity::Positive => "positive",
        Polarity::Negative => "negative",
    }
}

/// Patch-level features as produced by a backbone.
#[pyclass(name = "FeatureGrid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFeatureGrid(model::FeatureGrid);

#[pymethods]
impl PyFeatureGrid {
    #[new]
    #[pyo3(signature = (rows, cols, channels, stride, source_dims, data))]
    fn new(rows: usize, cols: usize, channels: usize, stride: u32, source_dims: (usize, usize), data: Vec<f64>) -> PyResult<Self> {
        ok(model::FeatureGrid::with_uniform_stride(rows, cols, channels, stride, source_dims, data)).map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ok(model::load_feature_grid(path)).map(Self)
    }

    #[staticmethod]
    fn from_dfg1(data: &[u8]) -> PyResult<Self> {
        ok(model::FeatureGrid::from_dfg1_bytes(data)).map(Self)
    }

    fn to_dfg1<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_dfg1_bytes())
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.rows(), self.0.cols(), self.0.channels())
    }

    #[getter]
    fn source_dims(&self) -> (usize, usize) {
        self.0.source_dims()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    /// Log-polar neighbourhood enrichment with `levels` ring levels.
    fn enrich(&self, levels: usize) -> PyResult<Self> {
        let params = ok(LogBinParams::new(levels))?;
        ok(descriptors::log_bin_enrich(&self.0, params)).map(Self)
    }

    /// Bilinear up-sampling to one vector per source pixel.
    fn upsample(&self) -> PyPixelFeatureMap {
        PyPixelFeatureMap(model::upsample_bilinear(&self.0))
    }

    #[staticmethod]
    fn mean(grids: Vec<PyRef<'_, PyFeatureGrid>>) -> PyResult<Self> {
        let grids: Vec<model::FeatureGrid> = grids.iter().map(|g| g.0.clone()).collect();
        ok(descriptors::aggregate_feature_samples(&grids)).map(Self)
    }

    fn __repr__(&self) -> String {
        let (r, c, k) = self.shape();
        format!("FeatureGrid(rows={r}, cols={c}, channels={k})")
    }
}

/// One feature vector per image pixel.
#[pyclass(name = "PixelFeatureMap", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPixelFeatureMap(model::PixelFeatureMap);

#[pymethods]
impl PyPixelFeatureMap {
    #[new]
    fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        ok(model::PixelFeatureMap::new(height, width, channels, data)).map(Self)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.height(), self.0.width(), self.0.channels())
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn pixel(&self, row: usize, col: usize) -> PyResult<Vec<f64>> {
        ok(point((row, col)).check_bounds(self.0.height(), self.0.width()))?;
        Ok(self.0.pixel(row, col).to_vec())
    }

    fn normalized(&self) -> Self {
        Self(model::l2_normalize(&self.0))
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.shape();
        format!("PixelFeatureMap(height={h}, width={w}, channels={c})")
    }
}

/// Positive and negative point prompts on the template.
#[pyclass(name = "PromptSet", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPromptSet(model::PromptSet);

#[pymethods]
impl PyPromptSet {
    #[new]
    #[pyo3(signature = (positive, negative = Vec::new()))]
    fn new(positive: Vec<(usize, usize)>, negative: Vec<(usize, usize)>) -> Self {
        Self(model::PromptSet::new(
            positive.into_iter().map(point).collect(),
            negative.into_iter().map(point).collect(),
        ))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ok(io::load_prompts(path)).map(Self)
    }

    #[getter]
    fn positive(&self) -> Vec<(usize, usize)> {
        self.0.positive.iter().map(|p| (p.row, p.col)).collect()
    }

    #[getter]
    fn negative(&self) -> Vec<(usize, usize)> {
        self.0.negative.iter().map(|p| (p.row, p.col)).collect()
    }

    fn validate(&self, height: usize, width: usize) -> PyResult<()> {
        ok(self.0.validate(height, width))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// A prompt moved onto the target.
#[pyclass(name = "Match", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMatch(corr::Match);

#[pymethods]
impl PyMatch {
    #[getter]
    fn source(&self) -> (usize, usize) {
        (self.0.source.row, self.0.source.col)
    }

    #[getter]
    fn target(&self) -> (usize, usize) {
        (self.0.target.row, self.0.target.col)
    }

    #[getter]
    fn similarity(&self) -> f64 {
        self.0.similarity
    }

    #[getter]
    fn polarity(&self) -> &'static str {
        polarity_name(self.0.polarity)
    }

    fn __repr__(&self) -> String {
        format!(
            "Match({:?} -> {:?}, similarity={}, {})",
            self.source(),
            self.target(),
            self.0.similarity,
            self.polarity()
        )
    }
}

#[pyclass(name = "Heatmap", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHeatmap(corr::Heatmap);

#[pymethods]
impl PyHeatmap {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn argmax(&self) -> ((usize, usize), f64) {
        let (p, v) = self.0.argmax();
        ((p.row, p.col), v)
    }

    fn to_png<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &ok(self.0.to_png())?))
    }
}

#[pyclass(name = "Mask", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMask(model::Mask);

#[pymethods]
impl PyMask {
    #[new]
    fn new(height: usize, width: usize, bits: Vec<bool>) -> PyResult<Self> {
        ok(model::Mask::new(height, width, bits)).map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ok(io::load_mask(path)).map(Self)
    }

    #[staticmethod]
    fn from_png(data: &[u8]) -> PyResult<Self> {
        ok(io::decode_mask_png(data)).map(Self)
    }

    fn to_png<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &ok(io::encode_mask_png(&self.0))?))
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[getter]
    fn bits(&self) -> Vec<bool> {
        self.0.bits().to_vec()
    }

    fn count(&self) -> usize {
        self.0.count()
    }
}

/// Moves every prompt to its most similar target pixel (positives first).
#[pyfunction]
fn correspond(
    py: Python<'_>,
    template: PyRef<'_, PyPixelFeatureMap>,
    prompts: PyRef<'_, PyPromptSet>,
    target: PyRef<'_, PyPixelFeatureMap>,
) -> PyResult<Vec<PyMatch>> {
    let (t, p, g) = (&template.0, &prompts.0, &target.0);
    let matches = py.detach(|| corr::correspond(t, p, g));
    Ok(ok(matches)?.into_iter().map(PyMatch).collect())
}

#[pyfunction]
fn similarity_heatmap(
    template: PyRef<'_, PyPixelFeatureMap>,
    point: (usize, usize),
    target: PyRef<'_, PyPixelFeatureMap>,
) -> PyResult<PyHeatmap> {
    ok(corr::similarity_heatmap(&template.0, self::point(point), &target.0)).map(PyHeatmap)
}

/// Pixels at or above the nearest-rank `percentile` of the pixelwise max heatmap.
#[pyfunction]
fn threshold_mask(heatmaps: Vec<PyRef<'_, PyHeatmap>>, percentile: f64) -> PyResult<PyMask> {
    let maps: Vec<corr::Heatmap> = heatmaps.iter().map(|h| h.0.clone()).collect();
    ok(segmentation::similarity_threshold_mask(&maps, percentile)).map(PyMask)
}

#[pyfunction]
fn dice(a: PyRef<'_, PyMask>, b: PyRef<'_, PyMask>) -> PyResult<f64> {
    ok(metrics::dice(&a.0, &b.0))
}

/// `(positive, negative)` accuracies of transferred prompts; `None` when vacuous.
#[pyfunction]
fn prompt_accuracy(matches: Vec<PyRef<'_, PyMatch>>, mask: PyRef<'_, PyMask>) -> PyResult<(Option<f64>, Option<f64>)> {
    let matches: Vec<corr::Match> = matches.iter().map(|m| m.0.clone()).collect();
    let acc = ok(metrics::prompt_accuracy(&matches, &mask.0))?;
    Ok((acc.positive_value(), acc.negative_value()))
}

/// Mean landmark distance over the image diagonal.
#[pyfunction]
fn localization_error(
    matches: Vec<PyRef<'_, PyMatch>>,
    landmarks: Vec<(usize, usize)>,
    dims: (usize, usize),
) -> PyResult<f64> {
    let matches: Vec<corr::Match> = matches.iter().map(|m| m.0.clone()).collect();
    let gt: Vec<Point> = landmarks.into_iter().map(point).collect();
    Ok(ok(metrics::localization_error(&matches, &gt, dims))?.mean)
}

/// Joint k-means over all maps; returns per-map flat label lists and the inertia.
#[pyfunction]
#[pyo3(signature = (maps, k, seed = 0))]
fn co_cluster(py: Python<'_>, maps: Vec<PyRef<'_, PyPixelFeatureMap>>, k: usize, seed: u64) -> PyResult<(Vec<Vec<u32>>, f64)> {
    let maps: Vec<model::PixelFeatureMap> = maps.iter().map(|m| m.0.clone()).collect();
    let result = ok(py.detach(|| clustering::co_cluster(&maps, k, seed, clustering::KMeansOptions::default())))?;
    let labels = result.label_maps.iter().map(|l| l.labels().to_vec()).collect();
    Ok((labels, result.inertia))
}

/// Runs a task manifest; returns `(failed_cells, total_cells, output_dir)`.
#[pyfunction]
#[pyo3(signature = (manifest, models = None, jobs = None))]
fn run_eval(py: Python<'_>, manifest: PathBuf, models: Option<Vec<String>>, jobs: Option<usize>) -> PyResult<(usize, usize, PathBuf)> {
    let summary = py.detach(|| -> Rc<_> {
        let manifest = TaskManifest::load(&manifest)?;
        eval::run_eval(&manifest, &EvalOptions { models, jobs })
    });
    let summary = ok(summary)?;
    Ok((summary.failed_cells(), summary.cells.len(), summary.output_dir))
}

#[pymodule(name = "corrseg")]
fn corrseg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds every class and function to `m`; lets an embedding interpreter host
/// the module without importing the shared library.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CorrsegError", m.py().get_type::<CorrsegError>())?;
    m.add_class::<PyFeatureGrid>()?;
    m.add_class::<PyPixelFeatureMap>()?;
    m.add_class::<PyPromptSet>()?;
    m.add_class::<PyMatch>()?;
    m.add_class::<PyHeatmap>()?;
    m.add_class::<PyMask>()?;
    m.add_function(wrap_pyfunction!(correspond, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_mask, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(prompt_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(localization_error, m)?)?;
    m.add_function(wrap_pyfunction!(co_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(run_eval, m)?)?;
    Ok(())
}
