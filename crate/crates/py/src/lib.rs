//! Python bindings: images, frequency features, SSIM, the toy corpus,
//! decision models and the accelerated run loop.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use skipvar::config::RunConfig;
use skipvar::decision::{self, FeatureVector, ModelKind, Policy, TrainConfig};
use skipvar::imagecore::{self, ImageFormat};
use skipvar::labeling::{self, CorpusConfig, RecipeFamily};
use skipvar::strategies::Strategy;
use skipvar::{frequency, metrics, pipeline, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Grayscale image with float32 intensities, row-major.
#[pyclass(name = "Image", module = "skipvar", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: imagecore::Image,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyImage { inner: imagecore::Image::new(width, height, data).map_err(to_py)? })
    }

    #[staticmethod]
    fn constant(width: usize, height: usize, value: f32) -> PyResult<Self> {
        Ok(PyImage { inner: imagecore::Image::constant(width, height, value).map_err(to_py)? })
    }

    /// Loads PGM/PPM or rawf32; color input is converted to gray.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyImage { inner: imagecore::load_image(path).map_err(to_py)?.into_gray() })
    }

    /// `format` is `"pgm"` or `"raw"`.
    #[pyo3(signature = (path, format = "raw"))]
    fn save(&self, path: PathBuf, format: &str) -> PyResult<()> {
        let fmt: ImageFormat = parse(format)?;
        imagecore::save_image(&self.inner, path, fmt).map_err(to_py)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<f32> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!("pixel ({x}, {y}) out of range")));
        }
        Ok(self.inner.get(x, y))
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    /// Area average when shrinking, bilinear otherwise.
    fn resample(&self, width: usize, height: usize) -> PyResult<Self> {
        Ok(PyImage { inner: imagecore::resample(&self.inner, width, height).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

#[pyfunction]
fn sobel_magnitude(img: &PyImage) -> PyResult<PyImage> {
    Ok(PyImage { inner: frequency::sobel_magnitude(&img.inner).map_err(to_py)? })
}

#[pyfunction]
#[pyo3(signature = (current, previous, analysis_size = 128))]
fn hf_diff(current: &PyImage, previous: &PyImage, analysis_size: usize) -> PyResult<f64> {
    frequency::hf_diff(&current.inner, &previous.inner, analysis_size).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (img, rho = 0.25, epsilon = 1e-8))]
fn hf_ratio(img: &PyImage, rho: f64, epsilon: f64) -> PyResult<f64> {
    let p = frequency::HfParams::new(rho, epsilon).map_err(to_py)?;
    Ok(frequency::hf_ratio(&img.inner, &p))
}

#[pyfunction]
fn ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner, &metrics::SsimParams::default()).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, b, quantile = 0.75))]
fn ssim_hf(a: &PyImage, b: &PyImage, quantile: f64) -> PyResult<f64> {
    let m = metrics::HfMaskParams { quantile };
    metrics::ssim_hf(&a.inner, &b.inner, &metrics::SsimParams::default(), &m).map_err(to_py)
}

/// Run configuration: defaults, optionally a TOML file, then `key=value` overrides.
#[pyclass(name = "Config", module = "skipvar", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path = None, overrides = Vec::new()))]
    fn new(path: Option<PathBuf>, overrides: Vec<String>) -> PyResult<Self> {
        Ok(PyConfig { inner: RunConfig::load(path.as_deref(), &overrides).map_err(to_py)? })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    fn hash(&self) -> PyResult<String> {
        self.inner.hash().map_err(to_py)
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Strategies from most to least aggressive under the cost model.
    fn ladder(&self) -> PyResult<Vec<String>> {
        let tc = self.inner.trace_config().map_err(to_py)?;
        let order = self.inner.pipeline_config().ordered_ladder(&tc).map_err(to_py)?;
        Ok(order.iter().map(Strategy::to_string).collect())
    }

    /// Modeled speedup of `strategy`, decision overhead included.
    fn speedup(&self, strategy: &str) -> PyResult<f64> {
        let tc = self.inner.trace_config().map_err(to_py)?;
        let cm = self.inner.pipeline_config().cost_model(&tc).map_err(to_py)?;
        cm.speedup(&parse::<Strategy>(strategy)?).map_err(to_py)
    }
}

fn config_or_default(config: Option<&PyConfig>) -> RunConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

#[pyclass(name = "CorpusSample", module = "skipvar", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCorpusSample {
    inner: labeling::CorpusSample,
}

#[pymethods]
impl PyCorpusSample {
    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn trace_seed(&self) -> u64 {
        self.inner.trace_seed
    }

    /// Recipe or file reference as a JSON string.
    fn spec_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.spec).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[pyo3(signature = (size = 256))]
    fn render(&self, size: usize) -> PyResult<PyImage> {
        Ok(PyImage { inner: self.inner.render(size).map_err(to_py)? })
    }

    fn __repr__(&self) -> String {
        format!("CorpusSample({})", self.inner.id)
    }
}

#[pyfunction]
#[pyo3(signature = (family = "mixed", size = labeling::DEFAULT_CORPUS_SIZE, seed = labeling::DEFAULT_CORPUS_SEED))]
fn build_corpus(family: &str, size: usize, seed: u64) -> PyResult<Vec<PyCorpusSample>> {
    let cc = CorpusConfig { family: parse::<RecipeFamily>(family)?, size, seed };
    Ok(labeling::build_corpus(&cc).map_err(to_py)?.into_iter().map(|inner| PyCorpusSample { inner }).collect())
}

/// Trained decision model (single or two-stage).
#[pyclass(name = "Model", module = "skipvar", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: Policy,
}

fn features_from(rows: &[(f64, f64)]) -> Vec<FeatureVector> {
    rows.iter().map(|&(d, r)| FeatureVector::new(d, r)).collect()
}

#[pymethods]
impl PyModel {
    /// Fits on `(hf_diff, hf_ratio)` rows and strategy-name labels; the
    /// class set is the configured ladder.
    #[staticmethod]
    #[pyo3(signature = (features, labels, kind = "logreg", config = None))]
    fn train(features: Vec<(f64, f64)>, labels: Vec<String>, kind: &str, config: Option<&PyConfig>) -> PyResult<Self> {
        let rc = RunConfig { model: parse::<ModelKind>(kind)?, ..config_or_default(config) };
        let labels = labels.iter().map(|l| parse::<Strategy>(l)).collect::<PyResult<Vec<_>>>()?;
        let classes = rc
            .pipeline_config()
            .ordered_ladder(&rc.trace_config().map_err(to_py)?)
            .map_err(to_py)?;
        let tc: TrainConfig = rc.train_config();
        let m = decision::train(&features_from(&features), &labels, &classes, &tc).map_err(to_py)?;
        Ok(PyModel { inner: m.into() })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel { inner: Policy::from_json(text).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: decision::load_policy(path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        decision::save_policy(&self.inner, path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn predict(&self, hf_diff: f64, hf_ratio: f64) -> PyResult<String> {
        Ok(self.inner.predict(&FeatureVector::new(hf_diff, hf_ratio)).map_err(to_py)?.to_string())
    }

    fn classes(&self) -> Vec<String> {
        self.inner.classes().iter().map(Strategy::to_string).collect()
    }

    /// Fraction of rows whose prediction equals the label.
    fn accuracy(&self, features: Vec<(f64, f64)>, labels: Vec<String>) -> PyResult<f64> {
        if features.is_empty() {
            return Err(PyValueError::new_err("empty evaluation set"));
        }
        let mut hits = 0;
        for (f, l) in features_from(&features).iter().zip(&labels) {
            if self.inner.predict(f).map_err(to_py)? == parse::<Strategy>(l)? {
                hits += 1;
            }
        }
        Ok(hits as f64 / features.len() as f64)
    }

    fn kind(&self) -> String {
        match &self.inner {
            Policy::Single { model } => model.kind.to_string(),
            Policy::TwoStage { .. } => "two_stage".into(),
        }
    }
}


fn report_dict<'py>(py: Python<'py>, r: &pipeline::RunReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("strategy", r.strategy.to_string())?;
    d.set_item("hf_diff", r.features.hf_diff)?;
    d.set_item("hf_ratio", r.features.hf_ratio)?;
    d.set_item("ssim", r.ssim)?;
    d.set_item("ssim_hf", r.ssim_hf)?;
    d.set_item("cost", r.cost)?;
    d.set_item("speedup", r.speedup)?;
    Ok(d)
}

fn run_setup(config: Option<&PyConfig>, seed: Option<u64>, baseline: bool) -> PyResult<(skipvar::toygen::TraceConfig, pipeline::PipelineConfig)> {
    let rc = config_or_default(config);
    let tc = rc.trace_config().map_err(to_py)?;
    let tc = tc.with_seed(seed.unwrap_or(rc.seed));
    Ok((tc, pipeline::PipelineConfig { compute_baseline: baseline, ..rc.pipeline_config() }))
}

/// Accelerated generation of `target` under `model`. Returns `(image, report)`.
#[pyfunction]
#[pyo3(signature = (target, model, config = None, seed = None, baseline = false))]
fn run_skipvar<'py>(
    py: Python<'py>,
    target: &PyImage,
    model: &PyModel,
    config: Option<&PyConfig>,
    seed: Option<u64>,
    baseline: bool,
) -> PyResult<(PyImage, Bound<'py, PyDict>)> {
    let (tc, pc) = run_setup(config, seed, baseline)?;
    let (img, rep) = pipeline::run_skipvar(&target.inner, &tc, &pc, &model.inner).map_err(to_py)?;
    Ok((PyImage { inner: img }, report_dict(py, &rep)?))
}

/// Same run loop with a fixed strategy such as `"skip_3"` or `"none"`.
#[pyfunction]
#[pyo3(signature = (target, strategy, config = None, seed = None, baseline = false))]
fn run_forced<'py>(
    py: Python<'py>,
    target: &PyImage,
    strategy: &str,
    config: Option<&PyConfig>,
    seed: Option<u64>,
    baseline: bool,
) -> PyResult<(PyImage, Bound<'py, PyDict>)> {
    let (tc, pc) = run_setup(config, seed, baseline)?;
    let (img, rep) = pipeline::run_forced(&target.inner, &tc, &pc, parse(strategy)?).map_err(to_py)?;
    Ok((PyImage { inner: img }, report_dict(py, &rep)?))
}

/// Simulates every ladder strategy on `target`; returns the features, the
/// per-strategy SSIM and the label at `tau` (config tau when omitted).
#[pyfunction]
#[pyo3(signature = (target, tau = None, config = None, seed = None))]
fn label_sample<'py>(
    py: Python<'py>,
    target: &PyImage,
    tau: Option<f64>,
    config: Option<&PyConfig>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let rc = config_or_default(config);
    let (tc, pc) = run_setup(config, seed, false)?;
    let s = labeling::label_sample(&target.inner, &tc, &pc, tau.unwrap_or(rc.tau)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("hf_diff", s.features.hf_diff)?;
    d.set_item("hf_ratio", s.features.hf_ratio)?;
    d.set_item("label", s.label.to_string())?;
    let scores: Vec<(String, f64)> = s.scores.iter().map(|x| (x.strategy.to_string(), x.ssim)).collect();
    d.set_item("scores", scores)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "skipvar")]
fn skipvar_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCorpusSample>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(sobel_magnitude, m)?)?;
    m.add_function(wrap_pyfunction!(hf_diff, m)?)?;
    m.add_function(wrap_pyfunction!(hf_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(ssim_hf, m)?)?;
    m.add_function(wrap_pyfunction!(build_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_skipvar, m)?)?;
    m.add_function(wrap_pyfunction!(run_forced, m)?)?;
    m.add_function(wrap_pyfunction!(label_sample, m)?)?;
    Ok(())
}
