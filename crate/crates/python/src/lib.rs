//! Python bindings (`import pymwdnn`). Arrays cross the boundary as nested
//! lists; wrap them with `numpy.asarray` on the Python side as needed.

use std::path::PathBuf;

use mwdnn::data::{self, Interpolation};
use mwdnn::optics::{
    layer_spacing, propagate as propagate_field, ComplexField, GridSpec, PhaseStack,
    PropagationKernel,
};
use mwdnn::readout;
use mwdnn::tools::{self, RunConfig, Split};
use mwdnn::training::{self, init_phases, MultiTaskModel, OneHotLabel};
use ndarray::Array2;
use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: mwdnn::Error) -> PyErr {
    match e {
        mwdnn::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for mwdnn::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

pub fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("ragged 2-D list"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((h, w), flat).map_err(|e| PyValueError::new_err(e.to_string()))
}

pub fn from_array<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn interpolation(name: &str) -> PyResult<Interpolation> {
    match name {
        "bilinear" => Ok(Interpolation::Bilinear),
        "nearest" => Ok(Interpolation::Nearest),
        _ => Err(PyValueError::new_err(format!("unknown interpolation `{name}`"))),
    }
}

/// Uniform plane spacing in meters for the given wavelengths (nm) and grid.
#[pyfunction]
#[pyo3(signature = (wavelengths_nm, side, pitch_um, pad_factor = 2))]
fn plane_spacing(wavelengths_nm: Vec<f64>, side: usize, pitch_um: f64, pad_factor: usize) -> PyResult<f64> {
    let grid = GridSpec::new(side, pitch_um * 1e-6, pad_factor).py()?;
    let wl: Vec<f64> = wavelengths_nm.iter().map(|w| w * 1e-9).collect();
    layer_spacing(&wl, &grid).py()
}

/// Free-space propagation of a K×K complex field given as (real, imag).
#[pyfunction]
#[pyo3(signature = (real, imag, wavelength, distance, pitch, pad_factor = 2))]
fn propagate(
    real: Vec<Vec<f64>>,
    imag: Vec<Vec<f64>>,
    wavelength: f64,
    distance: f64,
    pitch: f64,
    pad_factor: usize,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let re = to_array(real)?;
    let im = to_array(imag)?;
    if re.dim() != im.dim() || re.nrows() != re.ncols() {
        return Err(PyValueError::new_err("real and imag must be equal square arrays"));
    }
    let grid = GridSpec::new(re.nrows(), pitch, pad_factor).py()?;
    let field = Array2::from_shape_fn(re.dim(), |i| Complex64::new(re[i], im[i]));
    let kernel = PropagationKernel::new(grid, wavelength, distance).py()?;
    let out = propagate_field(&ComplexField::new(field, wavelength, grid).py()?, &kernel).py()?;
    let a = out.amplitudes();
    Ok((from_array(&a.mapv(|v| v.re)), from_array(&a.mapv(|v| v.im))))
}

/// Cross-entropy of softmax(scores) against `label`, and its gradient.
#[pyfunction]
fn softmax_xent(scores: Vec<f64>, label: usize) -> PyResult<(f64, Vec<f64>)> {
    let onehot = OneHotLabel::new(label, scores.len()).py()?;
    training::softmax_xent(&scores, &onehot).py()
}

#[pyfunction]
fn classify(scores: Vec<f64>) -> PyResult<usize> {
    readout::classify(&scores).py()
}

#[pyfunction]
#[pyo3(signature = (epoch, initial = 0.01, decay = 0.5))]
fn lr_schedule(epoch: usize, initial: f64, decay: f64) -> f64 {
    training::lr_schedule(epoch, initial, decay)
}

/// Seconds from input to detector readout.
#[pyfunction]
fn latency(path_length: f64, detector_rate: f64) -> PyResult<f64> {
    tools::latency(path_length, detector_rate).py()
}

#[pyfunction]
#[pyo3(signature = (target, wavelengths, refractive_index, max_order = 10))]
fn solve_doe_heights<'py>(
    py: Python<'py>,
    target: Vec<Vec<f64>>,
    wavelengths: Vec<f64>,
    refractive_index: Vec<f64>,
    max_order: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let map = tools::solve_doe_heights(&to_array(target)?, &wavelengths, &refractive_index, max_order).py()?;
    let d = PyDict::new(py);
    d.set_item("heights", from_array(&map.heights))?;
    d.set_item("orders", from_array(&map.orders))?;
    d.set_item("residual_rms", map.residual_rms)?;
    Ok(d)
}

/// Reads an IDX image/label pair: (images as flat byte lists, labels, rows, cols).
#[pyfunction]
fn load_idx(images: PathBuf, labels: PathBuf) -> PyResult<(Vec<Vec<u8>>, Vec<usize>, usize, usize)> {
    let set = data::load_idx(images, labels).py()?;
    let imgs = (0..set.len()).map(|i| set.image(i).to_vec()).collect();
    Ok((imgs, set.labels().to_vec(), set.rows(), set.cols()))
}

/// Gray image to a unit-power K×K input amplitude.
#[pyfunction]
#[pyo3(signature = (image, rows, cols, side, interpolation = "bilinear"))]
fn preprocess(image: Vec<u8>, rows: usize, cols: usize, side: usize, interpolation: &str) -> PyResult<Vec<Vec<f64>>> {
    let mode = self::interpolation(interpolation)?;
    let s = data::preprocess(&image, rows, cols, 0, side, mode).py()?;
    Ok(from_array(&s.field))
}

/// A configured multi-task network and its current phase stack.
#[pyclass(module = "pymwdnn")]
struct Model {
    config: RunConfig,
    model: MultiTaskModel,
    phases: PhaseStack,
}

impl Model {
    fn build(config: RunConfig) -> PyResult<Self> {
        let config = config.resolved().py()?;
        let model = config.model().py()?;
        let phases = init_phases(&model, config.train.init, config.run.seed);
        Ok(Self { config, model, phases })
    }

    fn amplitudes(&self, amplitudes: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Array2<f64>>> {
        amplitudes.into_iter().map(to_array).collect()
    }
}

#[pymethods]
impl Model {
    /// Build from TOML text plus `section.key=value` overrides.
    #[new]
    #[pyo3(signature = (config = "", overrides = Vec::new()))]
    fn new(config: &str, overrides: Vec<String>) -> PyResult<Self> {
        Self::build(RunConfig::from_toml_str(config, &overrides).py()?)
    }

    /// Build from a config file; relative data paths resolve against it.
    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        Self::build(RunConfig::load(path, &overrides).py()?)
    }

    /// Fully resolved configuration as TOML.
    #[getter]
    fn config(&self) -> String {
        self.config.to_toml()
    }

    #[getter]
    fn side(&self) -> usize {
        self.model.geometry().grid().side()
    }

    #[getter]
    fn task_count(&self) -> usize {
        self.model.task_count()
    }

    #[getter]
    fn category_count(&self) -> usize {
        self.model.category_count()
    }

    #[getter]
    fn phases(&self) -> Vec<Vec<Vec<f64>>> {
        self.phases.layers().iter().map(from_array).collect()
    }

    #[setter]
    fn set_phases(&mut self, layers: Vec<Vec<Vec<f64>>>) -> PyResult<()> {
        let layers = layers.into_iter().map(to_array).collect::<PyResult<Vec<_>>>()?;
        let stack = PhaseStack::from_layers(layers).py()?;
        if stack.layer_count() != self.phases.layer_count() || stack.side() != self.side() {
            return Err(PyValueError::new_err("phase stack does not match the model"));
        }
        self.phases = stack;
        Ok(())
    }

    /// One input amplitude per task → predictions, pooled scores and
    /// per-channel detector intensities.
    fn infer<'py>(&self, py: Python<'py>, amplitudes: Vec<Vec<Vec<f64>>>) -> PyResult<Bound<'py, PyDict>> {
        let amps = self.amplitudes(amplitudes)?;
        let inf = self.model.infer(&self.phases, &amps).py()?;
        let d = PyDict::new(py);
        d.set_item("predictions", inf.predictions)?;
        let scores: Vec<Vec<f64>> = inf.scores.iter().map(|s| s.as_slice().to_vec()).collect();
        d.set_item("scores", scores)?;
        let maps: Vec<_> = inf.intensities.iter().map(from_array).collect();
        d.set_item("intensities", maps)?;
        Ok(d)
    }

    /// (total loss, gradient per layer, predictions) for one sample tuple.
    fn loss_and_gradient(
        &self,
        amplitudes: Vec<Vec<Vec<f64>>>,
        labels: Vec<usize>,
    ) -> PyResult<(f64, Vec<Vec<Vec<f64>>>, Vec<usize>)> {
        let amps = self.amplitudes(amplitudes)?;
        let (report, grad, preds) = self.model.loss_and_gradient(&self.phases, &amps, &labels).py()?;
        Ok((report.total, grad.layers().iter().map(from_array).collect(), preds))
    }

    /// Trains on the configured datasets; returns per-epoch records.
    fn fit<'py>(&mut self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let sets = self.config.load_sets(Split::Train).py()?;
        let outcome = training::train_from(
            &self.model,
            &self.config.train_config(),
            &sets,
            self.phases.clone(),
            |_| {},
        )
        .py()?;
        self.phases = outcome.phases;
        outcome
            .history
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("learning_rate", r.learning_rate)?;
                d.set_item("mean_loss", r.mean_loss)?;
                d.set_item("train_accuracy", r.train_accuracy.clone())?;
                Ok(d)
            })
            .collect()
    }

    /// Test-set accuracy per task on the configured datasets.
    fn evaluate(&self) -> PyResult<Vec<f64>> {
        let sets = self.config.load_sets(Split::Test).py()?;
        let m = training::evaluate(&self.model, &self.phases, &sets, self.config.train.interpolation).py()?;
        Ok(m.accuracy)
    }

    /// Writes raw phase files and previews; returns the written paths.
    fn export_phase(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        tools::export_phase(&self.phases, dir).py()
    }

    fn import_phase(&mut self, dir: PathBuf) -> PyResult<()> {
        let layers = tools::import_phase(dir).py()?.layers().iter().map(from_array).collect();
        self.set_phases(layers)
    }

    /// Path length, latency and size figures of the configured optics.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = tools::optical_metrics(self.model.geometry(), self.config.metrics.detector_rate_ghz * 1e9).py()?;
        let d = PyDict::new(py);
        d.set_item("path_length", m.path_length)?;
        d.set_item("latency", m.latency)?;
        d.set_item("element_count", m.element_count)?;
        d.set_item("channel_count", m.channel_count)?;
        Ok(d)
    }
}

#[pymodule]
fn pymwdnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(plane_spacing, m)?)?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_xent, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(latency, m)?)?;
    m.add_function(wrap_pyfunction!(solve_doe_heights, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
