//! Python bindings: dataset generation, checkpoints and prediction,
//! confusion matrices, evaluation and the gradient suite.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use seqseg::eval::{evaluate_model, ConfusionMatrix};
use seqseg::fcn::{build_fcn, FcnConfig};
use seqseg::gradcheck::{run_suite, SuiteOptions};
use seqseg::model::{load_checkpoint, save_checkpoint, SegModel, Variant};
use seqseg::params::trainable_count;
use seqseg::recurrent::{build_head, RnnConfig};
use seqseg::synthworld::{self, CLASS_NAMES, NUM_CLASSES};
use seqseg::{Error, LabelMap};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_) | Error::Contract(_) | Error::Data(_) | Error::Incompatible(_) | Error::Format { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn variant(name: &str) -> PyResult<Variant> {
    Variant::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown variant {name:?}")))
}

#[pyclass(name = "SynthConfig", from_py_object)]
#[derive(Clone)]
struct PySynthConfig {
    inner: synthworld::SynthConfig,
}

#[pymethods]
impl PySynthConfig {
    #[new]
    #[pyo3(signature = (seed=0, train_sequences=20, test_sequences=4, frames_per_sequence=100, height=48, width=64))]
    fn new(
        seed: u64,
        train_sequences: usize,
        test_sequences: usize,
        frames_per_sequence: usize,
        height: usize,
        width: usize,
    ) -> PyResult<Self> {
        let inner = synthworld::SynthConfig {
            seed,
            train_sequences,
            test_sequences,
            frames_per_sequence,
            height,
            width,
            ..Default::default()
        };
        inner.validate().map_err(to_py)?;
        Ok(PySynthConfig { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn frames_per_sequence(&self) -> usize {
        self.inner.frames_per_sequence
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }

    fn __repr__(&self) -> String {
        format!("SynthConfig({})", self.to_json())
    }
}

/// Renders the dataset under `out` and returns the manifest as JSON.
#[pyfunction]
fn generate_dataset(py: Python<'_>, config: &PySynthConfig, out: PathBuf) -> PyResult<String> {
    let c = config.inner.clone();
    let m = py.detach(move || synthworld::generate_dataset(&c, &out)).map_err(to_py)?;
    Ok(serde_json::to_string(&m).expect("manifest serializes"))
}

#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: SegModel,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized desk-scale model of the given variant.
    #[staticmethod]
    #[pyo3(signature = (variant_name, seed=0))]
    fn untrained(variant_name: &str, seed: u64) -> PyResult<Self> {
        let v = variant(variant_name)?;
        let fcn = build_fcn(&FcnConfig::desk(NUM_CLASSES), seed).map_err(to_py)?;
        let head = match v.cell() {
            None => None,
            Some(cell) => Some(build_head(&RnnConfig::desk(cell, NUM_CLASSES), seed + 1).map_err(to_py)?),
        };
        Ok(PyModel {
            inner: SegModel::new(fcn, head).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_checkpoint(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant().name()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn parameter_count(&self) -> usize {
        trainable_count(&self.inner)
    }

    /// Same FCN with the head dropped, kept, or checked against `name`.
    fn as_variant(&self, name: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: self.inner.as_variant(variant(name)?).map_err(to_py)?,
        })
    }

    /// Predicted label maps for every frame of a sequence directory, each as
    /// `h * w` bytes in row-major order.
    fn predict_sequence<'py>(&self, py: Python<'py>, seq_dir: PathBuf) -> PyResult<Vec<Bound<'py, PyBytes>>> {
        let model = self.inner.clone();
        let preds = py
            .detach(move || {
                let seq = synthworld::load_sequence(&seq_dir)?;
                let frames: Vec<_> = seq.frames.iter().map(|f| &f.image).collect();
                model.predict_sequence(&frames)
            })
            .map_err(to_py)?;
        Ok(preds.iter().map(|p| PyBytes::new(py, &p.data)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model(variant={:?}, classes={})", self.variant(), self.num_classes())
    }
}

#[pyclass(name = "ConfusionMatrix", from_py_object)]
#[derive(Clone)]
struct PyConfusion {
    inner: ConfusionMatrix,
}

#[pymethods]
impl PyConfusion {
    #[new]
    fn new(num_classes: usize) -> Self {
        PyConfusion {
            inner: ConfusionMatrix::new(num_classes),
        }
    }

    /// Adds one `height x width` frame; labels are row-major class ids, 255
    /// in `truth` is ignored.
    fn accumulate(&mut self, truth: Vec<u8>, pred: Vec<u8>, height: usize, width: usize) -> PyResult<()> {
        let t = LabelMap::new(1, height, width, truth).map_err(to_py)?;
        let p = LabelMap::new(1, height, width, pred).map_err(to_py)?;
        self.inner.accumulate(&t, &p).map_err(to_py)
    }

    fn pixel_accuracy(&self) -> PyResult<f64> {
        self.inner.pixel_accuracy().map_err(to_py)
    }

    fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.inner.per_class_accuracy()
    }

    /// Counts as a list of rows (truth) of columns (prediction).
    fn counts(&self) -> Vec<Vec<u64>> {
        let k = self.inner.num_classes();
        (0..k).map(|t| (0..k).map(|p| self.inner.get(t, p)).collect()).collect()
    }

    fn total(&self) -> u64 {
        self.inner.total()
    }
}

/// Scores `model` on one split of a generated dataset.
#[pyfunction]
#[pyo3(signature = (model, data_dir, split="test"))]
fn evaluate(py: Python<'_>, model: &PyModel, data_dir: PathBuf, split: &str) -> PyResult<(f64, Vec<Option<f64>>, PyConfusion)> {
    let m = model.inner.clone();
    let split = split.to_string();
    let r = py
        .detach(move || {
            let data = synthworld::load_split(&data_dir, &split)?;
            evaluate_model(&m, &data)
        })
        .map_err(to_py)?;
    Ok((r.accuracy, r.per_class, PyConfusion { inner: r.confusion }))
}

/// Runs the finite-difference suite; one `(name, max_rel_error, passed)` per
/// check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let entries = py
        .detach(move || run_suite(&SuiteOptions { seed, fault: None }))
        .map_err(to_py)?;
    Ok(entries
        .into_iter()
        .map(|e| (e.name.to_string(), e.report.max_rel_error, e.passed))
        .collect())
}

#[pymodule]
fn seqseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySynthConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyConfusion>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("CLASS_NAMES", CLASS_NAMES.to_vec())?;
    m.add("VARIANTS", Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>())?;
    m.add("IGNORE_LABEL", seqseg::IGNORE_LABEL)?;
    Ok(())
}
