use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mfp3d::config::RunConfigFile;
use mfp3d::evaluation;
use mfp3d::geometry::TriangleMesh;
use mfp3d::synth::{build_dataset, DatasetManifest, Split};
use mfp3d::training::{self, Variant};
use mfp3d::Error;

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::Unknown { .. } => PyKeyError::new_err(msg),
        Error::Numerical(_) => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn run_config(config: Option<&str>) -> PyResult<RunConfigFile> {
    match config {
        Some(text) => RunConfigFile::parse(text).map_err(py_err),
        None => Ok(RunConfigFile::default()),
    }
}

fn manifest_at(path: PathBuf) -> PyResult<DatasetManifest> {
    DatasetManifest::load(&path).map_err(py_err)
}

/// Generates a synthetic dataset under `out`; `config` is run-config JSON.
/// Returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out, config=None))]
fn generate_dataset(out: PathBuf, config: Option<&str>) -> PyResult<String> {
    let cfg = run_config(config)?.generator;
    build_dataset(&cfg, &out).map_err(py_err)?;
    Ok(out.join(mfp3d::synth::MANIFEST_FILE).to_string_lossy().into_owned())
}

/// Stage-1 point cloud of one sample as a list of `[x, y, z]`.
#[pyfunction]
#[pyo3(signature = (manifest, sample, variant, config=None))]
fn reconstruct(manifest: PathBuf, sample: u32, variant: &str, config: Option<&str>) -> PyResult<Vec<[f64; 3]>> {
    let mut cfg = run_config(config)?.train;
    cfg.variant = variant.parse::<Variant>().map_err(py_err)?;
    let manifest = manifest_at(manifest)?;
    let record = manifest.load_sample(sample).map_err(py_err)?;
    let cloud = training::stage1_cloud(&record, manifest.seed, &cfg).map_err(py_err)?;
    Ok(cloud.into_points())
}

/// Trains one model, writes the checkpoint to `out` and returns the
/// per-epoch training L1.
#[pyfunction]
#[pyo3(signature = (manifest, out, config=None))]
fn train(py: Python<'_>, manifest: PathBuf, out: PathBuf, config: Option<&str>) -> PyResult<Vec<f64>> {
    let cfg = run_config(config)?.train;
    let manifest = manifest_at(manifest)?;
    let ckpt = py.detach(|| training::train(&manifest, &cfg)).map_err(py_err)?;
    training::save_checkpoint(&ckpt, &out).map_err(py_err)?;
    Ok(ckpt.history)
}

/// Test-split metrics of a checkpoint.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, ckpt: PathBuf, manifest: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let ckpt = training::load_checkpoint(&ckpt).map_err(py_err)?;
    let manifest = manifest_at(manifest)?;
    let row = py
        .detach(|| evaluation::evaluate(&ckpt, &manifest, Split::Test))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("modality", row.modality)?;
    d.set_item("variant", row.variant)?;
    d.set_item("attribute", row.attribute.as_str())?;
    d.set_item("mae", row.mae)?;
    d.set_item("mape", row.mape)?;
    d.set_item("n_test", row.n_test)?;
    d.set_item("status", row.status)?;
    Ok(d)
}

#[pyfunction]
fn mae(preds: Vec<f64>, gts: Vec<f64>) -> PyResult<f64> {
    evaluation::mae(&preds, &gts).map_err(py_err)
}

/// In percent.
#[pyfunction]
fn mape(preds: Vec<f64>, gts: Vec<f64>) -> PyResult<f64> {
    evaluation::mape(&preds, &gts).map_err(py_err)
}

/// Enclosed volume of a closed, outward-oriented triangle mesh.
#[pyfunction]
fn mesh_volume(vertices: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> PyResult<f64> {
    let mesh = TriangleMesh::new(vertices, triangles).map_err(py_err)?;
    mfp3d::geometry::mesh_volume(&mesh).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "mfp3d")]
fn mfp3d_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(mesh_volume, m)?)?;
    Ok(())
}
