//! Python module `dynloc`: dataset generation, map building, localization
//! and evaluation, plus the pose-error helpers.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::dynloc::evalx;
use ::dynloc::geom::{self, Pose};
use ::dynloc::pipeline::{self, BuildStatus, PipelineConfig};
use ::dynloc::synthgen::{self, DatasetConfig, MovableSpec};

/// `(qw, qx, qy, qz, tx, ty, tz)`, world-to-camera.
type PoseTuple = (f64, f64, f64, f64, f64, f64, f64);

fn to_pose(p: PoseTuple) -> PyResult<Pose> {
    let (w, x, y, z, tx, ty, tz) = p;
    Pose::from_quaternion(w, x, y, z, [tx, ty, tz].into()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn runtime<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn config(options: Option<&Bound<'_, PyDict>>) -> PyResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(options) = options {
        for (k, v) in options.iter() {
            let key: String = k.extract()?;
            let value = v.str()?.to_string();
            cfg.set(&key, &value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        }
    }
    Ok(cfg)
}

/// Rotation angle in degrees and camera-center distance between two poses.
#[pyfunction]
fn pose_error(a: PoseTuple, b: PoseTuple) -> PyResult<(f64, f64)> {
    let e = geom::pose_error(&to_pose(a)?, &to_pose(b)?);
    Ok((e.angle_deg, e.distance))
}

/// Pose-similarity target for a rotation error in degrees and a distance.
#[pyfunction]
fn similarity_target(angle_deg: f64, distance: f64) -> f64 {
    geom::similarity_target(&geom::PoseError { angle_deg, distance })
}

/// Writes a synthetic dataset under `out`; returns the mean query occupancy.
#[pyfunction]
#[pyo3(signature = (out, seed=0, sweeps=12, queries=15, dynamic=false, textureless=false, scale=1.0, movers=None))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    out: PathBuf,
    seed: u64,
    sweeps: usize,
    queries: usize,
    dynamic: bool,
    textureless: bool,
    scale: f64,
    movers: Option<usize>,
) -> PyResult<f64> {
    if !(scale >= 1.0 && scale.is_finite()) {
        return Err(PyValueError::new_err(format!("scale must be at least 1, got {scale}")));
    }
    let mut cfg = DatasetConfig::default();
    cfg.scene.seed = seed;
    cfg.scene.textureless = textureless;
    cfg.scene.movable = vec![MovableSpec::person(); movers.unwrap_or(if dynamic { 3 } else { 0 })];
    cfg.intrinsics = cfg.intrinsics.downscaled(scale);
    cfg.sweeps = sweeps;
    cfg.queries = queries;
    cfg.dynamic = dynamic;
    let summary = synthgen::generate_dataset(&cfg, &out).map_err(runtime)?;
    Ok(summary.mean_occupancy())
}

/// Builds the map in `map_dir`. `options` maps configuration keys to values.
/// Returns `(rebuilt, images, points)`.
#[pyfunction]
#[pyo3(signature = (map_dir, force=false, options=None))]
fn build_map(map_dir: PathBuf, force: bool, options: Option<&Bound<'_, PyDict>>) -> PyResult<(bool, usize, usize)> {
    let cfg = config(options)?;
    let r = pipeline::preprocess_map(&map_dir, &cfg, force).map_err(runtime)?;
    Ok((r.status == BuildStatus::Built, r.images, r.points))
}

/// Localizes every query and writes `poses.txt` and `report.txt` to
/// `out_dir`. Returns the number of localized queries.
#[pyfunction]
#[pyo3(signature = (map_dir, queries_dir, out_dir, options=None))]
fn localize(
    map_dir: PathBuf,
    queries_dir: PathBuf,
    out_dir: PathBuf,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<usize> {
    let cfg = config(options)?;
    let summary = pipeline::run_localize(&map_dir, &queries_dir, &out_dir, &cfg, None).map_err(runtime)?;
    Ok(summary.localized())
}

/// Fraction of `results` within each distance threshold and the rotation
/// gate; `results` maps query ids to a pose or `None`.
#[pyfunction]
#[pyo3(signature = (results, ground_truth, thresholds, rot_gate_deg=evalx::DEFAULT_ROT_GATE_DEG))]
fn accuracy_curve(
    results: BTreeMap<String, Option<PoseTuple>>,
    ground_truth: BTreeMap<String, PoseTuple>,
    thresholds: Vec<f64>,
    rot_gate_deg: f64,
) -> PyResult<Vec<f64>> {
    let results = results
        .into_iter()
        .map(|(id, p)| Ok((id, p.map(to_pose).transpose()?)))
        .collect::<PyResult<Vec<_>>>()?;
    let gt = ground_truth
        .into_iter()
        .map(|(id, p)| Ok((id, to_pose(p)?)))
        .collect::<PyResult<BTreeMap<_, _>>>()?;
    let curve = evalx::accuracy_curve(&results, &gt, &thresholds, rot_gate_deg).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(curve.fraction_localized)
}

/// Reads a run directory written by `localize`.
#[pyfunction]
fn read_results(run_dir: PathBuf) -> PyResult<BTreeMap<String, Option<PoseTuple>>> {
    let results = evalx::read_results(&run_dir).map_err(runtime)?;
    Ok(results.into_iter().map(|(id, p)| (id, p.map(pose_tuple))).collect())
}

fn pose_tuple(p: Pose) -> PoseTuple {
    let [w, x, y, z] = p.quaternion();
    let t = p.translation();
    (w, x, y, z, t.x, t.y, t.z)
}

#[pymodule]
fn dynloc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pose_error, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_target, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(build_map, m)?)?;
    m.add_function(wrap_pyfunction!(localize, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_curve, m)?)?;
    m.add_function(wrap_pyfunction!(read_results, m)?)?;
    Ok(())
}
