//! Python bindings: training dynamics, data maps, transfer analysis, cost
//! accounting, early stopping and the toy benchmark.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ftft_core::cartography::{self, SubsetKind};
use ftft_core::cost::{self, ModelRegistry, RunCost};
use ftft_core::dynamics::{read_dynamics_file, write_dynamics_file};
use ftft_core::pipeline::{self, BenchmarkConfig};
use ftft_core::{transfer, InstanceId, InstanceRecord};

fn to_py(err: ftft_core::Error) -> PyErr {
    match err {
        ftft_core::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn ids(set: &BTreeSet<InstanceId>) -> Vec<u64> {
    set.iter().map(|id| id.0).collect()
}

/// Per-instance p_true series of one run (`ftft-dyn-1`).
#[pyclass(name = "TrainingDynamics", module = "ftft", frozen)]
struct PyDynamics {
    inner: ftft_core::TrainingDynamics,
}

#[pymethods]
impl PyDynamics {
    /// `records` is a list of `(id, gold, p_true)` tuples.
    #[new]
    #[pyo3(signature = (run_id, model_name, num_params, dataset_name, records))]
    fn new(
        run_id: String,
        model_name: String,
        num_params: u64,
        dataset_name: String,
        records: Vec<(u64, u32, Vec<f64>)>,
    ) -> PyResult<Self> {
        let num_checkpoints = records.first().map_or(0, |r| r.2.len());
        let records = records
            .into_iter()
            .map(|(id, gold, p_true)| InstanceRecord {
                id: InstanceId(id),
                gold,
                p_true,
            })
            .collect();
        let inner = ftft_core::TrainingDynamics::new(run_id, model_name, num_params, dataset_name, num_checkpoints, records)
            .map_err(to_py)?;
        Ok(PyDynamics { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyDynamics {
            inner: read_dynamics_file(path).map_err(to_py)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_dynamics_file(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn run_id(&self) -> &str {
        self.inner.run_id()
    }

    #[getter]
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    #[getter]
    fn num_params(&self) -> u64 {
        self.inner.num_params()
    }

    #[getter]
    fn num_checkpoints(&self) -> usize {
        self.inner.num_checkpoints()
    }

    fn records(&self) -> Vec<(u64, u32, Vec<f64>)> {
        self.inner
            .records()
            .iter()
            .map(|r| (r.id.0, r.gold, r.p_true.clone()))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainingDynamics(run_id={:?}, instances={}, checkpoints={})",
            self.inner.run_id(),
            self.inner.len(),
            self.inner.num_checkpoints()
        )
    }
}

/// Data map: per-instance (mean, std) and the three-way categorization.
#[pyclass(name = "DataMap", module = "ftft", frozen, from_py_object)]
#[derive(Clone)]
struct PyDataMap {
    inner: cartography::DataMap,
}

#[pymethods]
impl PyDataMap {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let file = fs::File::open(path)?;
        Ok(PyDataMap {
            inner: cartography::DataMap::read(BufReader::new(file)).map_err(to_py)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_file(path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(to_py)
    }

    #[getter]
    fn run_id(&self) -> &str {
        &self.inner.run_id
    }

    #[getter]
    fn q(&self) -> f64 {
        self.inner.q
    }

    #[getter]
    fn ambiguous(&self) -> Vec<u64> {
        ids(&self.inner.ambiguous)
    }

    #[getter]
    fn hard_to_learn(&self) -> Vec<u64> {
        ids(&self.inner.hard_to_learn)
    }

    #[getter]
    fn easy(&self) -> Vec<u64> {
        ids(&self.inner.easy)
    }

    /// `(id, mean, std)` per instance.
    fn stats(&self) -> Vec<(u64, f64, f64)> {
        self.inner.stats.iter().map(|s| (s.id.0, s.mean, s.std)).collect()
    }

    fn easy_ratio(&self) -> f64 {
        transfer::easy_ratio(&self.inner)
    }

    /// `kind` is ambiguous, hard_to_learn, easy or random; random needs `seed`.
    #[pyo3(signature = (kind, seed=None))]
    fn select(&self, kind: &str, seed: Option<u64>) -> PyResult<Vec<u64>> {
        let kind: SubsetKind = kind.parse().map_err(to_py)?;
        Ok(ids(&cartography::select_subset(&self.inner, kind, seed).map_err(to_py)?))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "DataMap(run_id={:?}, q={}, instances={}, selected={})",
            self.inner.run_id,
            self.inner.q,
            self.inner.len(),
            self.inner.selection_size()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (dynamics, q=cartography::DEFAULT_Q))]
fn build_map(dynamics: &PyDynamics, q: f64) -> PyResult<PyDataMap> {
    Ok(PyDataMap {
        inner: cartography::build_map(&dynamics.inner, q).map_err(to_py)?,
    })
}

/// Map whose ambiguous and hard-to-learn sets are uniform random draws.
#[pyfunction]
fn random_map(run_id: String, ids: Vec<u64>, q: f64, seed: u64) -> PyResult<PyDataMap> {
    let ids: Vec<InstanceId> = ids.into_iter().map(InstanceId).collect();
    Ok(PyDataMap {
        inner: cartography::random_map(run_id, &ids, q, seed).map_err(to_py)?,
    })
}

#[pyfunction]
fn sel_count(n: usize, q: f64) -> PyResult<usize> {
    cartography::check_q(q).map_err(to_py)?;
    Ok(cartography::sel_count(n, q))
}

#[pyfunction]
fn ambiguous_overlap(a: &PyDataMap, b: &PyDataMap) -> PyResult<f64> {
    transfer::ambiguous_overlap(&a.inner, &b.inner).map_err(to_py)
}

/// Row-major overlap matrix; entry `[i][j]` is overlap(maps[i], maps[j]).
#[pyfunction]
fn overlap_matrix(maps: Vec<PyDataMap>) -> PyResult<Vec<Vec<f64>>> {
    let maps: Vec<cartography::DataMap> = maps.into_iter().map(|m| m.inner).collect();
    Ok(transfer::overlap_matrix(&maps).map_err(to_py)?.values)
}

/// `(hard_medians, other_medians)` per checkpoint.
#[pyfunction]
#[pyo3(signature = (dynamics, split_fraction=transfer::DEFAULT_SPLIT_FRACTION))]
fn median_trajectories(dynamics: &PyDynamics, split_fraction: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let t = transfer::median_trajectories(&dynamics.inner, split_fraction).map_err(to_py)?;
    Ok((t.hard_median_per_checkpoint, t.other_median_per_checkpoint))
}

/// Training cost of `params x steps x batch_size` as a percentage of the
/// baseline run.
#[pyfunction]
#[pyo3(signature = (params, steps, batch_size, baseline_params, baseline_steps, baseline_batch_size))]
fn relative_cost(
    params: u64,
    steps: u64,
    batch_size: u64,
    baseline_params: u64,
    baseline_steps: u64,
    baseline_batch_size: u64,
) -> PyResult<f64> {
    let run = RunCost::new("run", params, steps, batch_size).map_err(to_py)?;
    let base = RunCost::new("baseline", baseline_params, baseline_steps, baseline_batch_size).map_err(to_py)?;
    cost::relative_cost(&run, &base).map_err(to_py)
}

/// Built-in model sizes, name to parameter count.
#[pyfunction]
fn model_registry() -> Vec<(String, u64)> {
    ModelRegistry::builtin().iter().map(|(n, p)| (n.to_string(), p)).collect()
}

/// `(best_index, stop_index)` under patience `k`.
#[pyfunction]
#[pyo3(signature = (series, k=pipeline::DEFAULT_PATIENCE))]
fn early_stop(series: Vec<f64>, k: usize) -> PyResult<(usize, usize)> {
    pipeline::early_stop(&series, k).map_err(to_py)
}

/// The shipped benchmark configuration as JSON.
#[pyfunction]
fn default_benchmark_config() -> &'static str {
    BenchmarkConfig::shipped_json()
}

/// Runs the benchmark (shipped configuration unless `config_json` is given),
/// optionally writes the report bundle to `out`, and returns one dict per
/// seed and method.
#[pyfunction]
#[pyo3(signature = (config_json=None, out=None))]
fn run_benchmark(py: Python<'_>, config_json: Option<&str>, out: Option<PathBuf>) -> PyResult<Vec<Py<PyAny>>> {
    let config = match config_json {
        Some(text) => BenchmarkConfig::from_json(text).map_err(to_py)?,
        None => BenchmarkConfig::shipped(),
    };
    let result = py.detach(|| pipeline::run_benchmark(&config)).map_err(to_py)?;
    if let Some(dir) = out {
        pipeline::write_bundle(&result, &dir).map_err(to_py)?;
    }
    if let Some(failed) = result.seeds.iter().find(|s| !s.is_complete()) {
        return Err(PyValueError::new_err(format!(
            "seed {} failed: {}",
            failed.seed,
            failed.failure.as_deref().unwrap_or_default()
        )));
    }
    result
        .summary()
        .into_iter()
        .map(|row| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("seed", row.seed)?;
            d.set_item("method", row.method)?;
            d.set_item("main_model", row.main_model)?;
            d.set_item("ref_model", row.ref_model)?;
            d.set_item("best_checkpoint", row.best_checkpoint)?;
            d.set_item("stop_checkpoint", row.stop_checkpoint)?;
            d.set_item("charged_checkpoints", row.charged_checkpoints)?;
            d.set_item("best_hard_slice", row.best_hard_slice)?;
            d.set_item("last_hard_slice", row.last_hard_slice)?;
            d.set_item("best_id", row.best_id)?;
            d.set_item("relative_cost", row.relative_cost)?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

#[pymodule]
fn ftft(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDynamics>()?;
    m.add_class::<PyDataMap>()?;
    m.add_function(wrap_pyfunction!(build_map, m)?)?;
    m.add_function(wrap_pyfunction!(random_map, m)?)?;
    m.add_function(wrap_pyfunction!(sel_count, m)?)?;
    m.add_function(wrap_pyfunction!(ambiguous_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(median_trajectories, m)?)?;
    m.add_function(wrap_pyfunction!(relative_cost, m)?)?;
    m.add_function(wrap_pyfunction!(model_registry, m)?)?;
    m.add_function(wrap_pyfunction!(early_stop, m)?)?;
    m.add_function(wrap_pyfunction!(default_benchmark_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add("SCHEMA_VERSION", ftft_core::dynamics::SCHEMA_VERSION)?;
    m.add("MAP_SCHEMA_VERSION", cartography::MAP_SCHEMA_VERSION)?;
    Ok(())
}
