//! Python bindings. Arrays cross the boundary as nested lists of floats.

use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bcdiff::config::{parse_override, TrainConfig};
use bcdiff::sampling::{self, SamplerConfig, SamplerMode};
use bcdiff::training::TrainState;
use bcdiff::{boundary, checkpoint, trajectory, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged rows"));
    }
    Ok(Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).expect("checked shape"))
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "Schedule", frozen)]
struct PySchedule(bcdiff::Schedule);

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (kind, steps, sigma0=None, sigma_t=None))]
    fn new(kind: &str, steps: usize, sigma0: Option<f64>, sigma_t: Option<f64>) -> PyResult<Self> {
        let kind: bcdiff::ScheduleKind = kind.parse().map_err(to_py)?;
        let s = match kind {
            bcdiff::ScheduleKind::Ve => bcdiff::Schedule::ve(
                steps,
                sigma0.unwrap_or(bcdiff::schedules::VE_SIGMA0),
                sigma_t.unwrap_or(bcdiff::schedules::VE_SIGMA_T),
            ),
            k => bcdiff::Schedule::new(k, steps),
        };
        s.map(Self).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().as_str()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    /// `(u, v)` at a grid step.
    fn coeff(&self, t: usize) -> PyResult<(f64, f64)> {
        self.0.coeff(t).map_err(to_py)
    }

    fn coeff_at(&self, tau: f64) -> (f64, f64) {
        self.0.coeff_at(tau)
    }
}

#[pyclass(name = "EmbeddingTable", frozen)]
struct PyTable(bcdiff::EmbeddingTable);

#[pymethods]
impl PyTable {
    #[new]
    #[pyo3(signature = (weights, trainable=false))]
    fn new(weights: Vec<Vec<f64>>, trainable: bool) -> PyResult<Self> {
        bcdiff::EmbeddingTable::new(matrix(weights)?, trainable).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (states, dim, seed=0))]
    fn random(states: usize, dim: usize, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        bcdiff::EmbeddingTable::random(states, dim, false, &mut rng).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn binary_bits() -> Self {
        Self(bcdiff::EmbeddingTable::binary_bits())
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.0.num_states()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn weights(&self) -> Vec<Vec<f64>> {
        rows(self.0.weights())
    }

    fn embed(&self, indices: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        self.0.embed(&indices).map(|a| rows(&a)).map_err(to_py)
    }

    fn round(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        Ok(self.0.round_to_discrete(matrix(x)?.view()))
    }
}

/// Boundary estimate for embedded data `x0` with states `labels` and noise `eps`.
/// Returns a dict of per-element lists.
#[pyfunction]
fn estimate_boundary<'py>(
    py: Python<'py>,
    x0: Vec<Vec<f64>>,
    labels: Vec<usize>,
    eps: Vec<Vec<f64>>,
    table: &PyTable,
    schedule: &PySchedule,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let (x0, eps) = (matrix(x0)?, matrix(eps)?);
    let est = boundary::estimate(x0.view(), &labels, eps.view(), &table.0, &schedule.0).map_err(to_py)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("t0", est.t0)?;
    d.set_item("u_t0", est.u_t0)?;
    d.set_item("v_t0", est.v_t0)?;
    d.set_item("j_star", est.j_star)?;
    d.set_item("masked", est.masked)?;
    Ok(d)
}

/// Rescaled noisy point at nominal time `t`; returns `(x_tilde, tau)`.
#[pyfunction]
fn forward_sample(
    x0: Vec<Vec<f64>>,
    labels: Vec<usize>,
    eps: Vec<Vec<f64>>,
    t: f64,
    table: &PyTable,
    schedule: &PySchedule,
    r: f64,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let (x0, eps) = (matrix(x0)?, matrix(eps)?);
    let p = trajectory::forward_sample(x0.view(), &labels, eps.view(), t, &schedule.0, &table.0, r).map_err(to_py)?;
    Ok((rows(&p.x_tilde), p.tau))
}

/// Trained model state, created by `train` or `load`.
#[pyclass(name = "Model")]
struct PyModel(TrainState);

#[pymethods]
impl PyModel {
    /// Trains from defaults plus `key=value` overrides.
    #[staticmethod]
    #[pyo3(signature = (overrides=Vec::new()))]
    fn train(py: Python<'_>, overrides: Vec<String>) -> PyResult<Self> {
        let mut cfg = TrainConfig::default();
        for o in &overrides {
            let (k, v) = parse_override(o).map_err(to_py)?;
            cfg.set(&k, &v).map_err(to_py)?;
        }
        cfg.validate().map_err(to_py)?;
        let (state, _) = py.detach(|| bcdiff::training::train(&cfg, None)).map_err(to_py)?;
        Ok(Self(state))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        checkpoint::load(path.as_ref()).map(Self).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.0, path.as_ref()).map_err(to_py)
    }

    #[getter]
    fn step(&self) -> usize {
        self.0.step
    }

    #[getter]
    fn config(&self) -> String {
        self.0.config.to_toml()
    }

    /// Deterministic (or Gaussian) samples as state sequences.
    #[pyo3(signature = (count, length, steps=20, r=None, alteration=true, gaussian=false, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn sample(
        &self,
        py: Python<'_>,
        count: usize,
        length: usize,
        steps: usize,
        r: Option<f64>,
        alteration: bool,
        gaussian: bool,
        seed: u64,
    ) -> PyResult<Vec<Vec<usize>>> {
        let s = &self.0;
        let mut sc = SamplerConfig::equal(s.schedule.steps(), steps, r.unwrap_or(s.config.r)).map_err(to_py)?;
        sc.alteration = alteration;
        if gaussian {
            sc.mode = SamplerMode::Gaussian;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = py
            .detach(|| sampling::sample(&s.net, &s.table, &s.schedule, &sc, count, length, &mut rng))
            .map_err(to_py)?;
        Ok(out.states)
    }
}

#[pymodule]
fn bcdiff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyTable>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(estimate_boundary, m)?)?;
    m.add_function(wrap_pyfunction!(forward_sample, m)?)?;
    Ok(())
}
