//! Python bindings: models, the equivalent chain, matrix analysis, censoring
//! and the verification suite. Reports come back as plain dicts and lists.

use emc_core::analysis;
use emc_core::censor::{self, CensorSet};
use emc_core::emc::{self, EmcChain, MarginalMode};
use emc_core::oracle::{self, DEFAULT_CAP};
use emc_core::process::{build_model, sample_ensemble, sample_trajectory, ModelSpec, ProcessModel, TrajectoryEnsemble};
use emc_core::scenarios::{self, SCENARIO_NAMES};
use emc_core::state::{ProbDist, StateSpace, StochasticMatrix, Trajectory};
use emc_core::verify::{self, VerifyOptions};
use emc_core::EmcError;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

create_exception!(
    emc_py,
    ModelError,
    PyException,
    "Invalid input (exit code 1 in the CLI)."
);
create_exception!(
    emc_py,
    HypothesisError,
    ModelError,
    "A structural precondition does not hold."
);
create_exception!(
    emc_py,
    SizeError,
    ModelError,
    "Exact enumeration would exceed the table cap."
);

fn err(e: EmcError) -> PyErr {
    match e {
        EmcError::Hypothesis { .. } => HypothesisError::new_err(e.to_string()),
        EmcError::Size { .. } => SizeError::new_err(e.to_string()),
        _ => ModelError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn report<'py, T: serde::Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(x).expect("report serializes"))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<StochasticMatrix> {
    StochasticMatrix::strict(rows).map_err(err)
}

fn dist(weights: Vec<f64>) -> PyResult<ProbDist> {
    ProbDist::normalized(&weights).map_err(err)
}

fn censor_set(members: Vec<usize>, n: usize) -> PyResult<CensorSet> {
    CensorSet::new(members, n).map_err(err)
}

/// A finite-state process model.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: ProcessModel,
}

#[pymethods]
impl PyModel {
    /// Built-in scenario by name; see `scenario_names()`.
    #[staticmethod]
    fn scenario(name: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: scenarios::scenario(name).map_err(err)?,
        })
    }

    /// Model from its JSON spec (the `kind`-tagged format).
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec = ModelSpec::from_json(text).map_err(err)?;
        Ok(PyModel {
            inner: build_model(&spec).map_err(err)?,
        })
    }

    #[staticmethod]
    fn memoryless(labels: Vec<String>, initial: Vec<f64>, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let space = StateSpace::new(labels).map_err(err)?;
        let inner = ProcessModel::memoryless(space, dist(initial)?, matrix(rows)?).map_err(err)?;
        Ok(PyModel { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_spec().to_json_pretty()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.space().labels().to_vec()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.to_spec().kind_name()
    }

    #[getter]
    fn is_markov(&self) -> bool {
        self.inner.is_markov()
    }

    #[getter]
    fn initial(&self) -> Vec<f64> {
        self.inner.initial().weights().to_vec()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    /// Law of the next state given the full history `x_0..x_t`.
    fn conditional_next(&self, history: Vec<usize>) -> PyResult<Vec<f64>> {
        let traj = Trajectory::new(history, self.inner.n()).map_err(err)?;
        Ok(self.inner.conditional_next(&traj).map_err(err)?.into_weights())
    }

    /// Same dynamics started from another law of `x_0`.
    fn with_initial(&self, weights: Vec<f64>) -> PyResult<Self> {
        Ok(PyModel {
            inner: self.inner.with_initial(&dist(weights)?).map_err(err)?,
        })
    }

    /// `x_0..x_horizon` as state indices.
    fn sample(&self, horizon: usize, seed: u64) -> Vec<usize> {
        sample_trajectory(&self.inner, horizon, seed).states().to_vec()
    }

    fn sample_ensemble(&self, horizon: usize, count: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
        let ens = sample_ensemble(&self.inner, horizon, count, seed).map_err(err)?;
        Ok(ens.trajectories.iter().map(|t| t.states().to_vec()).collect())
    }

    /// Exact marginals `π_0..π_T` by enumeration.
    #[pyo3(signature = (horizon, cap = DEFAULT_CAP))]
    fn exact_marginals(&self, horizon: usize, cap: u64) -> PyResult<Vec<Vec<f64>>> {
        let joint = oracle::joint_table(&self.inner, horizon, cap).map_err(err)?;
        (0..=horizon)
            .map(|t| oracle::marginal(&joint, t).map(ProbDist::into_weights).map_err(err))
            .collect()
    }

    /// History-dependence gap at time `t` with its witness.
    #[pyo3(signature = (t, cap = DEFAULT_CAP))]
    fn history_gap<'py>(&self, py: Python<'py>, t: usize, cap: u64) -> PyResult<Bound<'py, PyAny>> {
        let joint = oracle::joint_table(&self.inner, t + 1, cap).map_err(err)?;
        report(py, &oracle::history_gap(&joint, t).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?}, labels={:?})", self.kind(), self.labels())
    }
}

/// First-order equivalent Markov chain: initial law and one-step matrices.
#[pyclass(name = "Emc", frozen)]
struct PyEmc {
    inner: EmcChain,
    space: StateSpace,
}

#[pymethods]
impl PyEmc {
    /// Exact chain of `model` over `horizon` steps.
    #[staticmethod]
    #[pyo3(signature = (model, horizon, cap = DEFAULT_CAP))]
    fn build(model: &PyModel, horizon: usize, cap: u64) -> PyResult<Self> {
        Ok(PyEmc {
            inner: emc::build_emc(&model.inner, horizon, cap).map_err(err)?,
            space: model.inner.space().clone(),
        })
    }

    /// Chain estimated per time step from equal-length trajectories.
    #[staticmethod]
    #[pyo3(signature = (labels, trajectories, smoothing = 0.0))]
    fn estimate(labels: Vec<String>, trajectories: Vec<Vec<usize>>, smoothing: f64) -> PyResult<Self> {
        let ens = ensemble(labels, trajectories)?;
        let initial = ens.marginal(0).map_err(err)?;
        let chain = emc::estimate_schedule(&ens, smoothing)
            .and_then(|s| s.into_chain(initial))
            .map_err(err)?;
        Ok(PyEmc {
            inner: chain,
            space: ens.labels,
        })
    }

    #[getter]
    fn initial(&self) -> Vec<f64> {
        self.inner.initial().weights().to_vec()
    }

    #[getter]
    fn homogeneous(&self) -> bool {
        self.inner.schedule().is_homogeneous()
    }

    /// One matrix when homogeneous, else one per step.
    #[getter]
    fn matrices(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner
            .schedule()
            .matrices()
            .iter()
            .map(StochasticMatrix::rows)
            .collect()
    }

    #[getter]
    fn flagged(&self) -> Vec<(usize, Vec<usize>)> {
        self.inner.flagged_rows().into_iter().map(|f| (f.t, f.rows)).collect()
    }

    /// `π̃_t`.
    fn propagate(&self, t: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.propagate(t).map_err(err)?.into_weights())
    }

    fn to_model(&self) -> PyResult<PyModel> {
        Ok(PyModel {
            inner: self.inner.to_model(self.space.clone()).map_err(err)?,
        })
    }
}

fn ensemble(labels: Vec<String>, trajectories: Vec<Vec<usize>>) -> PyResult<TrajectoryEnsemble> {
    let space = StateSpace::new(labels).map_err(err)?;
    let n = space.len();
    let trajs = trajectories
        .into_iter()
        .map(|t| Trajectory::new(t, n))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    TrajectoryEnsemble::from_trajectories(space, trajs).map_err(err)
}

/// Parent marginals against the equivalent chain's; `mode` is `"exact"` or
/// `"monte-carlo"`.
#[pyfunction]
#[pyo3(signature = (model, horizon, mode = "exact", samples = 100_000, seed = 0, cap = DEFAULT_CAP))]
fn lemma1<'py>(
    py: Python<'py>,
    model: &PyModel,
    horizon: usize,
    mode: &str,
    samples: usize,
    seed: u64,
    cap: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mode = match mode {
        "exact" => MarginalMode::Exact,
        "monte-carlo" => MarginalMode::MonteCarlo { samples, seed },
        other => return Err(ModelError::new_err(format!("unknown mode {other:?}"))),
    };
    report(py, &emc::lemma1_report(&model.inner, horizon, mode, cap).map_err(err)?)
}

/// Pooled transition-count estimate from trajectories.
#[pyfunction]
#[pyo3(signature = (labels, trajectories, smoothing = 0.0))]
fn estimate_homogeneous<'py>(
    py: Python<'py>,
    labels: Vec<String>,
    trajectories: Vec<Vec<usize>>,
    smoothing: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let ens = ensemble(labels, trajectories)?;
    report(py, &emc::estimate_homogeneous(&ens, smoothing).map_err(err)?)
}

#[pyfunction]
fn structure<'py>(py: Python<'py>, rows: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    report(py, &analysis::structure(&matrix(rows)?))
}

/// Stationary law of an irreducible matrix.
#[pyfunction]
fn stationary(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(analysis::stationary(&matrix(rows)?).map_err(err)?.into_weights())
}

/// `TV(initial·Pᵗ, π)` for `t ≤ t_max`; needs an irreducible, aperiodic matrix.
#[pyfunction]
fn convergence<'py>(
    py: Python<'py>,
    initial: Vec<f64>,
    rows: Vec<Vec<f64>>,
    t_max: usize,
) -> PyResult<Bound<'py, PyAny>> {
    report(
        py,
        &analysis::convergence_profile(&dist(initial)?, &matrix(rows)?, t_max).map_err(err)?,
    )
}

#[pyfunction]
#[pyo3(signature = (model, horizon, cap = DEFAULT_CAP))]
fn identity_check<'py>(py: Python<'py>, model: &PyModel, horizon: usize, cap: u64) -> PyResult<Bound<'py, PyAny>> {
    report(
        py,
        &analysis::theorem1_identity_check(&model.inner, horizon, cap).map_err(err)?,
    )
}

/// Transition matrix of the chain watched on `members` (in sorted order).
#[pyfunction]
fn censored_matrix(rows: Vec<Vec<f64>>, members: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
    let p = matrix(rows)?;
    let a = censor_set(members, p.n())?;
    Ok(censor::censored_matrix(&p, &a).map_err(err)?.matrix.rows())
}

/// `π(x)/π(A)` on `A`, zero elsewhere.
#[pyfunction]
fn conditional_on(pi: Vec<f64>, members: Vec<usize>) -> PyResult<Vec<f64>> {
    let pi = dist(pi)?;
    let a = censor_set(members, pi.len())?;
    Ok(censor::conditional_on(&pi, &a).map_err(err)?.into_weights())
}

/// Indices and states of the visits of `trajectory` to `members`.
#[pyfunction]
fn a_hits(trajectory: Vec<usize>, members: Vec<usize>, n: usize) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let traj = Trajectory::new(trajectory, n).map_err(err)?;
    let h = censor::a_hits(&traj, &censor_set(members, n)?);
    Ok((h.times, h.states))
}

/// Empirical laws of the first `hits` A-hits started from `π_A`.
#[pyfunction]
#[pyo3(signature = (model, members, hits = 5, samples = 50_000, seed = 0, cap = DEFAULT_CAP))]
fn a_hit_check<'py>(
    py: Python<'py>,
    model: &PyModel,
    members: Vec<usize>,
    hits: usize,
    samples: usize,
    seed: u64,
    cap: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let a = censor_set(members, model.inner.n())?;
    report(
        py,
        &censor::a_hit_distribution_check(&model.inner, &a, hits, samples, seed, cap).map_err(err)?,
    )
}

/// All checks on a built-in scenario.
#[pyfunction]
#[pyo3(signature = (scenario, seed = 0, samples = None, cap = DEFAULT_CAP))]
fn verify_scenario<'py>(
    py: Python<'py>,
    scenario: &str,
    seed: u64,
    samples: Option<usize>,
    cap: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = VerifyOptions { seed, samples, cap };
    let r = py.detach(|| verify::verify_scenario(scenario, &opts)).map_err(err)?;
    report(py, &r)
}

#[pyfunction]
fn tv_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    emc_core::state::tv_distance(&dist(p)?, &dist(q)?).map_err(err)
}

#[pyfunction]
fn scenario_names() -> Vec<&'static str> {
    SCENARIO_NAMES.to_vec()
}

#[pymodule]
fn emc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("ModelError", py.get_type::<ModelError>())?;
    m.add("HypothesisError", py.get_type::<HypothesisError>())?;
    m.add("SizeError", py.get_type::<SizeError>())?;
    m.add("DEFAULT_CAP", DEFAULT_CAP)?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEmc>()?;
    m.add_function(wrap_pyfunction!(lemma1, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_homogeneous, m)?)?;
    m.add_function(wrap_pyfunction!(structure, m)?)?;
    m.add_function(wrap_pyfunction!(stationary, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(identity_check, m)?)?;
    m.add_function(wrap_pyfunction!(censored_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(conditional_on, m)?)?;
    m.add_function(wrap_pyfunction!(a_hits, m)?)?;
    m.add_function(wrap_pyfunction!(a_hit_check, m)?)?;
    m.add_function(wrap_pyfunction!(verify_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    Ok(())
}
