//! Python bindings: environments, experts, learners and the experiment runner.

use std::path::PathBuf;
use std::sync::Arc;

use leap_core::analysis::{evaluate_performance, realizability_gap_exact, recoverability, EvalMethod, Scope};
use leap_core::config::ExperimentConfig;
use leap_core::env::worlds::build_tiger_with;
use leap_core::env::{
    belief_from_history, build_hidden_object_world_with, fully_observed, HistoryKey, ObjectWorldParams, PomdpSpec,
    TigerParams, DEFAULT_HISTORY_CAP,
};
use leap_core::expert::{self, solve_privileged, ExpertBundle};
use leap_core::learn::{collect_demos, leap_run_with, AnalysisConfig, CorrectionDataset, LeapConfig, TeacherKind};
use leap_core::policy::TabularHistoryPolicy;
use leap_core::runner::{load_experiment, run_experiment};
use leap_core::{math, LeapError};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: LeapError) -> PyErr {
    match e {
        LeapError::InvalidArgument(_)
        | LeapError::ContractViolation(_)
        | LeapError::Config(_)
        | LeapError::InconsistentEvidence(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

fn from_json_text<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn history(entries: Vec<u32>) -> PyResult<HistoryKey> {
    HistoryKey::from_entries(entries).map_err(to_py)
}

/// A finite-horizon tabular POMDP.
#[pyclass(name = "Pomdp", module = "leap_sim", frozen)]
pub struct PyPomdp {
    spec: Arc<PomdpSpec>,
}

impl PyPomdp {
    fn wrap(spec: PomdpSpec) -> Self {
        PyPomdp { spec: Arc::new(spec) }
    }

    fn bundle(&self) -> PyResult<ExpertBundle> {
        ExpertBundle::new(self.spec.clone(), 0.0).map_err(to_py)
    }
}

#[pymethods]
impl PyPomdp {
    #[staticmethod]
    #[pyo3(signature = (horizon, accuracy=0.85, listen_cost=-1.0, correct_reward=10.0, wrong_penalty=-100.0))]
    fn tiger(
        horizon: usize,
        accuracy: f64,
        listen_cost: f64,
        correct_reward: f64,
        wrong_penalty: f64,
    ) -> PyResult<Self> {
        let params = TigerParams { accuracy, listen_cost, correct_reward, wrong_penalty, horizon };
        build_tiger_with(params).map(Self::wrap).map_err(to_py)
    }

    /// One location per prior weight.
    #[staticmethod]
    #[pyo3(signature = (prior_weights, horizon, move_cost=0.1, deliver_reward=10.0, detection=1.0))]
    fn hidden_object_world(
        prior_weights: Vec<f64>,
        horizon: usize,
        move_cost: f64,
        deliver_reward: f64,
        detection: f64,
    ) -> PyResult<Self> {
        let params = ObjectWorldParams {
            num_locations: prior_weights.len(),
            prior_weights,
            horizon,
            move_cost,
            deliver_reward,
            detection,
        };
        build_hidden_object_world_with(&params).map(Self::wrap).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        PomdpSpec::from_json(text).map(Self::wrap).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.spec.to_json().map_err(to_py)
    }

    /// The same dynamics with the state revealed by every observation.
    fn fully_observed(&self) -> PyResult<Self> {
        fully_observed(&self.spec).map(Self::wrap).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.spec.name.clone()
    }
    #[getter]
    fn num_states(&self) -> usize {
        self.spec.num_states
    }
    #[getter]
    fn num_actions(&self) -> usize {
        self.spec.num_actions
    }
    #[getter]
    fn num_observations(&self) -> usize {
        self.spec.num_observations
    }
    #[getter]
    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    /// Posterior over states after the flat history `[o1, a1, o2, ...]`.
    fn belief(&self, history_entries: Vec<u32>) -> PyResult<Vec<f64>> {
        let b = belief_from_history(&self.spec, &history(history_entries)?).map_err(to_py)?;
        Ok(b.probs)
    }

    /// `(q[t][s][a], v[t][s])` of the privileged expert, 0-based in `t`.
    fn privileged_values(&self) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
        let tables = solve_privileged(&self.spec);
        (tables.q, tables.v)
    }

    fn expert_value(&self) -> f64 {
        solve_privileged(&self.spec).expected_value(&self.spec)
    }

    /// Privileged and belief-marginal expert distributions at a history and state.
    fn expert_distributions(&self, history_entries: Vec<u32>, state: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let h = history(history_entries)?;
        self.spec.check_state(state).map_err(to_py)?;
        let bundle = self.bundle()?;
        let q = bundle.nonprivileged().distribution(&h).map_err(to_py)?;
        Ok((bundle.privileged_dist(h.t(), state).to_vec(), q))
    }

    #[pyo3(signature = (scope="all"))]
    fn recoverability(&self, scope: &str) -> PyResult<f64> {
        let scope = match scope {
            "all" => Scope::All,
            "reachable" => Scope::Reachable,
            other => return Err(PyValueError::new_err(format!("unknown scope {other:?}"))),
        };
        Ok(recoverability(&self.spec, &solve_privileged(&self.spec), scope))
    }

    /// Exact realizability gap of a teacher given as a dict such as
    /// `{"kind": "constrained", "delta": 0.1}`.
    #[pyo3(signature = (teacher, history_cap=DEFAULT_HISTORY_CAP))]
    fn realizability_gap(&self, teacher: &Bound<'_, PyAny>, history_cap: usize) -> PyResult<f64> {
        let kind: TeacherKind = serde_json::from_str(&to_json_text(teacher)?).map_err(json_err)?;
        let kind = match kind {
            TeacherKind::SelfTeacher => {
                return Err(PyValueError::new_err("the self teacher depends on a correction dataset"))
            }
            other => other.resolve(&CorrectionDataset::new(self.spec.num_actions, Vec::new()).map_err(to_py)?),
        }
        .map_err(to_py)?;
        realizability_gap_exact(&self.bundle()?, &kind, history_cap).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let s = &self.spec;
        format!(
            "Pomdp({:?}, states={}, actions={}, observations={}, horizon={})",
            s.name, s.num_states, s.num_actions, s.num_observations, s.horizon
        )
    }
}

/// A tabular softmax policy over truncated histories.
#[pyclass(name = "Policy", module = "leap_sim", frozen)]
pub struct PyPolicy {
    policy: Arc<TabularHistoryPolicy>,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let policy = TabularHistoryPolicy::from_json(text).map_err(to_py)?;
        Ok(PyPolicy { policy: Arc::new(policy) })
    }

    fn to_json(&self) -> PyResult<String> {
        self.policy.to_json().map_err(to_py)
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.policy.num_actions()
    }
    #[getter]
    fn truncation_window(&self) -> usize {
        self.policy.truncation_window()
    }
    #[getter]
    fn num_keys(&self) -> usize {
        self.policy.num_keys()
    }

    fn action_distribution(&self, history_entries: Vec<u32>) -> PyResult<Vec<f64>> {
        Ok(self.policy.action_distribution(&history(history_entries)?))
    }

    /// Exact evaluation when `episodes` is None, Monte Carlo otherwise.
    #[pyo3(signature = (pomdp, episodes=None, seed=0))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        pomdp: &PyPomdp,
        episodes: Option<usize>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let method = match episodes {
            None => EvalMethod::Exact { cap: DEFAULT_HISTORY_CAP },
            Some(episodes) => EvalMethod::MonteCarlo { root_seed: seed, episodes },
        };
        let perf = evaluate_performance(&pomdp.spec, self.policy.as_ref(), method).map_err(to_py)?;
        from_json_text(py, &serde_json::to_string(&perf).map_err(json_err)?)
    }
}

/// Snapshots, metrics and expert value of one learning run.
#[pyclass(name = "LeapResult", module = "leap_sim", frozen)]
pub struct PyLeapResult {
    #[pyo3(get)]
    report: Py<PyAny>,
    #[pyo3(get)]
    performance: Py<PyAny>,
    #[pyo3(get)]
    expert_j: f64,
    #[pyo3(get)]
    best_iteration: usize,
    snapshots: Vec<Arc<TabularHistoryPolicy>>,
}

#[pymethods]
impl PyLeapResult {
    /// `π_0, π_1, …, π_N`.
    #[getter]
    fn snapshots(&self) -> Vec<PyPolicy> {
        self.snapshots.iter().map(|p| PyPolicy { policy: p.clone() }).collect()
    }
}

#[pyfunction]
fn kl(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    check_pair(&p, &q)?;
    Ok(math::kl(&p, &q))
}

fn check_pair(p: &[f64], q: &[f64]) -> PyResult<()> {
    math::check_distribution(p, p.len(), "p").map_err(to_py)?;
    math::check_distribution(q, p.len(), "q").map_err(to_py)
}

/// KL projection of `p` into the ball `KL(· ‖ q) ≤ delta`.
#[pyfunction]
fn constrained_expert(p: Vec<f64>, q: Vec<f64>, delta: f64) -> PyResult<Vec<f64>> {
    check_pair(&p, &q)?;
    if !(delta >= 0.0) {
        return Err(PyValueError::new_err("delta must be non-negative"));
    }
    Ok(expert::constrained_expert(&p, &q, delta))
}

/// `∝ p^(1−alpha) q^alpha`.
#[pyfunction]
fn geometric_point(p: Vec<f64>, q: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    check_pair(&p, &q)?;
    Ok(expert::geometric_point(&p, &q, alpha))
}

/// Sampling law `∝ p · q^lambda` of the penalty correction.
#[pyfunction]
fn penalty_law(p: Vec<f64>, q: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    check_pair(&p, &q)?;
    Ok(expert::penalty_law(&p, &q, lam))
}

/// Runs the learner on `pomdp`. `config` holds the `[leap]` keys and
/// `analysis` the `[analysis]` keys of an experiment file.
#[pyfunction]
#[pyo3(signature = (pomdp, config, analysis=None))]
fn leap_run(
    py: Python<'_>,
    pomdp: &PyPomdp,
    config: &Bound<'_, PyDict>,
    analysis: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyLeapResult> {
    let config: LeapConfig = serde_json::from_str(&to_json_text(config.as_any())?).map_err(json_err)?;
    let analysis: AnalysisConfig = match analysis {
        Some(a) => serde_json::from_str(&to_json_text(a.as_any())?).map_err(json_err)?,
        None => AnalysisConfig::default(),
    };
    config.validate().map_err(to_py)?;
    analysis.validate().map_err(to_py)?;
    let spec = pomdp.spec.clone();
    let outcome = py
        .detach(move || {
            let bundle = ExpertBundle::new(spec.clone(), config.expert_temperature)?;
            let demos = collect_demos(&bundle, config.num_demos, config.root_seed)?;
            let dataset = CorrectionDataset::new(spec.num_actions, demos)?;
            leap_run_with(&spec, &config, &analysis, dataset)
        })
        .map_err(to_py)?;
    Ok(PyLeapResult {
        report: from_json_text(py, &outcome.report.to_json().map_err(to_py)?)?.unbind(),
        performance: from_json_text(py, &serde_json::to_string(&outcome.performance).map_err(json_err)?)?.unbind(),
        expert_j: outcome.expert_j,
        best_iteration: outcome.report.selection.best_iteration,
        snapshots: outcome.snapshots.iter().map(|s| s.policy.clone()).collect(),
    })
}

/// Runs an experiment file as the command-line tool does and returns its
/// metrics report.
#[pyfunction]
#[pyo3(signature = (path, out=None, seed=None))]
fn run_config<'py>(
    py: Python<'py>,
    path: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(move || {
            let (config, spec): (ExperimentConfig, PomdpSpec) = load_experiment(&path, out.as_deref(), seed)?;
            run_experiment(&config, &spec)?.report().to_json()
        })
        .map_err(to_py)?;
    from_json_text(py, &report)
}

#[pymodule]
fn leap_sim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPomdp>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyLeapResult>()?;
    m.add_function(wrap_pyfunction!(kl, m)?)?;
    m.add_function(wrap_pyfunction!(constrained_expert, m)?)?;
    m.add_function(wrap_pyfunction!(geometric_point, m)?)?;
    m.add_function(wrap_pyfunction!(penalty_law, m)?)?;
    m.add_function(wrap_pyfunction!(leap_run, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_runs_a_small_experiment() {
        Python::attach(|py| {
            let pomdp = PyPomdp::tiger(3, 0.85, -1.0, 10.0, -100.0).unwrap();
            let config = PyDict::new(py);
            config.set_item("num_iterations", 1).unwrap();
            config.set_item("rollouts_per_iteration", 8).unwrap();
            config.set_item("num_demos", 8).unwrap();
            config.set_item("root_seed", 2).unwrap();
            let result = leap_run(py, &pomdp, &config, None).unwrap();
            assert_eq!(result.snapshots().len(), 2);
            let rows = result.report.bind(py).get_item("rows").unwrap();
            assert_eq!(rows.len().unwrap(), 2);
            assert!((result.expert_j - pomdp.expert_value()).abs() < 1e-12);
        });
    }

    #[test]
    fn errors_become_value_errors() {
        Python::attach(|py| {
            let err = PyPomdp::tiger(3, 0.3, -1.0, 10.0, -100.0).err().unwrap();
            assert!(err.is_instance_of::<PyValueError>(py));
            let err = constrained_expert(vec![0.5, 0.5], vec![0.2, 0.9], 0.1).unwrap_err();
            assert!(err.is_instance_of::<PyValueError>(py));
        });
    }

    #[test]
    fn projection_endpoints() {
        let (p, q) = (vec![0.7, 0.2, 0.1], vec![0.2, 0.3, 0.5]);
        assert_eq!(constrained_expert(p.clone(), q.clone(), 0.0).unwrap(), q);
        assert_eq!(constrained_expert(p.clone(), q.clone(), 10.0).unwrap(), p);
    }
}
