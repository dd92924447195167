//! Python bindings. Enumerations are passed as their lowercase names
//! (`"rmnk"`, `"tchebychef"`, `"univariate"`, ...) and structured values
//! cross the boundary as plain dicts and lists.

use iemoa_core::detection::{self, DetectionConfig, PreferenceStore};
use iemoa_core::emoa;
use iemoa_core::engine::{self, RunTrace};
use iemoa_core::learning::{self, RankModel};
use iemoa_core::mdm::{self, RankedSample, UtilityKind, UtilityModel as CoreUtility};
use iemoa_core::problems::{ActiveMask, Genome, ProblemInstance, ProblemKind, ProblemSpec};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: iemoa_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn json_of(obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_value<T: DeserializeOwned>(v: serde_json::Value) -> PyResult<T> {
    serde_json::from_value(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_name<T: DeserializeOwned>(name: &str) -> PyResult<T> {
    from_value(serde_json::Value::String(name.to_string()))
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Run configuration. Keyword arguments override the defaults; nested
/// sections (`problem`, `detection`, `variation`, `fit`) take dicts.
#[pyclass(name = "RunConfig", module = "iemoa")]
struct RunConfig {
    inner: engine::RunConfig,
}

#[pymethods]
impl RunConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(engine::RunConfig::default()).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        if let Some(o) = overrides {
            merge(&mut value, json_of(o.as_any())?);
        }
        let inner: engine::RunConfig = from_value(value)?;
        inner.validate().map_err(err)?;
        Ok(RunConfig { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: engine::RunConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(RunConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn interactions(&self) -> usize {
        self.inner.interactions
    }

    fn __repr__(&self) -> PyResult<String> {
        Ok(format!("RunConfig({})", self.to_json()?))
    }
}

#[pyclass(name = "Trace", module = "iemoa")]
struct Trace {
    inner: RunTrace,
}

#[pymethods]
impl Trace {
    #[getter]
    fn aborted(&self) -> bool {
        self.inner.aborted
    }

    /// One dict per interaction.
    #[getter]
    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.rows)
    }

    /// Rank models fitted at each interaction, as dicts.
    #[getter]
    fn models<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.models)
    }

    fn utilities(&self) -> Vec<f64> {
        self.inner.utilities()
    }

    #[getter]
    fn final_mask(&self) -> Option<Vec<usize>> {
        self.inner.final_row().map(|r| r.mask.indices().to_vec())
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }

    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }
}

/// Runs the engine against the machine decision maker. The GIL is released
/// for the duration of the run.
#[pyfunction]
fn run_machine(py: Python<'_>, config: &RunConfig) -> PyResult<Trace> {
    let cfg = config.inner.clone();
    let inner = py.detach(move || engine::run_machine(&cfg)).map_err(err)?;
    Ok(Trace { inner })
}

#[pyclass(name = "Problem", module = "iemoa")]
struct Problem {
    spec: ProblemSpec,
    inner: ProblemInstance,
}

#[pymethods]
impl Problem {
    #[new]
    #[pyo3(signature = (kind, m, k=None, rho=None, seed=None, n=None))]
    fn new(kind: &str, m: usize, k: Option<usize>, rho: Option<f64>, seed: Option<u64>, n: Option<usize>) -> PyResult<Self> {
        let kind: ProblemKind = parse_name(kind)?;
        let mut spec = match kind {
            ProblemKind::Rmnk => ProblemSpec::rmnk(m, k.unwrap_or(1), rho.unwrap_or(0.0), seed.unwrap_or(0)),
            other => ProblemSpec::dtlz(other, m),
        };
        spec.n = n;
        let inner = spec.build().map_err(err)?;
        Ok(Problem { spec, inner })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn is_binary(&self) -> bool {
        self.inner.is_binary()
    }

    #[getter]
    fn label(&self) -> String {
        self.spec.label()
    }

    /// Uniformly random genome: a list of bools for rmnk, floats otherwise.
    fn random_genome<'py>(&self, py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self.inner.random_genome(&mut rng) {
            Genome::Real(x) => x.into_pyobject(py).map(|o| o.into_any()),
            Genome::Binary(b) => b.into_pyobject(py).map(|o| o.into_any()),
        }
    }

    /// Full objective vector (to be minimized) of a genome.
    fn evaluate(&self, genome: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        let g = if self.inner.is_binary() {
            Genome::Binary(genome.extract()?)
        } else {
            Genome::Real(genome.extract()?)
        };
        self.inner.evaluate_full(&g).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Problem({})", self.spec.label())
    }
}

#[pyclass(name = "UtilityModel", module = "iemoa")]
struct UtilityModel {
    inner: CoreUtility,
}

#[pymethods]
impl UtilityModel {
    #[new]
    fn new(kind: &str, weights: Vec<f64>) -> PyResult<Self> {
        let kind: UtilityKind = parse_name(kind)?;
        Ok(UtilityModel {
            inner: CoreUtility::new(kind, weights).map_err(err)?,
        })
    }

    /// Default decision maker for a problem.
    #[staticmethod]
    #[pyo3(signature = (problem, kind="tchebychef"))]
    fn default_for(problem: &Problem, kind: &str) -> PyResult<Self> {
        let kind: UtilityKind = parse_name(kind)?;
        Ok(UtilityModel {
            inner: CoreUtility::default_for(&problem.spec, kind).map_err(err)?,
        })
    }

    /// Copy that drifts by `gamma` from interaction `at` onwards.
    fn with_drift(&self, gamma: f64, at: usize) -> PyResult<Self> {
        Ok(UtilityModel {
            inner: self.inner.clone().with_drift(gamma, at).map_err(err)?,
        })
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    /// Objectives with non-zero weight at `interaction`.
    #[pyo3(signature = (interaction=0))]
    fn relevant(&self, interaction: usize) -> Vec<usize> {
        self.inner.at_interaction(interaction).effective_relevant()
    }

    /// Cost of an objective vector (lower is better).
    #[pyo3(signature = (objectives, interaction=0))]
    fn utility(&self, objectives: Vec<f64>, interaction: usize) -> PyResult<f64> {
        self.inner.at_interaction(interaction).utility(&objectives).map_err(err)
    }

    /// Best-first ordering of candidate indices.
    #[pyo3(signature = (candidates, interaction=0))]
    fn order(&self, candidates: Vec<Vec<f64>>, interaction: usize) -> PyResult<Vec<usize>> {
        mdm::preference_order(&self.inner, &candidates, interaction).map_err(err)
    }
}

/// Accumulated ranked samples.
#[pyclass(name = "PreferenceStore", module = "iemoa")]
#[derive(Default)]
struct Preferences {
    inner: PreferenceStore,
}

#[pymethods]
impl Preferences {
    #[new]
    fn new() -> Self {
        Preferences::default()
    }

    /// Adds candidates ranked by a best-first list of their indices.
    #[pyo3(signature = (candidates, order, interaction=0))]
    fn push(&mut self, candidates: Vec<Vec<f64>>, order: Vec<usize>, interaction: usize) -> PyResult<()> {
        let sample = RankedSample::from_order(&candidates, &order, interaction).map_err(err)?;
        if let Some(m) = self.inner.m() {
            if sample.records[0].objectives.len() != m {
                return Err(err(iemoa_core::Error::DimensionMismatch {
                    expected: m,
                    got: sample.records[0].objectives.len(),
                }));
            }
        }
        self.inner.push(sample);
        Ok(())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "RankModel", module = "iemoa")]
struct Model {
    inner: RankModel,
}

#[pymethods]
impl Model {
    #[getter]
    fn features(&self) -> Vec<usize> {
        self.inner.feature_indices.clone()
    }

    /// Weights on the original objective scale.
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.destandardized_weights()
    }

    /// Score of a full objective vector; lower means more preferred.
    fn score(&self, objectives: Vec<f64>) -> PyResult<f64> {
        self.inner.score(&objectives).map_err(err)
    }

    /// Pairwise Kendall tau on the training samples.
    fn training_tau(&self, store: &Preferences) -> PyResult<f64> {
        self.inner.training_tau(&store.inner).map_err(err)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

/// Fits the pairwise rank model on the given objective indices (all when
/// omitted).
#[pyfunction]
#[pyo3(signature = (store, features=None))]
fn fit(store: &Preferences, features: Option<Vec<usize>>) -> PyResult<Model> {
    let m = store.inner.m().ok_or_else(|| err(iemoa_core::Error::EmptyPreferences))?;
    let features = features.unwrap_or_else(|| (0..m).collect());
    Ok(Model {
        inner: learning::fit(&store.inner, &features).map_err(err)?,
    })
}

/// Detects relevant objectives. Returns a dict with `relevant`, `scores`
/// and `update_needed`.
#[pyfunction]
#[pyo3(signature = (store, method="univariate", mask=None, tau=0.5, min_active=2))]
fn detect<'py>(
    py: Python<'py>,
    store: &Preferences,
    method: &str,
    mask: Option<Vec<usize>>,
    tau: f64,
    min_active: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let m = store.inner.m().ok_or_else(|| err(iemoa_core::Error::EmptyPreferences))?;
    let cfg = DetectionConfig {
        method: parse_name(method)?,
        tau,
        min_active,
        ..DetectionConfig::default()
    };
    cfg.validate().map_err(err)?;
    let mask = match mask {
        Some(ix) => ActiveMask::new(ix, m).map_err(err)?,
        None => ActiveMask::all(m),
    };
    let outcome = detection::detect(&cfg, &store.inner, &mask).map_err(err)?;
    to_py(py, &outcome)
}

/// Fronts of a set of objective vectors under minimization, best first.
#[pyfunction]
fn nondominated_sort(points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<usize>>> {
    emoa::nondominated_sort_points(&points).map_err(err)
}

/// `1 - cost / reference_cost`.
#[pyfunction]
fn reported_utility(cost: f64, reference_cost: f64) -> f64 {
    mdm::reported_utility(cost, reference_cost)
}

#[pymodule]
fn iemoa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RunConfig>()?;
    m.add_class::<Trace>()?;
    m.add_class::<Problem>()?;
    m.add_class::<UtilityModel>()?;
    m.add_class::<Preferences>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(run_machine, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(nondominated_sort, m)?)?;
    m.add_function(wrap_pyfunction!(reported_utility, m)?)?;
    Ok(())
}
