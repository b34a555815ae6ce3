//! Python bindings: `import steering`.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use steering_core::analysis::{analyze_with_curve, set_for_counts, XSource, DEFAULT_THRESHOLD};
use steering_core::geometry::{Direction, WernerState, BUILTIN_SETS};
use steering_core::simulator::{
    estimate_xk as core_estimate_xk, run_cheat_with_curve, run_honest, CheatConfig, CountsTable,
    HonestConfig, MisalignmentConfig,
};
use steering_core::{geometry, strategies, SteeringError};

fn to_py(e: SteeringError) -> PyErr {
    match e {
        SteeringError::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        SteeringError::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A set of measurement axes on the Bloch sphere.
#[pyclass(frozen, module = "steering")]
pub struct MeasurementSet {
    inner: geometry::MeasurementSet,
}

#[pymethods]
impl MeasurementSet {
    #[new]
    fn new(name: String, axes: Vec<[f64; 3]>) -> PyResult<Self> {
        let axes = axes
            .into_iter()
            .map(|[x, y, z]| Direction::normalized(x, y, z))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?;
        let inner = geometry::MeasurementSet::new(name, axes).map_err(to_py)?;
        Ok(MeasurementSet { inner })
    }

    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        let inner = geometry::MeasurementSet::builtin(name).map_err(to_py)?;
        Ok(MeasurementSet { inner })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn axes(&self) -> Vec<[f64; 3]> {
        self.inner.axes().iter().map(|u| u.to_array()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "MeasurementSet({:?}, n={})",
            self.inner.name(),
            self.inner.n()
        )
    }
}

#[pyfunction]
fn builtin_sets() -> Vec<&'static str> {
    BUILTIN_SETS.to_vec()
}

/// `D_n(m)` and the number of optimal ensemble members.
#[pyfunction]
fn deterministic_bound(set: &MeasurementSet, m: usize) -> PyResult<(f64, usize)> {
    let fam = strategies::deterministic_bound(&set.inner, m).map_err(to_py)?;
    Ok((fam.value, fam.p()))
}

/// `C_n(ε)` with its supporting mixture as `[(m, weight), ...]`.
#[pyfunction]
fn bound_at(set: &MeasurementSet, epsilon: f64) -> PyResult<(f64, Vec<(usize, f64)>)> {
    let (c, mixture) = strategies::bound_at(&set.inner, epsilon).map_err(to_py)?;
    let parts = mixture.components.iter().map(|c| (c.m, c.weight)).collect();
    Ok((c, parts))
}

/// Sampled `(ε, C_n(ε))` pairs, hull vertices included.
#[pyfunction]
#[pyo3(signature = (set, resolution = 100))]
fn bound_curve(set: &MeasurementSet, resolution: usize) -> PyResult<Vec<(f64, f64)>> {
    let curve = strategies::bound_curve(&set.inner).map_err(to_py)?;
    curve.sample(resolution).map_err(to_py)
}

#[pyfunction]
fn c_infinity(epsilon: f64) -> PyResult<f64> {
    strategies::c_infinity(epsilon).map_err(to_py)
}

/// Honest run; returns the counts document as JSON.
#[pyfunction]
#[pyo3(signature = (set, visibility, heralding, rounds, seed, bob_efficiency = 1.0))]
fn simulate_honest(
    py: Python<'_>,
    set: &MeasurementSet,
    visibility: f64,
    heralding: f64,
    rounds: u64,
    seed: u64,
    bob_efficiency: f64,
) -> PyResult<String> {
    let config = HonestConfig {
        set: set.inner.clone(),
        state: WernerState::new(visibility).map_err(to_py)?,
        alice_heralding: heralding,
        bob_efficiency,
        rounds,
        seed,
    };
    py.detach(|| run_honest(&config).and_then(|c| c.to_json_string()))
        .map_err(to_py)
}

/// Optimal cheating run; returns the counts document as JSON.
#[pyfunction]
#[pyo3(signature = (set, epsilon, rounds, seed, bob_efficiency = 1.0))]
fn simulate_cheat(
    py: Python<'_>,
    set: &MeasurementSet,
    epsilon: f64,
    rounds: u64,
    seed: u64,
    bob_efficiency: f64,
) -> PyResult<String> {
    let config = CheatConfig {
        set: set.inner.clone(),
        target_epsilon: epsilon,
        bob_efficiency,
        rounds,
        seed,
    };
    py.detach(|| {
        let curve = strategies::bound_curve(&config.set)?;
        run_cheat_with_curve(&config, &curve)?.to_json_string()
    })
    .map_err(to_py)
}

/// Analyzes a counts document; returns the report as JSON.
///
/// `x` is either one alignment bound for every setting or a list with one
/// value per setting.
#[pyfunction]
#[pyo3(signature = (counts, x = None, threshold = DEFAULT_THRESHOLD))]
fn analyze(
    py: Python<'_>,
    counts: &str,
    x: Option<Bound<'_, PyAny>>,
    threshold: f64,
) -> PyResult<String> {
    let source = match x {
        None => XSource::default(),
        Some(v) => match v.extract::<f64>() {
            Ok(c) => XSource::Constant(c),
            Err(_) => XSource::Values(v.extract::<Vec<f64>>()?),
        },
    };
    py.detach(|| {
        let table = CountsTable::from_json_str(counts)?;
        let set = set_for_counts(&table)?;
        let curve = strategies::bound_curve(&set)?;
        analyze_with_curve(&table, &curve, &set, &source, threshold)?.to_json_string()
    })
    .map_err(to_py)
}

/// Monte Carlo estimate of the per-setting alignment bounds `X_k`.
#[pyfunction]
#[pyo3(signature = (set, samples = None, seed = None))]
fn estimate_xk(
    py: Python<'_>,
    set: &MeasurementSet,
    samples: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Vec<f64>> {
    let mut config = MisalignmentConfig::default();
    if let Some(s) = samples {
        config.samples = s;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    py.detach(|| core_estimate_xk(&config, &set.inner))
        .map_err(to_py)
}

#[pymodule]
fn steering(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<MeasurementSet>()?;
    m.add_function(wrap_pyfunction!(builtin_sets, m)?)?;
    m.add_function(wrap_pyfunction!(deterministic_bound, m)?)?;
    m.add_function(wrap_pyfunction!(bound_at, m)?)?;
    m.add_function(wrap_pyfunction!(bound_curve, m)?)?;
    m.add_function(wrap_pyfunction!(c_infinity, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_honest, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_cheat, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_xk, m)?)?;
    Ok(())
}
