//! Python bindings for `setgen`.
//!
//! Result records come back as plain dicts built from their serde form.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use setgen::bounds::{self, ChannelSpec as CoreChannel, Figure, LossExponent};
use setgen::cli::YieldSpec;
use setgen::fock::{self, ArmParams as CoreArm};
use setgen::search::SearchConfig;
use setgen::state::{self, SingleErrorState as CoreState};
use setgen::yields::{self, YieldFunction};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
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
            for it in items {
                list.append(to_py(py, it)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, it) in map {
                d.set_item(k, to_py(py, it)?)?;
            }
            d.into_any()
        }
    })
}

fn record<'py, T: Serialize>(py: Python<'py>, t: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(t).map_err(err)?)
}

/// Two-qubit state supported on span{|00>, |11>}.
#[pyclass(frozen, skip_from_py_object, name = "SingleErrorState")]
#[derive(Clone)]
struct PyState(CoreState);

#[pymethods]
impl PyState {
    #[new]
    fn new(zeta: f64, chi: f64, upsilon: f64) -> PyResult<Self> {
        CoreState::new(zeta, chi, upsilon).map(Self).map_err(err)
    }

    #[getter]
    fn zeta(&self) -> f64 {
        self.0.zeta
    }
    #[getter]
    fn chi(&self) -> f64 {
        self.0.chi
    }
    #[getter]
    fn upsilon(&self) -> f64 {
        self.0.upsilon
    }

    /// `(z, x)` of the equivalent standard form.
    fn standard_form(&self) -> PyResult<(f64, f64)> {
        let (sf, _) = state::to_standard_form(&self.0).map_err(err)?;
        Ok((sf.z, sf.x))
    }

    fn singlet_fraction(&self) -> PyResult<f64> {
        let (sf, _) = state::to_standard_form(&self.0).map_err(err)?;
        Ok(state::singlet_fraction(&sf))
    }

    /// 4x4 density matrix as nested lists of complex numbers.
    fn density(&self) -> Vec<Vec<num_complex_py::C>> {
        let m = state::density_of(&self.0);
        let e = m.entries();
        (0..4)
            .map(|r| (0..4).map(|c| num_complex_py::C(e[(r, c)].re, e[(r, c)].im)).collect())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "SingleErrorState(zeta={}, chi={}, upsilon={})",
            self.0.zeta, self.0.chi, self.0.upsilon
        )
    }
}

mod num_complex_py {
    use pyo3::prelude::*;
    use pyo3::types::PyComplex;

    pub struct C(pub f64, pub f64);

    impl<'py> IntoPyObject<'py> for C {
        type Target = PyComplex;
        type Output = Bound<'py, PyComplex>;
        type Error = std::convert::Infallible;
        fn into_pyobject(self, py: Python<'py>) -> Result<Self::Output, Self::Error> {
            Ok(PyComplex::from_doubles(py, self.0, self.1))
        }
    }
}

/// Yield function parsed from `ed`, `linear:C`, `power:K`, `pwl:B:S,...` or `sqrt`.
#[pyclass(frozen, skip_from_py_object, name = "Yield")]
struct PyYield {
    spec: String,
    inner: Box<dyn YieldFunction>,
}

#[pymethods]
impl PyYield {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        let parsed = YieldSpec::parse(spec).map_err(PyValueError::new_err)?;
        Ok(Self {
            spec: spec.to_string(),
            inner: parsed.build(),
        })
    }

    fn __call__(&self, z: f64, x: f64) -> f64 {
        self.inner.eval(z, x)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name()
    }

    fn __repr__(&self) -> String {
        format!("Yield({:?})", self.spec)
    }
}

/// Lossy channel: one arm, or two arms meeting at a middle station.
#[pyclass(frozen, skip_from_py_object, name = "Channel")]
#[derive(Clone)]
struct PyChannel(CoreChannel);

#[pymethods]
impl PyChannel {
    #[staticmethod]
    fn point_to_point(t: f64) -> PyResult<Self> {
        CoreChannel::point_to_point(t).map(Self).map_err(err)
    }

    #[staticmethod]
    fn three_party(ta: f64, tb: f64) -> PyResult<Self> {
        CoreChannel::three_party(ta, tb).map(Self).map_err(err)
    }

    fn loss_exponent(&self) -> PyResult<f64> {
        bounds::loss_exponent(&self.0).map(|g| g.value()).map_err(err)
    }

    fn capacity(&self) -> PyResult<f64> {
        bounds::capacity(&self.0).map_err(err)
    }

    fn ed_max(&self) -> PyResult<f64> {
        bounds::ed_max(&self.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// Pulse and source parameters for one arm.
#[pyclass(frozen, skip_from_py_object, name = "ArmParams")]
#[derive(Clone)]
struct PyArm(CoreArm);

#[pymethods]
impl PyArm {
    #[new]
    #[pyo3(signature = (alpha, theta, t, dim=64, q0=0.5, phases=(0.0, 0.0)))]
    fn new(alpha: f64, theta: f64, t: f64, dim: usize, q0: f64, phases: (f64, f64)) -> Self {
        let mut p = CoreArm::balanced(alpha, theta, t, dim);
        p.q0 = q0;
        p.phases = phases;
        Self(p)
    }

    /// Pulse giving received overlap `u` through transmittance `t`.
    #[staticmethod]
    #[pyo3(signature = (u, t, dim=64))]
    fn for_overlap(u: f64, t: f64, dim: usize) -> PyResult<Self> {
        CoreArm::for_overlap(u, t, dim).map(Self).map_err(err)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }
    #[getter]
    fn t(&self) -> f64 {
        self.0.t
    }
    #[getter]
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// `max_u Y(u^gamma, 0)(1 - u)`; returns a dict with `u_star` and `value`.
#[pyfunction]
fn optimum<'py>(py: Python<'py>, y: &PyYield, gamma: f64) -> PyResult<Bound<'py, PyAny>> {
    let g = LossExponent::new(gamma).map_err(err)?;
    record(py, &bounds::optimum(&y.inner, g))
}

#[pyfunction]
fn simulate_p2p<'py>(py: Python<'py>, arm: &PyArm) -> PyResult<Bound<'py, PyAny>> {
    record(py, &fock::simulate_p2p(&arm.0).map_err(err)?)
}

#[pyfunction]
fn simulate_three_party<'py>(py: Python<'py>, a: &PyArm, b: &PyArm) -> PyResult<Bound<'py, PyAny>> {
    record(py, &fock::simulate_three_party(&a.0, &b.0).map_err(err)?)
}

/// Trace distance between dephasing before and after the measurement.
#[pyfunction]
fn dephasing_equivalence(arm: &PyArm) -> PyResult<f64> {
    fock::dephasing_equivalence_check(&arm.0).map_err(err)
}

/// Random-restart search over separable protocols at overlap `s`, dephasing `v`.
#[pyfunction]
#[pyo3(signature = (y, s, v, outcomes=4, restarts=64, iterations=2000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn search<'py>(
    py: Python<'py>,
    y: &PyYield,
    s: f64,
    v: f64,
    outcomes: usize,
    restarts: usize,
    iterations: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = SearchConfig {
        outcomes,
        restarts,
        iterations,
        seed,
        ..SearchConfig::default()
    };
    let r = py.detach(|| setgen::search::search(&y.inner, s, v, &cfg)).map_err(err)?;
    record(py, &r)
}

#[pyfunction]
#[pyo3(signature = (y, grid=41, segments=2000, seed=0))]
fn check_yield<'py>(
    py: Python<'py>,
    y: &PyYield,
    grid: usize,
    segments: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    record(py, &yields::verify_yield_contract(&y.inner, grid, segments, seed).map_err(err)?)
}

/// Figure curves as a list of `(t, curve, value)` tuples.
#[pyfunction]
fn curves(figure: &str, ts: Vec<f64>) -> PyResult<Vec<(f64, String, f64)>> {
    let fig: Figure = figure.parse().map_err(PyValueError::new_err)?;
    let table = bounds::figure_curves(fig, &ts).map_err(err)?;
    Ok(table.rows.into_iter().map(|r| (r.t, r.curve, r.value)).collect())
}

#[pyfunction]
fn ed_eval(z: f64, x: f64) -> PyResult<f64> {
    yields::ed_eval(z, x).map_err(err)
}

#[pymodule]
fn setgen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyState>()?;
    m.add_class::<PyYield>()?;
    m.add_class::<PyChannel>()?;
    m.add_class::<PyArm>()?;
    m.add_function(wrap_pyfunction!(optimum, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_p2p, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_three_party, m)?)?;
    m.add_function(wrap_pyfunction!(dephasing_equivalence, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(check_yield, m)?)?;
    m.add_function(wrap_pyfunction!(curves, m)?)?;
    m.add_function(wrap_pyfunction!(ed_eval, m)?)?;
    Ok(())
}
