//! Python bindings: the quadratic and facility-location problems, hard
//! and soft rounding, bad-pair counting, the toy trials and
//! single-instance training. Core errors surface as `ValueError`.

// pyo3's generated wrappers trip this lint on every `PyResult` method.
#![allow(clippy::useless_conversion)]

use std::str::FromStr;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use uco_core::derand::{greedy_round as greedy, iterative_round as iterative, sample_round as sample, soft_greedy as soft_gr, soft_iterative as soft_it};
use uco_core::diff::{backward, grad_check as check_gradient, Tape};
use uco_core::misalign::{bad_pair_count as count_bad, soft_trial, toy_trial as run_toy_trial, PairedScores, ToyConfig, TrialReport, DEFAULT_TEMPERATURES};
use uco_core::train::{train_instance, SoftScheme, TrainConfig};
use uco_core::{BinaryDecisions, ContinuousDecisions, FacilityProblem, Problem, QuadraticProblem, RoundingOrder, Scheme, SeedStream, SoftConfig};

fn err(e: uco_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn decisions(x: Vec<f64>) -> PyResult<ContinuousDecisions> {
    ContinuousDecisions::new(x).map_err(err)
}

fn order_of(order: Option<Vec<usize>>, n: usize) -> PyResult<RoundingOrder> {
    match order {
        Some(o) => RoundingOrder::new(o).map_err(err),
        None => Ok(RoundingOrder::identity(n)),
    }
}

fn soft_scheme(s: &str) -> PyResult<SoftScheme> {
    match s {
        "none" => Ok(SoftScheme::None),
        "soft-iterative" => Ok(SoftScheme::SoftIterative),
        "soft-greedy" => Ok(SoftScheme::SoftGreedy),
        other => Err(PyValueError::new_err(format!("unknown soft scheme {other:?}"))),
    }
}

fn surrogate_of<P: Problem>(p: &P, x: Vec<f64>) -> PyResult<f64> {
    p.surrogate_value(&decisions(x)?).map_err(err)
}

fn gradient_of<P: Problem>(p: &P, x: Vec<f64>) -> PyResult<Vec<f64>> {
    let x = decisions(x)?;
    if x.len() != p.dimension() {
        return Err(err(uco_core::Error::DimensionMismatch { expected: p.dimension(), actual: x.len() }));
    }
    let tape = Tape::new();
    let inputs = tape.vars(x.as_slice());
    let out = p.surrogate(&inputs);
    Ok(backward(out, &inputs))
}

fn hard_of<P: Problem>(p: &P, bits: Vec<bool>) -> PyResult<f64> {
    p.hard_objective(&BinaryDecisions::new(bits)).map_err(err)
}

/// Quadratic toy problem `f(d) = Σ α_ij d_i d_j` with the bilinear surrogate.
#[pyclass(name = "QuadraticProblem", module = "uco", frozen)]
#[derive(Clone)]
struct PyQuadratic {
    inner: QuadraticProblem,
}

#[pymethods]
impl PyQuadratic {
    #[new]
    fn new(alpha: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyQuadratic { inner: QuadraticProblem::new(alpha).map_err(err)? })
    }

    /// Standard normal coefficients drawn from `seed`.
    #[staticmethod]
    #[pyo3(signature = (n, seed = 0))]
    fn sample(n: usize, seed: u64) -> Self {
        PyQuadratic { inner: QuadraticProblem::sample(n, SeedStream::new(seed)) }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyQuadratic { inner: QuadraticProblem::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.dimension()
    }

    fn alpha(&self) -> Vec<Vec<f64>> {
        self.inner.rows().map(<[f64]>::to_vec).collect()
    }

    fn surrogate(&self, x: Vec<f64>) -> PyResult<f64> {
        surrogate_of(&self.inner, x)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        gradient_of(&self.inner, x)
    }

    fn hard_value(&self, bits: Vec<bool>) -> PyResult<f64> {
        hard_of(&self.inner, bits)
    }

    fn is_feasible(&self, bits: Vec<bool>) -> bool {
        self.inner.is_feasible(&BinaryDecisions::new(bits))
    }

    fn __repr__(&self) -> String {
        format!("QuadraticProblem(n={})", self.inner.dimension())
    }
}

/// Facility location with a budget of `k` centres and penalty weight `beta`.
#[pyclass(name = "FacilityProblem", module = "uco", frozen)]
#[derive(Clone)]
struct PyFacility {
    inner: FacilityProblem,
}

#[pymethods]
impl PyFacility {
    #[staticmethod]
    fn from_points(points: Vec<[f64; 2]>, k: usize, beta: f64) -> PyResult<Self> {
        Ok(PyFacility { inner: FacilityProblem::from_points(points, k, beta).map_err(err)? })
    }

    /// `n` uniform points in the unit square drawn from `seed`.
    #[staticmethod]
    #[pyo3(signature = (n, k, beta = 1.0, seed = 0))]
    fn sample(n: usize, k: usize, beta: f64, seed: u64) -> PyResult<Self> {
        Ok(PyFacility { inner: FacilityProblem::sample(n, k, beta, SeedStream::new(seed)).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyFacility { inner: FacilityProblem::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> Option<String> {
        self.inner.to_json()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    fn distance(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.inner.dimension();
        if i >= n || j >= n {
            return Err(PyValueError::new_err(format!("index out of range for n = {n}")));
        }
        Ok(self.inner.distance(i, j))
    }

    fn surrogate(&self, x: Vec<f64>) -> PyResult<f64> {
        surrogate_of(&self.inner, x)
    }

    fn expected_service(&self, x: Vec<f64>) -> PyResult<f64> {
        let x = decisions(x)?;
        self.inner.surrogate_value(&x).map_err(err)?;
        Ok(self.inner.expected_service(x.as_slice()))
    }

    fn tail_penalty(&self, x: Vec<f64>) -> PyResult<f64> {
        let x = decisions(x)?;
        self.inner.surrogate_value(&x).map_err(err)?;
        Ok(self.inner.tail_penalty(x.as_slice()))
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        gradient_of(&self.inner, x)
    }

    fn hard_value(&self, bits: Vec<bool>) -> PyResult<f64> {
        hard_of(&self.inner, bits)
    }

    fn is_feasible(&self, bits: Vec<bool>) -> bool {
        self.inner.is_feasible(&BinaryDecisions::new(bits))
    }

    fn __repr__(&self) -> String {
        format!("FacilityProblem(n={}, k={}, beta={})", self.inner.dimension(), self.inner.k(), self.inner.beta())
    }
}

#[derive(FromPyObject)]
enum AnyProblem<'py> {
    Quadratic(PyRef<'py, PyQuadratic>),
    Facility(PyRef<'py, PyFacility>),
}

/// Runs `$body` with `$p` bound to the core problem behind either class.
macro_rules! with_problem {
    ($any:expr, $p:ident => $body:expr) => {
        match $any {
            AnyProblem::Quadratic(q) => {
                let $p = q.inner.clone();
                $body
            }
            AnyProblem::Facility(f) => {
                let $p = f.inner.clone();
                $body
            }
        }
    };
}

#[pyfunction]
#[pyo3(signature = (problem, x, order = None))]
fn iterative_round(problem: AnyProblem, x: Vec<f64>, order: Option<Vec<usize>>) -> PyResult<Vec<bool>> {
    let x = decisions(x)?;
    let order = order_of(order, x.len())?;
    with_problem!(problem, p => Ok(iterative(&p, &x, &order).map_err(err)?.bits().to_vec()))
}

#[pyfunction]
fn greedy_round(problem: AnyProblem, x: Vec<f64>) -> PyResult<Vec<bool>> {
    let x = decisions(x)?;
    with_problem!(problem, p => Ok(greedy(&p, &x).map_err(err)?.bits().to_vec()))
}

/// Independent Bernoulli draws, one per entry.
#[pyfunction]
#[pyo3(signature = (x, seed = 0))]
fn sample_round(x: Vec<f64>, seed: u64) -> PyResult<Vec<bool>> {
    Ok(sample(&decisions(x)?, SeedStream::new(seed)).bits().to_vec())
}

#[pyfunction]
#[pyo3(signature = (problem, x, tau, order = None))]
fn soft_iterative(problem: AnyProblem, x: Vec<f64>, tau: f64, order: Option<Vec<usize>>) -> PyResult<Vec<f64>> {
    let order = order_of(order, x.len())?;
    let x = decisions(x)?;
    with_problem!(problem, p => soft_it(&p, x.as_slice(), &order, tau).map_err(err))
}

/// `steps` defaults to the dimension.
#[pyfunction]
#[pyo3(signature = (problem, x, tau, steps = None))]
fn soft_greedy(problem: AnyProblem, x: Vec<f64>, tau: f64, steps: Option<usize>) -> PyResult<Vec<f64>> {
    let cfg = SoftConfig::new(tau, steps.unwrap_or(x.len())).map_err(err)?;
    let x = decisions(x)?;
    with_problem!(problem, p => soft_gr(&p, x.as_slice(), &cfg).map_err(err))
}

#[pyfunction]
#[pyo3(signature = (x, t = 0.5))]
fn threshold(x: Vec<f64>, t: f64) -> PyResult<Vec<bool>> {
    Ok(uco_core::threshold(&decisions(x)?, t).map_err(err)?.bits().to_vec())
}

/// Pairs ordered one way by the surrogate and the other way by the final values.
#[pyfunction]
fn bad_pair_count(surrogate: Vec<f64>, final_values: Vec<f64>) -> PyResult<u64> {
    Ok(count_bad(&PairedScores::new(surrogate, final_values).map_err(err)?))
}

/// Largest relative error between the recorded gradient of `scheme`
/// followed by the surrogate and central differences with step `h`.
#[pyfunction]
#[pyo3(signature = (problem, x, scheme = "none", tau = 1.0, steps = None, h = 1e-5))]
fn grad_check(problem: AnyProblem, x: Vec<f64>, scheme: &str, tau: f64, steps: Option<usize>, h: f64) -> PyResult<f64> {
    let scheme = soft_scheme(scheme)?;
    let n = x.len();
    let x = decisions(x)?;
    let order = RoundingOrder::identity(n);
    let cfg = SoftConfig::new(tau, steps.unwrap_or(n)).map_err(err)?;
    with_problem!(problem, p => {
        let r = match scheme {
            SoftScheme::None => check_gradient(|v| Ok(p.surrogate(v)), &x, h),
            SoftScheme::SoftIterative => check_gradient(|v| Ok(p.surrogate(&soft_it(&p, v, &order, tau)?)), &x, h),
            SoftScheme::SoftGreedy => check_gradient(|v| Ok(p.surrogate(&soft_gr(&p, v, &cfg)?)), &x, h),
        };
        r.map_err(err)
    })
}

fn report_dict<'py>(py: Python<'py>, r: &TrialReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("trial", r.trial)?;
    d.set_item("scheme", r.scheme.as_str())?;
    d.set_item("temperature", r.temperature)?;
    d.set_item("bad_count", r.bad_count)?;
    d.set_item("total_pairs", r.total_pairs)?;
    d.set_item("fraction", r.fraction)?;
    Ok(d)
}

fn toy_scheme(s: &str) -> PyResult<Scheme> {
    Scheme::from_str(s).map_err(err)
}

/// One quadratic toy trial with hard rounding.
#[pyfunction]
#[pyo3(signature = (scheme = "iterative", trial = 0, seed = 0, n = 50, samples = 100))]
fn toy_trial<'py>(py: Python<'py>, scheme: &str, trial: usize, seed: u64, n: usize, samples: usize) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ToyConfig { n, samples, steps: None };
    let scheme = toy_scheme(scheme)?;
    let r = py.allow_threads(|| run_toy_trial(&cfg, scheme, trial, SeedStream::new(seed))).map_err(err)?;
    report_dict(py, &r)
}

/// One quadratic toy trial with soft rounding, one report per temperature.
#[pyfunction]
#[pyo3(signature = (scheme = "iterative", temperatures = None, trial = 0, seed = 0, n = 50, samples = 100, steps = None))]
#[allow(clippy::too_many_arguments)]
fn soft_toy_trial<'py>(
    py: Python<'py>,
    scheme: &str,
    temperatures: Option<Vec<f64>>,
    trial: usize,
    seed: u64,
    n: usize,
    samples: usize,
    steps: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = ToyConfig { n, samples, steps };
    let scheme = toy_scheme(scheme)?;
    let temps = temperatures.unwrap_or_else(|| DEFAULT_TEMPERATURES.to_vec());
    let reports = py.allow_threads(|| soft_trial(&cfg, scheme, &temps, trial, SeedStream::new(seed))).map_err(err)?;
    reports.iter().map(|r| report_dict(py, r)).collect()
}

/// Trains logits on one instance. Returns a dict with `records` (one dict
/// per epoch), `abort` (None or a dict with `epoch` and `reason`) and
/// `final_logits`.
#[pyfunction]
#[pyo3(signature = (problem, scheme = "none", tau = 1.0, epochs = 300, lr = 0.01, steps = None, init_logit = 0.0, init_scale = 0.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    problem: AnyProblem,
    scheme: &str,
    tau: f64,
    epochs: usize,
    lr: f64,
    steps: Option<usize>,
    init_logit: f64,
    init_scale: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = TrainConfig { epochs, lr, scheme: soft_scheme(scheme)?, tau, steps, init_logit, init_scale, seed, ..TrainConfig::default() };
    let run = with_problem!(problem, p => py.allow_threads(|| train_instance(&p, &cfg))).map_err(err)?;
    let records = run
        .curve
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new_bound(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("train_loss", r.train_loss)?;
            d.set_item("test_iterative", r.test_iterative)?;
            d.set_item("test_greedy", r.test_greedy)?;
            d.set_item("feasible_iterative", r.feasible_iterative)?;
            d.set_item("feasible_greedy", r.feasible_greedy)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = PyDict::new_bound(py);
    out.set_item("records", records)?;
    match &run.abort {
        Some(a) => {
            let d = PyDict::new_bound(py);
            d.set_item("epoch", a.epoch)?;
            d.set_item("reason", &a.reason)?;
            out.set_item("abort", d)?;
        }
        None => out.set_item("abort", py.None())?,
    }
    out.set_item("final_logits", run.final_logits)?;
    Ok(out)
}

#[pymodule]
fn uco(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuadratic>()?;
    m.add_class::<PyFacility>()?;
    m.add_function(wrap_pyfunction!(iterative_round, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_round, m)?)?;
    m.add_function(wrap_pyfunction!(sample_round, m)?)?;
    m.add_function(wrap_pyfunction!(soft_iterative, m)?)?;
    m.add_function(wrap_pyfunction!(soft_greedy, m)?)?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(bad_pair_count, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(toy_trial, m)?)?;
    m.add_function(wrap_pyfunction!(soft_toy_trial, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("DEFAULT_TEMPERATURES", DEFAULT_TEMPERATURES.to_vec())?;
    Ok(())
}
