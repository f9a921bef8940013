//! Python bindings: a thin layer over the core crate.
//!
//! Structural input problems (unparsable configs, bad parameters, violated
//! admissibility assumptions) surface as `ValueError`; failures of the
//! computation itself (non-convergence, non-finite state, budget misses)
//! surface as `RuntimeError`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use impulsive_dde::analyze::{analyze, AnalysisReport, AnalyzeError};
use impulsive_dde::cauchy;
use impulsive_dde::expr::{self, VarSet};
use impulsive_dde::fixpoint::{iterate_to_fixed_point, FixpointError};
use impulsive_dde::halanay::{solve_rate, HalanayError, HalanayProblem};
use impulsive_dde::model::{load_model, InitialHistory, ModelSpec};
use impulsive_dde::presets;
use impulsive_dde::sim::{integrate, SimError};

fn value_err(msg: impl ToString) -> PyErr {
    PyValueError::new_err(msg.to_string())
}

fn runtime_err(msg: impl ToString) -> PyErr {
    PyRuntimeError::new_err(msg.to_string())
}

fn from_analyze(e: AnalyzeError) -> PyErr {
    if e.is_assumption_violation() {
        value_err(e)
    } else {
        runtime_err(e)
    }
}

fn from_sim(e: SimError) -> PyErr {
    match e {
        SimError::BadStep { .. } | SimError::BadSpan { .. } | SimError::BadHistory { .. } => {
            value_err(e)
        }
        _ => runtime_err(e),
    }
}

fn from_fixpoint(e: FixpointError) -> PyErr {
    match e {
        FixpointError::BadStep { .. }
        | FixpointError::BadSpan { .. }
        | FixpointError::InstantOffGrid { .. } => value_err(e),
        _ => runtime_err(e),
    }
}

fn from_halanay(e: HalanayError) -> PyErr {
    match e {
        HalanayError::BadParameter { .. } => value_err(e),
        _ => runtime_err(e),
    }
}

/// A loaded model config.
#[pyclass(frozen)]
struct Model {
    inner: ModelSpec,
}

#[pymethods]
impl Model {
    /// Parses the JSON config format.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Model { inner: load_model(text).map_err(value_err)? })
    }

    /// One of the bundled configs: `example56` or `example1`.
    #[staticmethod]
    fn example(id: &str) -> PyResult<Self> {
        let text = presets::by_id(id)
            .ok_or_else(|| value_err(format!("unknown example id `{id}`")))?;
        Ok(Model { inner: load_model(text).map_err(value_err)? })
    }

    /// Largest delay bound across all terms.
    #[getter]
    fn sigma_bar(&self) -> f64 {
        self.inner.sigma_bar()
    }

    /// Length of the distributed-kernel window.
    #[getter]
    fn kernel_span(&self) -> f64 {
        self.inner.kernel_span()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(terms={}, sigma_bar={})",
            self.inner.terms().len(),
            self.inner.sigma_bar()
        )
    }
}

/// Derived constants and verdicts of the admissibility analysis.
#[pyclass(frozen)]
struct Report {
    inner: AnalysisReport,
}

macro_rules! report_getters {
    ($($name:ident: $ty:ty),* $(,)?) => {
        #[pymethods]
        impl Report {
            $(
                #[getter]
                fn $name(&self) -> $ty {
                    self.inner.$name.clone()
                }
            )*

            /// The full report as a JSON string.
            fn to_json(&self) -> PyResult<String> {
                serde_json::to_string_pretty(&self.inner).map_err(runtime_err)
            }

            fn __repr__(&self) -> String {
                format!(
                    "Report(m1={}, m2={}, existence_ok={}, attractivity_ok={})",
                    self.inner.m1, self.inner.m2, self.inner.existence_ok,
                    self.inner.attractivity_ok
                )
            }
        }
    };
}

report_getters! {
    a_l: f64,
    a_m: f64,
    m1: f64,
    m2: f64,
    m2_global_variant: f64,
    k_star: Vec<f64>,
    g_star: Vec<f64>,
    existence_lhs: f64,
    attractivity_lhs: f64,
    sigma_bar: f64,
    envelope_upper: f64,
    envelope_lower: f64,
    existence_ok: bool,
    attractivity_ok: bool,
    delay_vs_eta_ok: bool,
    m2_positive: bool,
    m2_variants_disagree: bool,
}

/// Converged fixed point of the integral operator, on its reported window.
#[pyclass(frozen)]
struct FixpointResult {
    #[pyo3(get)]
    times: Vec<f64>,
    #[pyo3(get)]
    left: Vec<f64>,
    #[pyo3(get)]
    right: Vec<f64>,
    #[pyo3(get)]
    residuals: Vec<f64>,
    #[pyo3(get)]
    w: f64,
    #[pyo3(get)]
    tol: f64,
    #[pyo3(get)]
    valid_from: f64,
}

/// Initial history passed either as a constant level or an expression in t.
#[derive(FromPyObject)]
enum HistoryArg {
    Expr(String),
    Level(f64),
}

fn resolve_history(
    model: &ModelSpec,
    history: Option<HistoryArg>,
    alpha: f64,
) -> PyResult<InitialHistory> {
    match history {
        Some(HistoryArg::Expr(src)) => {
            let e = expr::parse(&src, VarSet::TimeOnly)
                .map_err(|e| value_err(format!("history: {e}")))?;
            Ok(InitialHistory::from_expr(alpha, e))
        }
        Some(HistoryArg::Level(v)) => Ok(InitialHistory::constant(alpha, v)),
        None => model
            .default_history()
            .cloned()
            .ok_or_else(|| value_err("model declares no history; pass history=")),
    }
}

/// Runs the admissibility analysis.
#[pyfunction]
fn verify(model: &Model) -> PyResult<Report> {
    Ok(Report { inner: analyze(&model.inner).map_err(from_analyze)? })
}

/// Integrates the model and returns `(times, left, right)` node columns;
/// `right` repeats the left value away from jump instants.
#[pyfunction]
#[pyo3(signature = (model, t_end, h = 0.01, history = None, alpha = 0.0))]
fn simulate(
    model: &Model,
    t_end: f64,
    h: f64,
    history: Option<HistoryArg>,
    alpha: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let hist = resolve_history(&model.inner, history, alpha)?;
    let traj = integrate(&model.inner, &hist, t_end, h).map_err(from_sim)?;
    let times = traj.times().to_vec();
    let left = traj.left_values().to_vec();
    let right = (0..traj.len())
        .map(|i| traj.right_value(i).unwrap_or(left[i]))
        .collect();
    Ok((times, left, right))
}

/// Iterates the integral operator to its fixed point; the result covers
/// one delay span ahead of time zero up to `t_report`.
#[pyfunction]
#[pyo3(signature = (model, h_grid = 0.01, t_report = 10.0, tol = 1e-6))]
fn fixpoint(model: &Model, h_grid: f64, t_report: f64, tol: f64) -> PyResult<FixpointResult> {
    let report = analyze(&model.inner).map_err(from_analyze)?;
    let run = iterate_to_fixed_point(&model.inner, &report, h_grid, t_report, tol)
        .map_err(from_fixpoint)?;
    let phi = &run.phi;
    let keep: Vec<usize> = (0..phi.len())
        .filter(|&i| phi.nodes()[i] >= run.valid_from)
        .collect();
    Ok(FixpointResult {
        times: keep.iter().map(|&i| phi.nodes()[i]).collect(),
        left: keep.iter().map(|&i| phi.left_values()[i]).collect(),
        right: keep
            .iter()
            .map(|&i| phi.right_value(i).unwrap_or(phi.left_values()[i]))
            .collect(),
        residuals: run.residuals,
        w: run.w,
        tol: run.tol,
        valid_from: run.valid_from,
    })
}

/// Certified decay rate of the delayed comparison problem.
#[pyfunction]
fn halanay_rate(r: f64, s: f64, tau: f64, c: f64) -> PyResult<f64> {
    let p = HalanayProblem::new(r, s, tau, c).map_err(from_halanay)?;
    solve_rate(&p).map_err(from_halanay)
}

/// Certified decay rate instantiated from a model's analysis report.
#[pyfunction]
fn certified_rate(model: &Model) -> PyResult<f64> {
    let report = analyze(&model.inner).map_err(from_analyze)?;
    let p = HalanayProblem::from_report(&report).map_err(from_halanay)?;
    solve_rate(&p).map_err(from_halanay)
}

/// The impulsive decay weight H(t, s).
#[pyfunction]
fn cauchy_h(model: &Model, t: f64, s: f64) -> PyResult<f64> {
    cauchy::cauchy_h(&model.inner, t, s).map_err(|e| match e {
        cauchy::CauchyError::BadOrder { .. } | cauchy::CauchyError::PeriodProductNotOne { .. } => {
            value_err(e)
        }
        cauchy::CauchyError::Eval { .. } => runtime_err(e),
    })
}

/// Extremes of jump-factor products: `(prod_max, prod_min, gamma_min)`.
#[pyfunction]
fn gamma_extrema(model: &Model) -> PyResult<(f64, f64, f64)> {
    let ext = cauchy::gamma_extrema(model.inner.schedule()).map_err(value_err)?;
    Ok((ext.prod_max, ext.prod_min, ext.gamma_min))
}

#[pymodule]
fn impulsive_dde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Report>()?;
    m.add_class::<FixpointResult>()?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fixpoint, m)?)?;
    m.add_function(wrap_pyfunction!(halanay_rate, m)?)?;
    m.add_function(wrap_pyfunction!(certified_rate, m)?)?;
    m.add_function(wrap_pyfunction!(cauchy_h, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_extrema, m)?)?;
    Ok(())
}
