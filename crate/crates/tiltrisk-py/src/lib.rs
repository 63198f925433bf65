//! Python bindings for the core decision-theory operations: limit-experiment
//! values, the prior-vs-rule game, and the Monte Carlo worst-case harness.
//!
//! Build with `cargo build -p tiltrisk-py --release`, then rename/copy the
//! produced `libtiltrisk_py.so` to `tiltrisk_py.so` somewhere on
//! `sys.path` (see `python/smoke_test.py`).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tiltrisk::finite_sample as fs;
use tiltrisk::game;
use tiltrisk::limit_exp;
use tiltrisk::numeric::{SpdMatrix, StreamSeed};
use tiltrisk::tilt;

fn err(e: tiltrisk::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn loss_spec(loss: &str, lambda: f64, bound: f64) -> PyResult<tilt::TiltedLossSpec> {
    match loss {
        "estimation" => tilt::TiltedLossSpec::estimation(lambda, bound).map_err(err),
        "treatment" => tilt::TiltedLossSpec::treatment(lambda, Some(bound)).map_err(err),
        "linex" => tilt::TiltedLossSpec::linex(lambda, bound).map_err(err),
        other => Err(PyValueError::new_err(format!("unknown loss '{other}'"))),
    }
}

/// `e^{loss/lambda}` for a single loss value.
#[pyfunction]
fn tilted_value(loss: f64, lambda: f64) -> PyResult<f64> {
    tilt::tilted_value(loss, lambda).map_err(err)
}

/// Variational criterion `-λ ln Σ wᵢ e^{-uᵢ/λ}` over a discrete model.
#[pyfunction]
fn dv_criterion(utilities: Vec<f64>, weights: Vec<f64>, lambda: f64) -> PyResult<f64> {
    tilt::dv_criterion(&utilities, &weights, lambda).map_err(err)
}

/// Maximizer of the treatment-game gain and its value at `(lambda, sigma)`.
#[pyfunction]
fn solve_delta_star(lambda: f64, sigma: f64) -> PyResult<(f64, f64)> {
    limit_exp::solve_delta_star(lambda, sigma).map_err(err)
}

/// Closed-form treatment minimax value with the least-favorable effect pair.
#[pyfunction]
fn treatment_minimax_value(py: Python<'_>, lambda: f64, sigma: f64) -> PyResult<Py<PyDict>> {
    let v = limit_exp::treatment_minimax_value(lambda, sigma).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("value", v.value)?;
    d.set_item("delta_star", v.delta_star)?;
    Ok(d.unbind())
}

/// Minimax value of the bounded estimation loss `min(z^2, bound_c)`.
#[pyfunction]
fn estimation_minimax_value(sigma: f64, lambda: f64, bound_c: f64) -> PyResult<f64> {
    let loss = tilt::TiltedLossSpec::estimation(lambda, bound_c).map_err(err)?;
    Ok(limit_exp::estimation_minimax_value_for_sigma(sigma, &loss)
        .map_err(err)?
        .value)
}

/// Minimax-optimal shift of the truncated linex loss.
#[pyfunction]
fn linex_optimal_shift(lambda: f64, m: f64, sigma2: f64) -> PyResult<f64> {
    limit_exp::linex_optimal_shift(lambda, m, sigma2).map_err(err)
}

/// Double-oracle solution of the treatment game over `|effect| <= budget`.
#[pyfunction]
#[pyo3(signature = (lambda, sigma, budget, max_iters = 200, tol = 1e-6))]
fn solve_treatment_game(
    py: Python<'_>,
    lambda: f64,
    sigma: f64,
    budget: f64,
    max_iters: usize,
    tol: f64,
) -> PyResult<Py<PyDict>> {
    let spec = limit_exp::LimitSpec::scalar(1.0, sigma).map_err(err)?;
    let sol = game::solve_treatment_game(&spec, lambda, budget, max_iters, tol).map_err(err)?;
    let effects: Vec<f64> = sol
        .prior
        .support
        .iter()
        .map(|h| spec.effect_of(h))
        .collect::<tiltrisk::Result<_>>()
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("threshold", sol.rule.threshold)?;
    d.set_item("lower_value", sol.lower_value)?;
    d.set_item("upper_value", sol.upper_value)?;
    d.set_item("gap", sol.gap)?;
    d.set_item("iterations", sol.iterations)?;
    d.set_item("converged", sol.converged)?;
    d.set_item("prior_effects", effects)?;
    d.set_item("prior_weights", sol.prior.weights.clone())?;
    Ok(d.unbind())
}

fn build_model(
    model: &str,
    theta0: f64,
    n: usize,
    mu_shift: f64,
    omega: Option<Vec<f64>>,
) -> PyResult<fs::ExperimentModel> {
    let family = match model {
        "bernoulli" => fs::Family::Bernoulli { theta0 },
        "gaussian" => fs::Family::GaussianLocation {
            theta0,
            noise_sd: 1.0,
        },
        "gmm" => {
            let entries = omega.unwrap_or_else(|| vec![1.0, 0.0, 0.0, 4.0]);
            fs::Family::OveridMean {
                mu0: 0.0,
                omega: SpdMatrix::from_rows(2, &entries).map_err(err)?,
            }
        }
        other => return Err(PyValueError::new_err(format!("unknown model '{other}'"))),
    };
    let shift = if model == "gmm" { 0.0 } else { mu_shift };
    fs::ExperimentModel::new(family, n, shift).map_err(err)
}

/// Monte Carlo worst-case tilted risk of a plug-in rule over the default
/// effect grid, with the matching limit value.
#[pyfunction]
#[pyo3(signature = (model, rule, loss, lambda, n, reps, seed, theta0 = 0.5,
                    bound = 25.0, budget_m = 3.0, grid = 25, omega = None))]
#[allow(clippy::too_many_arguments)]
fn worst_case_risk(
    py: Python<'_>,
    model: &str,
    rule: &str,
    loss: &str,
    lambda: f64,
    n: usize,
    reps: usize,
    seed: u64,
    theta0: f64,
    bound: f64,
    budget_m: f64,
    grid: usize,
    omega: Option<Vec<f64>>,
) -> PyResult<Py<PyDict>> {
    let spec = loss_spec(loss, lambda, bound)?;
    let mu_shift = if loss == "treatment" { theta0 } else { 0.0 };
    let m = build_model(model, theta0, n, mu_shift, omega)?;
    let est = fs::EstimatorSpec::by_name(rule).map_err(err)?;
    let engine = fs::McEngine::new(&m, reps, StreamSeed::new(seed, 0)).map_err(err)?;
    let rep = engine
        .worst_case_refined(&est, &spec, budget_m, grid)
        .map_err(err)?;
    let v_star = fs::limit_value(m.sigma(), &spec).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("value", rep.value)?;
    d.set_item("stderr", rep.stderr)?;
    d.set_item("worst_h", rep.worst_h)?;
    d.set_item("v_star", v_star)?;
    d.set_item("ratio", rep.value / v_star)?;
    d.set_item("sigma", m.sigma())?;
    Ok(d.unbind())
}

/// Pathwise-derivative check along a quadratic-tilt sub-model of N(0, Omega).
#[pyfunction]
fn pathwise_derivative_check(
    py: Python<'_>,
    omega: Vec<f64>,
    direction: Vec<f64>,
    gamma: f64,
    steps: Vec<f64>,
) -> PyResult<Py<PyDict>> {
    let dim = direction.len();
    let om = SpdMatrix::from_rows(dim, &omega).map_err(err)?;
    let rep = fs::pathwise_derivative_check(&om, &direction, gamma, &steps).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("inner_product", rep.inner_product)?;
    d.set_item(
        "forward_errors",
        rep.steps.iter().map(|s| s.forward_error).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "richardson_errors",
        rep.steps
            .iter()
            .map(|s| s.richardson_error)
            .collect::<Vec<_>>(),
    )?;
    d.set_item("richardson_error_ratio", rep.richardson_error_ratio)?;
    Ok(d.unbind())
}

#[pymodule]
fn tiltrisk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tilted_value, m)?)?;
    m.add_function(wrap_pyfunction!(dv_criterion, m)?)?;
    m.add_function(wrap_pyfunction!(solve_delta_star, m)?)?;
    m.add_function(wrap_pyfunction!(treatment_minimax_value, m)?)?;
    m.add_function(wrap_pyfunction!(estimation_minimax_value, m)?)?;
    m.add_function(wrap_pyfunction!(linex_optimal_shift, m)?)?;
    m.add_function(wrap_pyfunction!(solve_treatment_game, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_risk, m)?)?;
    m.add_function(wrap_pyfunction!(pathwise_derivative_check, m)?)?;
    Ok(())
}
