//! Python bindings for the PushASEP numerical laboratory.
//!
//! Exposes the main operations: exact transition probabilities, the
//! correlation kernels, Fredholm determinants (discrete and Airy),
//! scaling constants, and the Monte Carlo sampler.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pushasep_core::fredholm::{
    joint_distribution_continuum, joint_distribution_discrete, AiryProcess, ContinuumDetProblem,
    DiscreteDetProblem,
};
use pushasep_core::kernels::{kernel_flat, kernel_step, ContourRadii, KernelSpec};
use pushasep_core::limits::{self, PathGerm};
use pushasep_core::simulator::{
    sample_space_like, simulate, Direction, InitialCondition, SimConfig,
};
use pushasep_core::stats;
use pushasep_core::transition::{
    green_function as green_fn, master_equation_oracle, ParticleConfig, RatePlan, SpaceLikePath,
    SpaceTimePoint,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn build_path(points: Vec<(usize, f64)>) -> PyResult<SpaceLikePath> {
    let pts = points
        .into_iter()
        .map(|(n, t)| {
            if n == 0 || t < 0.0 {
                Err(value_err("path points need n >= 1 and t >= 0"))
            } else {
                Ok(SpaceTimePoint::new(n, t))
            }
        })
        .collect::<PyResult<Vec<_>>>()?;
    SpaceLikePath::new(pts).map_err(value_err)
}

/// Ai(x), absolute error below 1e-12 on |x| <= 40.
#[pyfunction]
fn airy_ai(x: f64) -> f64 {
    limits::airy_ai(x)
}

/// Ai'(x).
#[pyfunction]
fn airy_ai_prime(x: f64) -> f64 {
    limits::airy_ai_prime(x)
}

/// Extended Airy1 kernel.
#[pyfunction]
fn airy1_kernel(u1: f64, s1: f64, u2: f64, s2: f64) -> f64 {
    limits::airy1_kernel(u1, s1, u2, s2)
}

/// Extended Airy2 kernel.
#[pyfunction]
fn airy2_kernel(u1: f64, s1: f64, u2: f64, s2: f64) -> f64 {
    limits::airy2_kernel(u1, s1, u2, s2)
}

/// Skellam pmf P(N1 - N2 = k) with Poisson means (mu1, mu2).
#[pyfunction]
fn skellam_pmf(k: i64, mu1: f64, mu2: f64) -> f64 {
    stats::skellam_pmf(k, mu1, mu2)
}

/// Exact N-particle transition probability from `y` to `x` in time `t`.
#[pyfunction]
#[pyo3(signature = (y, x, t, right, left, speeds=None))]
fn green_function(
    y: Vec<i64>,
    x: Vec<i64>,
    t: f64,
    right: f64,
    left: f64,
    speeds: Option<Vec<f64>>,
) -> PyResult<f64> {
    let n = y.len();
    let y = ParticleConfig::new(y).map_err(value_err)?;
    let plan = RatePlan::new(
        speeds.unwrap_or_else(|| vec![1.0; n]),
        pushasep_core::transition::ClockProfile::Homogeneous { right, left },
    )
    .map_err(value_err)?;
    green_fn(&y, &x, t, &plan).map_err(runtime_err)
}

/// Master-equation oracle: full distribution at time `t` as a dict
/// mapping position tuples to probabilities.
#[pyfunction]
#[pyo3(signature = (y, t, right, left, window=12))]
fn master_equation(
    py: Python<'_>,
    y: Vec<i64>,
    t: f64,
    right: f64,
    left: f64,
    window: i64,
) -> PyResult<Py<PyDict>> {
    let n = y.len();
    let y = ParticleConfig::new(y).map_err(value_err)?;
    let plan = RatePlan::uniform(n, right, left);
    let sol = master_equation_oracle(&y, t, &plan, window).map_err(runtime_err)?;
    let dict = PyDict::new(py);
    for (cfg, p) in sol.probabilities {
        dict.set_item(cfg.positions().to_vec(), p)?;
    }
    Ok(dict.into())
}

/// Step-initial-data correlation kernel K((n1,t1),x1;(n2,t2),x2).
#[pyfunction]
fn kernel_step_value(
    n1: usize,
    t1: f64,
    x1: i64,
    n2: usize,
    t2: f64,
    x2: i64,
    right: f64,
    left: f64,
) -> PyResult<f64> {
    kernel_step(
        SpaceTimePoint::new(n1, t1),
        x1,
        SpaceTimePoint::new(n2, t2),
        x2,
        right,
        left,
        &ContourRadii::default(),
    )
    .map_err(runtime_err)
}

/// Flat-initial-data correlation kernel.
#[pyfunction]
fn kernel_flat_value(
    n1: usize,
    t1: f64,
    x1: i64,
    n2: usize,
    t2: f64,
    x2: i64,
    right: f64,
    left: f64,
) -> PyResult<f64> {
    kernel_flat(
        SpaceTimePoint::new(n1, t1),
        x1,
        SpaceTimePoint::new(n2, t2),
        x2,
        right,
        left,
        &ContourRadii::default(),
    )
    .map_err(runtime_err)
}

/// Joint distribution P(x_{n_k}(t_k) >= s_k for all k) by the windowed
/// Fredholm determinant. `variant` is "step" or "flat".
#[pyfunction]
#[pyo3(signature = (points, thresholds, right, left, variant="step"))]
fn joint_distribution(
    points: Vec<(usize, f64)>,
    thresholds: Vec<i64>,
    right: f64,
    left: f64,
    variant: &str,
) -> PyResult<f64> {
    let path = build_path(points)?;
    let kernel = match variant {
        "step" => KernelSpec::step(right, left),
        "flat" => KernelSpec::flat(right, left),
        other => return Err(value_err(format!("unknown variant '{other}'"))),
    };
    let problem = DiscreteDetProblem::new(path, thresholds, kernel);
    Ok(joint_distribution_discrete(&problem)
        .map_err(runtime_err)?
        .probability)
}

/// Airy-process joint distribution P(A(u_k) <= s_k for all k);
/// `process` is "airy1" or "airy2".
#[pyfunction]
#[pyo3(signature = (times, thresholds, process="airy2"))]
fn airy_joint_distribution(
    times: Vec<f64>,
    thresholds: Vec<f64>,
    process: &str,
) -> PyResult<f64> {
    let proc = match process {
        "airy1" => AiryProcess::Airy1,
        "airy2" => AiryProcess::Airy2,
        other => return Err(value_err(format!("unknown process '{other}'"))),
    };
    let p = ContinuumDetProblem::new(proc, times, thresholds);
    joint_distribution_continuum(&p).map_err(runtime_err)
}

/// Flat and step scaling constants for a fixed-time germ at `theta`.
#[pyfunction]
fn scaling_constants(
    py: Python<'_>,
    theta: f64,
    right: f64,
    left: f64,
) -> PyResult<Py<PyDict>> {
    let germ = PathGerm::fixed_time(theta);
    let flat = limits::flat_scaling(&germ, right, left);
    let dict = PyDict::new(py);
    dict.set_item("s_v", flat.s_v)?;
    dict.set_item("s_h", flat.s_h)?;
    dict.set_item("v_mean", flat.v_mean)?;
    if let Ok(step) = limits::step_scaling(&germ, right, left) {
        dict.set_item("mu", step.mu)?;
        dict.set_item("alpha", step.alpha)?;
        dict.set_item("beta", step.beta)?;
        dict.set_item("kappa0", step.kappa0)?;
        dict.set_item("kappa1", step.kappa1)?;
    }
    Ok(dict.into())
}

/// Simulate one trajectory from step initial data; returns the terminal
/// positions and the event count. Deterministic given the seed.
#[pyfunction]
fn simulate_step(
    n: usize,
    right: f64,
    left: f64,
    t_max: f64,
    seed: u64,
) -> PyResult<(Vec<i64>, usize)> {
    let cfg = SimConfig::homogeneous(InitialCondition::Step { n }, right, left, t_max, seed);
    let traj = simulate(&cfg).map_err(runtime_err)?;
    Ok((traj.terminal.positions().to_vec(), traj.events.len()))
}

/// Empirical estimate of a space-like joint probability; returns
/// (p_hat, ci99_half_width).
#[pyfunction]
#[pyo3(signature = (n, points, thresholds, right, left, t_max, replicas, seed=1))]
#[allow(clippy::too_many_arguments)]
fn sample_joint(
    n: usize,
    points: Vec<(usize, f64)>,
    thresholds: Vec<i64>,
    right: f64,
    left: f64,
    t_max: f64,
    replicas: u64,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let path = build_path(points)?;
    let mut cfg = SimConfig::homogeneous(InitialCondition::Step { n }, right, left, t_max, seed);
    cfg.replicas = replicas;
    let est = sample_space_like(&cfg, &path, &thresholds).map_err(runtime_err)?;
    Ok((est.p_hat, est.ci99_half_width))
}

/// Event log of one trajectory as (time, particle, direction, block_len)
/// tuples.
#[pyfunction]
fn trajectory_events(
    n: usize,
    right: f64,
    left: f64,
    t_max: f64,
    seed: u64,
) -> PyResult<Vec<(f64, usize, String, usize)>> {
    let cfg = SimConfig::homogeneous(InitialCondition::Step { n }, right, left, t_max, seed);
    let traj = simulate(&cfg).map_err(runtime_err)?;
    Ok(traj
        .events
        .iter()
        .map(|e| {
            let dir = match e.direction {
                Direction::Right => "right".to_string(),
                Direction::Left => "left".to_string(),
            };
            (e.time, e.particle, dir, e.block_len)
        })
        .collect())
}

#[pymodule]
fn pushasep(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(airy_ai, m)?)?;
    m.add_function(wrap_pyfunction!(airy_ai_prime, m)?)?;
    m.add_function(wrap_pyfunction!(airy1_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(airy2_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(skellam_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(green_function, m)?)?;
    m.add_function(wrap_pyfunction!(master_equation, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_step_value, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_flat_value, m)?)?;
    m.add_function(wrap_pyfunction!(joint_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(airy_joint_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_constants, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_step, m)?)?;
    m.add_function(wrap_pyfunction!(sample_joint, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory_events, m)?)?;
    Ok(())
}
