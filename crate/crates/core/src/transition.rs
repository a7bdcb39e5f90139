//! Exact finite-time transition probabilities of PushASEP.
//!
//! The N-particle transition probability is a prefactor times an N×N
//! determinant of coefficient-extraction integrals `F_{k,l}`; the same
//! building blocks give the free propagator `T` and the space-like
//! transition `phi` used by the correlation kernels. A truncated
//! master-equation ODE solve acts as an independent oracle for the
//! whole construction.

use std::collections::HashMap;

use crate::contour::{
    circle_log_quadrature, saddle_radius, ContourError, ContourSpec, DEFAULT_NODE_CAP,
};
use crate::linalg::{det_lu, Matrix};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransitionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("window too small: escaped mass {escaped:.3e} >= 1e-10")]
    WindowTooSmall { escaped: f64 },
    #[error("invalid rate plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Contour(#[from] ContourError),
}

/// Clock profiles `a(t)`, `b(t)`: cumulative right/left clock measures
/// with `a(0) = b(0) = 0`, nondecreasing.
#[derive(Debug, Clone)]
pub enum ClockProfile {
    /// `a(t) = R·t`, `b(t) = L·t`.
    Homogeneous { right: f64, left: f64 },
    /// Piecewise-linear profiles through `(t, a, b)` knots starting at
    /// `(0, 0, 0)`; extended past the last knot with the final slopes.
    PiecewiseLinear { knots: Vec<(f64, f64, f64)> },
}

impl ClockProfile {
    pub fn a(&self, t: f64) -> f64 {
        match self {
            ClockProfile::Homogeneous { right, .. } => right * t,
            ClockProfile::PiecewiseLinear { knots } => interp(knots, t, 1),
        }
    }

    pub fn b(&self, t: f64) -> f64 {
        match self {
            ClockProfile::Homogeneous { left, .. } => left * t,
            ClockProfile::PiecewiseLinear { knots } => interp(knots, t, 2),
        }
    }

    pub fn a_dot(&self, t: f64) -> f64 {
        match self {
            ClockProfile::Homogeneous { right, .. } => *right,
            ClockProfile::PiecewiseLinear { knots } => slope(knots, t, 1),
        }
    }

    pub fn b_dot(&self, t: f64) -> f64 {
        match self {
            ClockProfile::Homogeneous { left, .. } => *left,
            ClockProfile::PiecewiseLinear { knots } => slope(knots, t, 2),
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self, ClockProfile::Homogeneous { .. })
    }

    fn validate(&self) -> Result<(), TransitionError> {
        match self {
            ClockProfile::Homogeneous { right, left } => {
                if *right < 0.0 || *left < 0.0 {
                    return Err(TransitionError::InvalidPlan(
                        "rates must be nonnegative".into(),
                    ));
                }
            }
            ClockProfile::PiecewiseLinear { knots } => {
                if knots.is_empty() || knots[0] != (0.0, 0.0, 0.0) {
                    return Err(TransitionError::InvalidPlan(
                        "piecewise profile must start at (0,0,0)".into(),
                    ));
                }
                for w in knots.windows(2) {
                    if w[1].0 <= w[0].0 || w[1].1 < w[0].1 || w[1].2 < w[0].2 {
                        return Err(TransitionError::InvalidPlan(
                            "profile knots must be increasing in t and nondecreasing in a, b"
                                .into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn interp(knots: &[(f64, f64, f64)], t: f64, comp: usize) -> f64 {
    let pick = |k: &(f64, f64, f64)| if comp == 1 { k.1 } else { k.2 };
    if t <= 0.0 {
        return 0.0;
    }
    for w in knots.windows(2) {
        if t <= w[1].0 {
            let frac = (t - w[0].0) / (w[1].0 - w[0].0);
            return pick(&w[0]) + frac * (pick(&w[1]) - pick(&w[0]));
        }
    }
    // extend with the final slope
    let last = knots.len() - 1;
    if knots.len() == 1 {
        return 0.0;
    }
    let dt = knots[last].0 - knots[last - 1].0;
    let s = (pick(&knots[last]) - pick(&knots[last - 1])) / dt;
    pick(&knots[last]) + s * (t - knots[last].0)
}

fn slope(knots: &[(f64, f64, f64)], t: f64, comp: usize) -> f64 {
    let pick = |k: &(f64, f64, f64)| if comp == 1 { k.1 } else { k.2 };
    for w in knots.windows(2) {
        if t <= w[1].0 {
            return (pick(&w[1]) - pick(&w[0])) / (w[1].0 - w[0].0);
        }
    }
    if knots.len() < 2 {
        return 0.0;
    }
    let last = knots.len() - 1;
    (pick(&knots[last]) - pick(&knots[last - 1])) / (knots[last].0 - knots[last - 1].0)
}

/// Particle speeds and clock profiles defining the dynamics: particle k
/// jumps right at rate `ȧ(t)·v_k` (onto an empty site) and initiates a
/// left push at rate `ḃ(t)/v_k`.
#[derive(Debug, Clone)]
pub struct RatePlan {
    pub speeds: Vec<f64>,
    pub profile: ClockProfile,
}

impl RatePlan {
    pub fn new(speeds: Vec<f64>, profile: ClockProfile) -> Result<Self, TransitionError> {
        if speeds.iter().any(|&v| v <= 0.0) {
            return Err(TransitionError::InvalidPlan(
                "all particle speeds must be positive".into(),
            ));
        }
        profile.validate()?;
        Ok(RatePlan { speeds, profile })
    }

    /// Uniform speeds `v ≡ 1` with homogeneous rates `a(t) = R t`,
    /// `b(t) = L t`.
    pub fn uniform(n: usize, right: f64, left: f64) -> Self {
        RatePlan::new(vec![1.0; n], ClockProfile::Homogeneous { right, left }).unwrap()
    }

    pub fn n(&self) -> usize {
        self.speeds.len()
    }

    /// Speed of particle `k` (1-based labels, right to left).
    pub fn speed(&self, k: usize) -> f64 {
        self.speeds[k - 1]
    }
}

/// Strictly decreasing particle positions, right-to-left labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParticleConfig {
    positions: Vec<i64>,
}

impl ParticleConfig {
    pub fn new(positions: Vec<i64>) -> Result<Self, TransitionError> {
        if positions.windows(2).any(|w| w[0] <= w[1]) {
            return Err(TransitionError::DimensionMismatch(
                "positions must be strictly decreasing".into(),
            ));
        }
        Ok(ParticleConfig { positions })
    }

    /// Step initial condition `y_i = -i`, i = 1..=n.
    pub fn step(n: usize) -> Self {
        ParticleConfig {
            positions: (1..=n as i64).map(|i| -i).collect(),
        }
    }

    /// Flat initial condition `y_i = -2i`, i = 1..=n.
    pub fn flat(n: usize) -> Self {
        ParticleConfig {
            positions: (1..=n as i64).map(|i| -2 * i).collect(),
        }
    }

    pub fn positions(&self) -> &[i64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// A particle label at a time: `(n, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimePoint {
    pub n: usize,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(n: usize, t: f64) -> Self {
        assert!(n >= 1 && t >= 0.0 && t.is_finite());
        SpaceTimePoint { n, t }
    }
}

/// `(n1,t1) ≺ (n2,t2)`: label nondecreasing, time nonincreasing, not equal.
pub fn precedes(p1: SpaceTimePoint, p2: SpaceTimePoint) -> bool {
    p2.n >= p1.n && p2.t <= p1.t && !(p1.n == p2.n && p1.t == p2.t)
}

/// Ordered space-like path: consecutive points satisfy `≺`.
#[derive(Debug, Clone)]
pub struct SpaceLikePath {
    points: Vec<SpaceTimePoint>,
}

impl SpaceLikePath {
    pub fn new(points: Vec<SpaceTimePoint>) -> Result<Self, TransitionError> {
        for w in points.windows(2) {
            if !precedes(w[0], w[1]) {
                return Err(TransitionError::DimensionMismatch(format!(
                    "({}, {}) does not precede ({}, {})",
                    w[0].n, w[0].t, w[1].n, w[1].t
                )));
            }
        }
        Ok(SpaceLikePath { points })
    }

    pub fn points(&self) -> &[SpaceTimePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

const QUAD_TOL: f64 = 1e-12;

/// Coefficient integral `(1/2πi)∮ z^{x-1} e^{bz+a/z} · N(z)/D(z) dz` with
/// `N, D` products of `(1 - v z)`, kept in log-scaled form.
pub(crate) fn coeff_integral_scaled(
    x: i64,
    a: f64,
    b: f64,
    numer: &[f64],
    denom: &[f64],
) -> Result<crate::contour::LogScaled, ContourError> {
    let r_max = denom
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(1.0 / v))
        .min(1e6);
    let radius = if a == 0.0 && b == 0.0 {
        (0.9 * r_max).min(1.0)
    } else {
        saddle_radius(x - 1, a, b, 0.9 * r_max)
    };
    let spec = ContourSpec::origin(radius);
    let got = circle_log_quadrature(
        |z| {
            let mut log = b * z + a / z + Complex64::new((x - 1) as f64, 0.0) * z.ln();
            for &v in numer {
                log += (Complex64::new(1.0, 0.0) - v * z).ln();
            }
            for &v in denom {
                log -= (Complex64::new(1.0, 0.0) - v * z).ln();
            }
            log
        },
        &spec,
        QUAD_TOL,
        DEFAULT_NODE_CAP,
    )?;
    debug_assert!(
        got.value.im.abs() < 1e-9 * got.value.norm().max(1.0),
        "imaginary residue {:.3e} on real coefficient",
        got.value.im
    );
    Ok(got)
}

/// Real value of [`coeff_integral_scaled`].
fn coeff_integral(
    x: i64,
    a: f64,
    b: f64,
    numer: &[f64],
    denom: &[f64],
) -> Result<f64, ContourError> {
    Ok(coeff_integral_scaled(x, a, b, numer, denom)?.to_f64())
}

/// `F_{k,l}(x, a, b)`: the determinant entry of the Green's function,
/// with the particle-speed products taken from `plan` (labels reversed:
/// factor i of the numerator carries `v_{N+1-i}`).
pub fn green_entry(
    k: usize,
    l: usize,
    x: i64,
    a: f64,
    b: f64,
    plan: &RatePlan,
) -> Result<f64, TransitionError> {
    let n = plan.n();
    if k < 1 || l < 1 || k > n || l > n {
        return Err(TransitionError::DimensionMismatch(format!(
            "indices ({k},{l}) out of range for N={n}"
        )));
    }
    // reversed-speed sequences of lengths k-1 and l-1 share a prefix
    let common = k.min(l) - 1;
    let numer: Vec<f64> = (common + 1..k).map(|i| plan.speeds[n - i]).collect();
    let denom: Vec<f64> = (common + 1..l).map(|j| plan.speeds[n - j]).collect();
    Ok(coeff_integral(x, a, b, &numer, &denom)?)
}

/// Free propagator `T(x, y) = F_{1,1}(x-y, da, db)`: one particle moving
/// with right measure `da` and left measure `db`.
pub fn time_transition(x: i64, y: i64, da: f64, db: f64) -> Result<f64, TransitionError> {
    Ok(coeff_integral(x - y, da, db, &[], &[])?)
}

/// Space-like transition `phi^{(p1,p2)}(x, y)`: zero unless `p1 ≺ p2`,
/// otherwise the coefficient integral with denominator factors
/// `(1-v_j z)` for `j = n1+1..=n2`.
pub fn spacelike_transition(
    p1: SpaceTimePoint,
    p2: SpaceTimePoint,
    x: i64,
    y: i64,
    plan: &RatePlan,
) -> Result<f64, TransitionError> {
    if !precedes(p1, p2) {
        return Ok(0.0);
    }
    if p2.n > plan.n() {
        return Err(TransitionError::DimensionMismatch(format!(
            "point label {} exceeds plan size {}",
            p2.n,
            plan.n()
        )));
    }
    let da = plan.profile.a(p1.t) - plan.profile.a(p2.t);
    let db = plan.profile.b(p1.t) - plan.profile.b(p2.t);
    let denom: Vec<f64> = (p1.n + 1..=p2.n).map(|j| plan.speed(j)).collect();
    Ok(coeff_integral(x - y, da, db, &[], &denom)?)
}

/// Exact transition probability `G(x; t)` from `y` at time 0 to `x` at
/// time `t`: prefactor times `det[F_{k,l}(x_{N+1-l} - y_{N+1-k})]`.
///
/// `x` may be an arbitrary integer tuple; the determinant formula is
/// defined beyond strict configurations.
pub fn green_function(
    y: &ParticleConfig,
    x: &[i64],
    t: f64,
    plan: &RatePlan,
) -> Result<f64, TransitionError> {
    let n = y.len();
    if x.len() != n || plan.n() != n {
        return Err(TransitionError::DimensionMismatch(format!(
            "expected {n} positions/speeds, got {} positions and {} speeds",
            x.len(),
            plan.n()
        )));
    }
    let a = plan.profile.a(t);
    let b = plan.profile.b(t);
    let mut log_pref = 0.0;
    for i in 0..n {
        let v = plan.speeds[i];
        log_pref += (x[i] - y.positions()[i]) as f64 * v.ln() - a * v - b / v;
    }
    let mut mat = Matrix::zeros(n);
    for k in 1..=n {
        for l in 1..=n {
            let arg = x[n - l] - y.positions()[n - k];
            mat.set(k - 1, l - 1, green_entry(k, l, arg, a, b, plan)?);
        }
    }
    Ok(log_pref.exp() * det_lu(mat))
}

/// Full distribution of the truncated master equation at time `t`.
#[derive(Debug, Clone)]
pub struct MasterEquationSolution {
    pub probabilities: HashMap<ParticleConfig, f64>,
    pub escaped: f64,
}

/// Kolmogorov forward equation on the state space truncated to
/// configurations inside `[min(y)-window, max(y)+window]`, integrated by
/// RK4 with the step tied to the total event rate. Probability flowing
/// off the window is absorbed; the solve fails if that escaped mass
/// reaches 1e-10.
pub fn master_equation_oracle(
    y: &ParticleConfig,
    t: f64,
    plan: &RatePlan,
    window: i64,
) -> Result<MasterEquationSolution, TransitionError> {
    let n = y.len();
    if n > 4 {
        return Err(TransitionError::DimensionMismatch(
            "oracle supports at most 4 particles".into(),
        ));
    }
    if plan.n() != n {
        return Err(TransitionError::DimensionMismatch(
            "plan size must match configuration".into(),
        ));
    }
    let lo = *y.positions().iter().min().unwrap() - window;
    let hi = *y.positions().iter().max().unwrap() + window;

    // enumerate strictly decreasing n-tuples in [lo, hi]
    let mut states: Vec<Vec<i64>> = Vec::new();
    let mut cur = Vec::with_capacity(n);
    enumerate_states(lo, hi, n, &mut cur, &mut states);
    let index: HashMap<Vec<i64>, usize> =
        states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();

    // per-state moves: (target index or escape, speed factor, is_right)
    struct Move {
        target: Option<usize>,
        speed_factor: f64,
        right: bool,
    }
    let mut moves: Vec<Vec<Move>> = Vec::with_capacity(states.len());
    for s in &states {
        let mut list = Vec::new();
        for k in 0..n {
            // right jump of particle k (0-based; label k+1)
            let blocked = k > 0 && s[k - 1] == s[k] + 1;
            if !blocked {
                let mut tgt = s.clone();
                tgt[k] += 1;
                let target = if tgt[k] > hi { None } else { Some(index[&tgt]) };
                list.push(Move {
                    target,
                    speed_factor: plan.speeds[k],
                    right: true,
                });
            }
            // left push initiated by particle k: shift its block
            let mut j = k;
            while j + 1 < n && s[j + 1] == s[j] - 1 {
                j += 1;
            }
            let mut tgt = s.clone();
            for m in k..=j {
                tgt[m] -= 1;
            }
            let target = if tgt[j] < lo { None } else { Some(index[&tgt]) };
            list.push(Move {
                target,
                speed_factor: 1.0 / plan.speeds[k],
                right: false,
            });
        }
        moves.push(list);
    }

    let mut p = vec![0.0f64; states.len()];
    p[index[y.positions()]] = 1.0;

    let max_rate: f64 = plan
        .speeds
        .iter()
        .map(|v| rate_bound(&plan.profile, t) * (v + 1.0 / v))
        .sum();
    // comfortably below the 0.05 rate·step bound; keeps the RK4 global
    // error well under the 1e-6 oracle budget
    let steps = ((t * max_rate / 0.02).ceil() as usize).max(1);
    let h = t / steps as f64;

    let deriv = |p: &[f64], adot: f64, bdot: f64, out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, list) in moves.iter().enumerate() {
            let pi = p[i];
            if pi == 0.0 {
                continue;
            }
            for mv in list {
                let rate = if mv.right {
                    adot * mv.speed_factor
                } else {
                    bdot * mv.speed_factor
                };
                out[i] -= rate * pi;
                if let Some(tgt) = mv.target {
                    out[tgt] += rate * pi;
                }
            }
        }
    };

    let m = states.len();
    let (mut k1, mut k2, mut k3, mut k4) = (
        vec![0.0; m],
        vec![0.0; m],
        vec![0.0; m],
        vec![0.0; m],
    );
    let mut tmp = vec![0.0; m];
    for step in 0..steps {
        let t_mid = (step as f64 + 0.5) * h;
        let adot = plan.profile.a_dot(t_mid);
        let bdot = plan.profile.b_dot(t_mid);
        deriv(&p, adot, bdot, &mut k1);
        for i in 0..m {
            tmp[i] = p[i] + 0.5 * h * k1[i];
        }
        deriv(&tmp, adot, bdot, &mut k2);
        for i in 0..m {
            tmp[i] = p[i] + 0.5 * h * k2[i];
        }
        deriv(&tmp, adot, bdot, &mut k3);
        for i in 0..m {
            tmp[i] = p[i] + h * k3[i];
        }
        deriv(&tmp, adot, bdot, &mut k4);
        for i in 0..m {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    let total: f64 = p.iter().sum();
    let escaped = 1.0 - total;
    if escaped >= 1e-10 {
        return Err(TransitionError::WindowTooSmall { escaped });
    }
    let probabilities = states
        .into_iter()
        .zip(p)
        .filter(|(_, prob)| *prob != 0.0)
        .map(|(s, prob)| (ParticleConfig { positions: s }, prob))
        .collect();
    Ok(MasterEquationSolution {
        probabilities,
        escaped,
    })
}

fn rate_bound(profile: &ClockProfile, t_max: f64) -> f64 {
    match profile {
        ClockProfile::Homogeneous { right, left } => right.max(*left),
        ClockProfile::PiecewiseLinear { knots } => {
            let mut bound = 0.0f64;
            for w in knots.windows(2) {
                if w[0].0 > t_max {
                    break;
                }
                let dt = w[1].0 - w[0].0;
                bound = bound.max((w[1].1 - w[0].1) / dt).max((w[1].2 - w[0].2) / dt);
            }
            bound.max(1e-12)
        }
    }
}

fn enumerate_states(lo: i64, hi: i64, n: usize, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
    if cur.len() == n {
        out.push(cur.clone());
        return;
    }
    let upper = cur.last().map_or(hi, |&last| last - 1);
    let needed = (n - cur.len() - 1) as i64;
    let mut x = upper;
    while x - needed >= lo {
        cur.push(x);
        enumerate_states(lo, hi, n, cur, out);
        cur.pop();
        x -= 1;
    }
}

/// Master-equation right-hand side assembled from Green's function
/// evaluations in the terminal variables: the generator acting on
/// `x ↦ G(y, x, t)`.
fn generator_applied(
    y: &ParticleConfig,
    x: &[i64],
    t: f64,
    plan: &RatePlan,
) -> Result<f64, TransitionError> {
    let n = x.len();
    let adot = plan.profile.a_dot(t);
    let bdot = plan.profile.b_dot(t);
    let mut rhs = 0.0;
    let p = |cfg: &[i64]| green_function(y, cfg, t, plan);
    for k in 0..n {
        let vk = plan.speeds[k];
        // right-jump outflow from x: allowed iff the site ahead is empty
        let out_allowed = k == 0 || x[k - 1] > x[k] + 1;
        if out_allowed {
            rhs -= adot * vk * p(x)?;
        }
        // right-jump inflow: particle k arrived from x_k - 1
        let in_valid = k == n - 1 || x[k] - 1 > x[k + 1];
        if in_valid {
            let mut from = x.to_vec();
            from[k] -= 1;
            rhs += adot * vk * p(&from)?;
        }
        // left-push outflow: always possible
        rhs -= bdot / vk * p(x)?;
        // left-push inflow: valid iff the site ahead of particle k is
        // empty in x; the pre-state had any prefix of k's block shifted
        // one site right (the cascade in the pre-state stops exactly at
        // the prefix end)
        if k == 0 || x[k - 1] > x[k] + 1 {
            let mut from = x.to_vec();
            let mut j = k;
            loop {
                from[j] += 1;
                rhs += bdot / vk * p(&from)?;
                if j + 1 < n && x[j + 1] == x[j] - 1 {
                    j += 1;
                } else {
                    break;
                }
            }
        }
    }
    Ok(rhs)
}

/// `|dG/dt - L G|` at `(y, x, t)`: central difference in `t` against the
/// generator assembled from neighboring configurations.
pub fn forward_equation_residual(
    y: &ParticleConfig,
    x: &ParticleConfig,
    t: f64,
    h: f64,
    plan: &RatePlan,
) -> Result<f64, TransitionError> {
    assert!(t - h > 0.0, "need t - h > 0 for the central difference");
    let plus = green_function(y, x.positions(), t + h, plan)?;
    let minus = green_function(y, x.positions(), t - h, plan)?;
    let dgdt = (plus - minus) / (2.0 * h);
    let gen = generator_applied(y, x.positions(), t, plan)?;
    Ok((dgdt - gen).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::exp_laurent_coeff;
    use crate::stats::skellam_pmf;

    fn plan1(r: f64, l: f64) -> RatePlan {
        RatePlan::uniform(1, r, l)
    }

    #[test]
    fn f_entry_initial_conditions() {
        let plan = RatePlan::uniform(3, 1.0, 1.0);
        // F_{1,1}(0,0,0) = 1
        assert!((green_entry(1, 1, 0, 0.0, 0.0, &plan).unwrap() - 1.0).abs() < 1e-12);
        // F_{1,l}(x,0,0) = 0 for x >= 1: no pole at the origin
        for l in 1..=3 {
            for x in 1..=4 {
                let v = green_entry(1, l, x, 0.0, 0.0, &plan).unwrap();
                assert!(v.abs() < 1e-12, "F_1{l}({x},0,0) = {v}");
            }
        }
    }

    #[test]
    fn f11_matches_direct_series() {
        // F_{1,1}(x, a, b) = sum_{n >= max(0,x)} a^n b^{n-x} / (n!(n-x)!)
        let plan = plan1(1.0, 1.0);
        for &(x, a, b) in &[(0i64, 0.7, 1.3), (3, 1.0, 2.0), (-4, 2.5, 0.4), (7, 3.0, 3.0)] {
            let quad = green_entry(1, 1, x, a, b, &plan).unwrap();
            let series = exp_laurent_coeff(-x, a, b);
            assert!((quad - series).abs() < 1e-12, "x={x}: {quad} vs {series}");
        }
    }

    #[test]
    fn time_transition_basics() {
        assert!((time_transition(5, 5, 0.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
        // coefficient of z^{-1} in e^{a/z} is a
        let a = 1.7;
        assert!((time_transition(3, 2, a, 0.0).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn time_transition_semigroup() {
        let (a1, b1, a2, b2) = (0.6, 0.9, 0.8, 0.3);
        for (x, z) in [(0i64, 0i64), (2, -1), (-3, 1)] {
            let direct = time_transition(x, z, a1 + a2, b1 + b2).unwrap();
            let mut conv = 0.0;
            for y in z - 40..=x + 40 {
                conv += time_transition(x, y, a1, b1).unwrap()
                    * time_transition(y, z, a2, b2).unwrap();
            }
            assert!((conv - direct).abs() < 1e-10, "x={x} z={z}: {conv} vs {direct}");
        }
    }

    #[test]
    fn spacelike_transition_indicator_and_specializations() {
        let plan = RatePlan::uniform(3, 1.0, 0.5);
        let p = SpaceTimePoint::new(2, 1.0);
        // identical points: strict precedence fails
        assert_eq!(spacelike_transition(p, p, 0, 0, &plan).unwrap(), 0.0);
        // reversed order fails too
        let q = SpaceTimePoint::new(3, 0.5);
        assert_eq!(spacelike_transition(q, p, 1, 0, &plan).unwrap(), 0.0);
        // same label, earlier second time: reduces to the propagator
        let p2 = SpaceTimePoint::new(2, 0.4);
        let da = plan.profile.a(1.0) - plan.profile.a(0.4);
        let db = plan.profile.b(1.0) - plan.profile.b(0.4);
        for (x, y) in [(0i64, 0i64), (2, -1)] {
            let got = spacelike_transition(p, p2, x, y, &plan).unwrap();
            let want = time_transition(x, y, da, db).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn spacelike_transition_equal_time_series_oracle() {
        // v = 1, n2 = n1 + 1, t1 = t2: coefficient extraction with 1/(1-z)
        let plan = RatePlan::uniform(2, 1.0, 1.0);
        let p1 = SpaceTimePoint::new(1, 1.0);
        let p2 = SpaceTimePoint::new(2, 1.0);
        for (x, y) in [(0i64, 0i64), (1, 0), (0, 3), (-2, 0)] {
            let got = spacelike_transition(p1, p2, x, y, &plan).unwrap();
            let q = crate::contour::LaurentQuery {
                a: 0.0,
                b: 0.0,
                numer_rates: vec![],
                denom_rates: vec![1.0],
                power: -(x - y),
            };
            let want = crate::contour::laurent_coefficient(&q).unwrap();
            assert!((got - want).abs() < 1e-12, "x={x} y={y}");
        }
    }

    #[test]
    fn recurrence_relations() {
        // F_{k,l+1} = phi_{N+1-l} * F_{k,l} and F_{k-1,l} = phi_{N+2-k} * F_{k,l}
        let speeds = vec![1.3, 0.8, 1.0, 0.6];
        let plan = RatePlan::new(speeds, ClockProfile::Homogeneous { right: 1.0, left: 0.7 })
            .unwrap();
        let n = 4;
        let (a, b) = (plan.profile.a(1.2), plan.profile.b(1.2));
        let cases = [(2usize, 2usize, -1i64), (1, 3, 2), (3, 1, 0), (2, 1, -3)];
        for &(k, l, x) in &cases {
            if l + 1 <= n {
                let direct = green_entry(k, l + 1, x, a, b, &plan).unwrap();
                let v = plan.speeds[n - l];
                let mut conv = 0.0;
                for y in x..x + 80 {
                    conv += v.powi((y - x) as i32) * green_entry(k, l, y, a, b, &plan).unwrap();
                }
                assert!((conv - direct).abs() < 1e-10, "recurrence1 k={k} l={l} x={x}");
            }
            if k >= 2 {
                let direct = green_entry(k - 1, l, x, a, b, &plan).unwrap();
                let v = plan.speeds[n + 1 - k];
                let mut conv = 0.0;
                for y in x..x + 80 {
                    conv += v.powi((y - x) as i32) * green_entry(k, l, y, a, b, &plan).unwrap();
                }
                assert!((conv - direct).abs() < 1e-10, "recurrence2 k={k} l={l} x={x}");
            }
        }
    }

    #[test]
    fn green_function_identity_at_time_zero() {
        let y = ParticleConfig::new(vec![3, 0, -2]).unwrap();
        let plan = RatePlan::uniform(3, 1.0, 1.0);
        let same = green_function(&y, y.positions(), 0.0, &plan).unwrap();
        assert!((same - 1.0).abs() < 1e-10);
        let moved = green_function(&y, &[4, 0, -2], 0.0, &plan).unwrap();
        assert!(moved.abs() < 1e-10);
    }

    #[test]
    fn green_function_single_particle_is_skellam() {
        for &(r, l) in &[(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (4.0, 1.0)] {
            let plan = plan1(r, l);
            let y = ParticleConfig::new(vec![0]).unwrap();
            let t = 0.8;
            for d in -8..=8 {
                let got = green_function(&y, &[d], t, &plan).unwrap();
                let want = skellam_pmf(d, r * t, l * t);
                assert!((got - want).abs() < 1e-12, "d={d} r={r} l={l}");
            }
        }
    }

    #[test]
    fn green_function_normalizes_for_two_particles() {
        let y = ParticleConfig::new(vec![0, -1]).unwrap();
        let plan = RatePlan::uniform(2, 1.0, 1.0);
        let t = 0.7;
        let mut total = 0.0;
        for x1 in -15..=15 {
            for x2 in -16..x1 {
                total += green_function(&y, &[x1, x2], t, &plan).unwrap();
            }
        }
        assert!((total - 1.0).abs() < 1e-8, "total {total}");
    }

    #[test]
    fn oracle_point_mass_at_time_zero() {
        let y = ParticleConfig::new(vec![0, -2]).unwrap();
        let plan = RatePlan::uniform(2, 1.0, 1.0);
        let sol = master_equation_oracle(&y, 0.0, &plan, 6).unwrap();
        assert!((sol.probabilities[&y] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_single_particle_skellam() {
        let y = ParticleConfig::new(vec![0]).unwrap();
        let plan = plan1(1.0, 0.5);
        let t = 1.0;
        let sol = master_equation_oracle(&y, t, &plan, 25).unwrap();
        for d in -6..=6 {
            let cfg = ParticleConfig::new(vec![d]).unwrap();
            let got = sol.probabilities.get(&cfg).copied().unwrap_or(0.0);
            let want = skellam_pmf(d, 1.0 * t, 0.5 * t);
            assert!((got - want).abs() < 1e-7, "d={d}: {got} vs {want}");
        }
    }

    #[test]
    fn oracle_blocked_pair_first_order() {
        // y = (0,-1), L=0: at first order only the right particle moves
        let y = ParticleConfig::new(vec![0, -1]).unwrap();
        let plan = RatePlan::uniform(2, 1.0, 0.0);
        let t = 1e-3;
        let sol = master_equation_oracle(&y, t, &plan, 8).unwrap();
        let right_moved = ParticleConfig::new(vec![1, -1]).unwrap();
        let p1 = sol.probabilities[&right_moved];
        assert!((p1 - t).abs() < 5.0 * t * t, "P = {p1}, expected ~{t}");
        // blocked particle advancing requires two events: O(t^2)
        let both = ParticleConfig::new(vec![1, 0]).unwrap();
        let p2 = sol.probabilities.get(&both).copied().unwrap_or(0.0);
        assert!(p2 < 3.0 * t * t, "blocked move at order t: {p2}");
    }

    #[test]
    fn oracle_rejects_small_window() {
        let y = ParticleConfig::new(vec![0]).unwrap();
        let err = master_equation_oracle(&y, 2.0, &plan1(2.0, 2.0), 2);
        assert!(matches!(err, Err(TransitionError::WindowTooSmall { .. })));
    }

    #[test]
    fn green_matches_oracle_two_particles() {
        let y = ParticleConfig::new(vec![0, -1]).unwrap();
        let plan = RatePlan::uniform(2, 1.0, 1.0);
        let t = 1.0;
        let sol = master_equation_oracle(&y, t, &plan, 14).unwrap();
        let mut tv = 0.0;
        for (cfg, &p) in &sol.probabilities {
            let g = green_function(&y, cfg.positions(), t, &plan).unwrap();
            tv += (g - p).abs();
        }
        assert!(tv / 2.0 < 1e-6, "total variation {tv}");
    }

    #[test]
    fn forward_residual_small() {
        let plan1p = plan1(1.0, 1.0);
        let y1 = ParticleConfig::new(vec![0]).unwrap();
        let r1 = forward_equation_residual(&y1, &ParticleConfig::new(vec![1]).unwrap(), 0.5, 1e-4, &plan1p)
            .unwrap();
        assert!(r1 < 1e-6, "N=1 residual {r1}");

        // adjacent pair exercises exclusion and push terms
        let plan2 = RatePlan::uniform(2, 1.0, 0.8);
        let y2 = ParticleConfig::new(vec![0, -1]).unwrap();
        let x2 = ParticleConfig::new(vec![1, 0]).unwrap();
        let r2 = forward_equation_residual(&y2, &x2, 0.5, 1e-4, &plan2).unwrap();
        assert!(r2 < 1e-6, "N=2 residual {r2}");

        let plan3 = RatePlan::new(
            vec![1.2, 1.0, 0.7],
            ClockProfile::Homogeneous { right: 1.0, left: 0.5 },
        )
        .unwrap();
        let y3 = ParticleConfig::new(vec![2, 0, -3]).unwrap();
        let x3 = ParticleConfig::new(vec![3, 0, -2]).unwrap();
        let r3 = forward_equation_residual(&y3, &x3, 0.6, 1e-4, &plan3).unwrap();
        assert!(r3 < 1e-5, "N=3 residual {r3}");
    }

    #[test]
    fn piecewise_profile_interpolates() {
        let prof = ClockProfile::PiecewiseLinear {
            knots: vec![(0.0, 0.0, 0.0), (1.0, 2.0, 0.5), (3.0, 2.0 + 1.0, 0.5 + 4.0)],
        };
        assert!((prof.a(0.5) - 1.0).abs() < 1e-14);
        assert!((prof.a(2.0) - 2.5).abs() < 1e-14);
        assert!((prof.b(2.0) - 2.5).abs() < 1e-14);
        assert!((prof.a_dot(0.5) - 2.0).abs() < 1e-14);
        // beyond the last knot: final slopes persist
        assert!((prof.a(4.0) - 3.5).abs() < 1e-14);
        prof.validate().unwrap();
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(ParticleConfig::new(vec![0, 0]).is_err());
        assert!(ParticleConfig::new(vec![0, 1]).is_err());
        assert!(RatePlan::new(vec![0.0], ClockProfile::Homogeneous { right: 1.0, left: 0.0 })
            .is_err());
        let p1 = SpaceTimePoint::new(2, 1.0);
        let p2 = SpaceTimePoint::new(1, 0.5);
        assert!(SpaceLikePath::new(vec![p1, p2]).is_err());
        let ok = SpaceLikePath::new(vec![
            SpaceTimePoint::new(1, 1.0),
            SpaceTimePoint::new(3, 0.5),
            SpaceTimePoint::new(3, 0.2),
        ]);
        assert!(ok.is_ok());
    }
}
