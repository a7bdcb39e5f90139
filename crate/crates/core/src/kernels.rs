//! Space-like-path correlation kernels.
//!
//! Three variants of the two-point kernel `K((n1,t1),x1;(n2,t2),x2)`:
//!
//! * [`kernel_step`]: step initial data `y_i = -i`, uniform speeds; an
//!   indicator one-contour term plus a double `(w,z)` integral.
//! * [`kernel_flat`]: flat initial data `y_i = -2i` on all of ℤ; the
//!   double integral collapses to a single `z` integral, with a finite-N
//!   correction [`flat_correction_kn`] that decays geometrically.
//! * [`kernel_general`]: arbitrary positive speeds and initial
//!   positions, assembled as `-phi + Σ Ψ Φ` with `Φ` obtained by
//!   inverting the Gram matrix of an explicit exponential basis.
//!
//! All contour work runs through the log-scaled circle quadrature so the
//! same code serves desk-scale arguments and the sharply peaked
//! integrands of the T → ∞ rescaling studies.

use num_complex::Complex64;
use thiserror::Error;

use crate::contour::{
    circle_log_quadrature, ContourError, ContourSpec, LogScaled, DEFAULT_NODE_CAP,
};
use crate::linalg::{solve_full_pivot, LinalgError, Matrix};
use crate::transition::{
    coeff_integral_scaled, precedes, ParticleConfig, RatePlan, SpaceTimePoint, TransitionError,
};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("contours collide: radius {gamma0} around 0 plus {gamma1} around 1 reaches across")]
    ContourCollision { gamma0: f64, gamma1: f64 },
    #[error("Gram matrix numerically singular: {0}")]
    SingularGram(#[from] LinalgError),
    #[error(transparent)]
    Contour(#[from] ContourError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("unsupported arguments: {0}")]
    Unsupported(String),
}

/// Circle radii for the two kernel contours: `gamma0` around the origin,
/// `gamma1` around 1.
#[derive(Debug, Clone, Copy)]
pub struct ContourRadii {
    pub gamma0: f64,
    pub gamma1: f64,
}

impl Default for ContourRadii {
    fn default() -> Self {
        ContourRadii {
            gamma0: 0.4,
            gamma1: 0.4,
        }
    }
}

impl ContourRadii {
    fn check_disjoint(&self) -> Result<(), KernelError> {
        if self.gamma0 + self.gamma1 >= 1.0 || self.gamma0 <= 0.0 || self.gamma1 <= 0.0 {
            return Err(KernelError::ContourCollision {
                gamma0: self.gamma0,
                gamma1: self.gamma1,
            });
        }
        Ok(())
    }
}

/// The explicit radii used in the finite-N decay estimates for the flat
/// kernel: the indicator-term bounds use `E_INV` / `E_INV_QUARTER`
/// depending on the sign of `x1 - x2`, the correction term uses
/// `E_INV_4` around 0 with `E_INV_2` around 1.
pub mod presets {
    pub const E_INV: f64 = 0.36787944117144233;
    pub const E_INV_QUARTER: f64 = 0.7788007830714049;
    pub const E_INV_2: f64 = 0.1353352832366127;
    pub const E_INV_4: f64 = 0.018315638888734178;
}

/// Conjugation base `ρ ∈ (0,1)` balancing the window decay of the
/// conjugated entries `K̃(x1,x2) = K(x1,x2)·ρ^{x1-x2}`.
pub fn default_conjugation(radii: &ContourRadii) -> f64 {
    (radii.gamma0 * (1.0 - radii.gamma1)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelVariant {
    Step,
    Flat,
    General,
}

/// Kernel specification: variant, dynamics, initial data (used by the
/// general variant) and the conjugation base.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub variant: KernelVariant,
    pub plan: RatePlan,
    pub initial: Option<ParticleConfig>,
    pub conjugation: f64,
}

impl KernelSpec {
    pub fn step(right: f64, left: f64) -> Self {
        KernelSpec {
            variant: KernelVariant::Step,
            plan: RatePlan::uniform(1, right, left),
            initial: None,
            conjugation: default_conjugation(&ContourRadii::default()),
        }
    }

    pub fn flat(right: f64, left: f64) -> Self {
        KernelSpec {
            variant: KernelVariant::Flat,
            ..KernelSpec::step(right, left)
        }
    }

    pub fn general(plan: RatePlan, initial: ParticleConfig) -> Self {
        KernelSpec {
            variant: KernelVariant::General,
            plan,
            initial: Some(initial),
            conjugation: default_conjugation(&ContourRadii::default()),
        }
    }
}

const TOL: f64 = 1e-12;

/// Contour enclosing 0 and 1, for the `Ψ` families (required once the
/// family index goes negative and the pole at 1 participates).
fn gamma01() -> ContourSpec {
    ContourSpec::new(Complex64::new(0.5, 0.0), 1.6)
}

fn gamma1(radius: f64) -> ContourSpec {
    ContourSpec::new(Complex64::new(1.0, 0.0), radius)
}

fn real_part(v: LogScaled, what: &str) -> f64 {
    debug_assert!(
        v.value.im.abs() <= 1e-8 * v.value.norm().max(1e-3),
        "{what}: imaginary residue {:.3e} (|value| {:.3e})",
        v.value.im,
        v.value.norm()
    );
    v.to_f64()
}

/// `Ψ^{n,t}_k(x)` for step initial data: weight
/// `(w-1)^k w^{-x-n-1} e^{a(t)w + b(t)/w}`. For `k ≥ 0` this is a pure
/// coefficient extraction around the origin on a saddle-adapted circle;
/// negative `k` brings in the pole at 1 and uses the contour around
/// both.
pub fn psi_step(n: usize, t: f64, k: i64, x: i64, right: f64, left: f64) -> Result<f64, KernelError> {
    let (a, b) = (right * t, left * t);
    if k >= 0 {
        let numer = vec![1.0; k as usize];
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let got = coeff_integral_scaled(-x - n as i64, b, a, &numer, &[])?;
        return Ok(sign * real_part(got, "psi_step"));
    }
    let power = -x - (n as i64) - 1;
    let got = circle_log_quadrature(
        move |w| {
            a * w + b / w
                + Complex64::new(k as f64, 0.0) * (w - 1.0).ln()
                + Complex64::new(power as f64, 0.0) * w.ln()
        },
        &gamma01(),
        TOL,
        DEFAULT_NODE_CAP,
    )?;
    Ok(real_part(got, "psi_step"))
}

/// `Φ^{n,t}_j(x)` for step initial data: contour around 1 only, weight
/// `z^{x+n} (z-1)^{-j-1} e^{-a(t)z - b(t)/z}`; a polynomial of degree
/// `j` in `x`.
pub fn phi_step(n: usize, t: f64, j: usize, x: i64, right: f64, left: f64) -> Result<f64, KernelError> {
    let (a, b) = (right * t, left * t);
    let radius = phi_radius(x + n as i64, j);
    let got = circle_log_quadrature(
        move |z| {
            -a * z - b / z + Complex64::new((x + n as i64) as f64, 0.0) * z.ln()
                - Complex64::new((j + 1) as f64, 0.0) * (z - 1.0).ln()
        },
        &gamma1(radius),
        TOL,
        DEFAULT_NODE_CAP,
    )?;
    Ok(real_part(got, "phi_step"))
}

/// Radius around 1 hugging the pole when the monomial power is large:
/// minimizes the peak of `|z|^{p} |z-1|^{-j-1}` over the circle.
fn phi_radius(p: i64, j: usize) -> f64 {
    let jp = (j + 1) as f64;
    (jp / (p.unsigned_abs() as f64 + jp)).clamp(0.02, 0.45)
}

/// `Ψ^{n,t}_k(x)` for flat initial data: weight
/// `(w(w-1))^k w^{-x-2n-1} e^{a(t)w + b(t)/w}`; coefficient extraction
/// around the origin for `k ≥ 0`, contour around 0 and 1 otherwise.
pub fn psi_flat(n: usize, t: f64, k: i64, x: i64, right: f64, left: f64) -> Result<f64, KernelError> {
    let (a, b) = (right * t, left * t);
    if k >= 0 {
        let numer = vec![1.0; k as usize];
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let got = coeff_integral_scaled(k - x - 2 * n as i64, b, a, &numer, &[])?;
        return Ok(sign * real_part(got, "psi_flat"));
    }
    let power = -x - 2 * (n as i64) - 1;
    let got = circle_log_quadrature(
        move |w| {
            a * w + b / w
                + Complex64::new(k as f64, 0.0) * (w * (w - 1.0)).ln()
                + Complex64::new(power as f64, 0.0) * w.ln()
        },
        &gamma01(),
        TOL,
        DEFAULT_NODE_CAP,
    )?;
    Ok(real_part(got, "psi_flat"))
}

/// `Φ^{n,t}_j(x)` for flat initial data: contour around 1 only, weight
/// `(2z-1) z^{x+2n} (z(z-1))^{-j-1} e^{-a(t)z - b(t)/z}`.
pub fn phi_flat(n: usize, t: f64, j: usize, x: i64, right: f64, left: f64) -> Result<f64, KernelError> {
    let (a, b) = (right * t, left * t);
    let radius = phi_radius(x + 2 * n as i64 - j as i64 - 1, j);
    let got = circle_log_quadrature(
        move |z| {
            -a * z - b / z
                + (2.0 * z - 1.0).ln()
                + Complex64::new((x + 2 * n as i64) as f64, 0.0) * z.ln()
                - Complex64::new((j + 1) as f64, 0.0) * (z * (z - 1.0)).ln()
        },
        &gamma1(radius),
        TOL,
        DEFAULT_NODE_CAP,
    )?;
    Ok(real_part(got, "phi_flat"))
}

/// The indicator term shared by the step and flat kernels:
/// `(1/2πi)∮ w^{x2-x1-1} (w/(1-w))^{n2-n1} e^{Δa·w + Δb/w} dw` on a
/// circle around the origin with radius at the integrand saddle. The
/// kernels subtract it under the `p1 ≺ p2` indicator.
fn indicator_term(
    d: i64,
    dn: i64,
    da: f64,
    db: f64,
    radius_hint: Option<f64>,
) -> Result<LogScaled, KernelError> {
    let power = d - 1 + dn;
    let radius = radius_hint.unwrap_or_else(|| saddle_with_pole(power, db, da, dn));
    let spec = ContourSpec::origin(radius);
    let got = circle_log_quadrature(
        move |w| {
            da * w + db / w + Complex64::new(power as f64, 0.0) * w.ln()
                - Complex64::new(dn as f64, 0.0) * (Complex64::new(1.0, 0.0) - w).ln()
        },
        &spec,
        TOL,
        DEFAULT_NODE_CAP,
    )?;
    Ok(got)
}

/// Saddle of `p·ln r + b r + a/r - dn·ln(1-r)` on (0, 0.95), by sign
/// scan plus bisection; falls back to 0.4. The monomial power `p`
/// already includes the `w^{dn}` from the pole factor.
fn saddle_with_pole(p: i64, a: f64, b: f64, dn: i64) -> f64 {
    let h = |r: f64| -> f64 { p as f64 / r + b - a / (r * r) + dn as f64 / (1.0 - r) };
    let (lo, hi) = (1e-3, 0.95);
    let mut prev_r = lo;
    let mut prev = h(lo);
    for i in 1..=300 {
        let r = lo + (hi - lo) * i as f64 / 300.0;
        let cur = h(r);
        if prev <= 0.0 && cur >= 0.0 {
            let (mut a_r, mut b_r) = (prev_r, r);
            for _ in 0..60 {
                let m = 0.5 * (a_r + b_r);
                if h(m) <= 0.0 {
                    a_r = m;
                } else {
                    b_r = m;
                }
            }
            return 0.5 * (a_r + b_r);
        }
        prev = cur;
        prev_r = r;
    }
    if h(lo) > 0.0 {
        lo
    } else if h(hi) < 0.0 {
        hi
    } else {
        0.4
    }
}

fn blocks_converged(new: &[LogScaled], old: &[LogScaled]) -> bool {
    let ls_max = new
        .iter()
        .map(|v| v.log_scale)
        .fold(f64::NEG_INFINITY, f64::max);
    new.iter().zip(old).all(|(n, o)| {
        let delta = o.log_scale - n.log_scale;
        let vo = if delta.abs() < 700.0 {
            o.value * delta.exp()
        } else {
            Complex64::new(0.0, 0.0)
        };
        let diff = (n.value - vo).norm();
        diff < TOL * n.value.norm() || diff * (n.log_scale - ls_max).exp() < 1e-11
    })
}

/// Batched step-kernel main term over `xs1 × xs2`, with a per-entry log
/// offset `(x1 - x2)·log_rho` folded into the scales. The double
/// integral is evaluated as a separated product `A(x1,w)·C(w,z)·B(x2,z)`
/// over tensorized trapezoid nodes, doubled until stable.
#[allow(clippy::too_many_arguments)]
fn step_main_block(
    n1: usize,
    t1: f64,
    n2: usize,
    t2: f64,
    xs1: &[i64],
    xs2: &[i64],
    right: f64,
    left: f64,
    radii: &ContourRadii,
    log_rho: f64,
) -> Result<Vec<LogScaled>, KernelError> {
    radii.check_disjoint()?;
    let (a1, b1) = (right * t1, left * t1);
    let (a2, b2) = (right * t2, left * t2);
    let log_w = move |w: Complex64, x1: f64| -> Complex64 {
        a1 * w + b1 / w + (n1 as f64) * (Complex64::new(1.0, 0.0) - w).ln()
            - (x1 + n1 as f64 + 1.0) * w.ln()
    };
    let log_z = move |z: Complex64, x2: f64| -> Complex64 {
        -a2 * z - b2 / z + (x2 + n2 as f64) * z.ln()
            - (n2 as f64) * (Complex64::new(1.0, 0.0) - z).ln()
    };

    let p_osc = oscillation_power(xs1, n1 as i64 + 1).max(oscillation_power(xs2, n2 as i64));
    let mut nodes = start_nodes(p_osc);
    let mut prev: Option<Vec<LogScaled>> = None;
    loop {
        let vals = tensor_product_block(radii, nodes, xs1, xs2, &log_w, &log_z, log_rho);
        if let Some(p) = &prev {
            if blocks_converged(&vals, p) {
                return Ok(vals);
            }
        }
        prev = Some(vals);
        nodes *= 2;
        if nodes > 16384 {
            return Err(KernelError::Contour(ContourError::NonConvergence { nodes }));
        }
    }
}

/// Largest monomial power over the window (the trapezoid rule needs node
/// counts past the oscillation count to avoid aliasing agreement).
fn oscillation_power(xs: &[i64], shift: i64) -> usize {
    xs.iter()
        .map(|&x| (x + shift).unsigned_abs() as usize)
        .max()
        .unwrap_or(0)
}

fn start_nodes(power: usize) -> usize {
    (power + power / 4 + 64).next_power_of_two().clamp(64, 8192)
}

/// Tensorized trapezoid evaluation of
/// `(1/(2πi)²) ∮∮ e^{logw(w,x1) + logz(z,x2)} / (w - z) dw dz`,
/// one log-scaled value per `(x1, x2)` pair (row-major).
fn tensor_product_block(
    radii: &ContourRadii,
    nodes: usize,
    xs1: &[i64],
    xs2: &[i64],
    log_w: &impl Fn(Complex64, f64) -> Complex64,
    log_z: &impl Fn(Complex64, f64) -> Complex64,
    log_rho: f64,
) -> Vec<LogScaled> {
    let (r0, r1) = (radii.gamma0, radii.gamma1);
    let ws: Vec<Complex64> = (0..nodes)
        .map(|j| Complex64::from_polar(r0, theta(j, nodes)))
        .collect();
    let zs: Vec<Complex64> = (0..nodes)
        .map(|j| Complex64::new(1.0, 0.0) + Complex64::from_polar(r1, theta(j, nodes)))
        .collect();

    let (a, mw) = scaled_rows(xs1, nodes, |x1, j| {
        log_w(ws[j], x1) + Complex64::new(x1 * log_rho, theta(j, nodes))
    });
    let (b, mz) = scaled_rows(xs2, nodes, |x2, k| {
        log_z(zs[k], x2) + Complex64::new(-x2 * log_rho, theta(k, nodes))
    });

    let measure = r0 * r1 / (nodes as f64 * nodes as f64);
    let mut out = Vec::with_capacity(xs1.len() * xs2.len());
    let mut d_row = vec![Complex64::new(0.0, 0.0); nodes];
    for i1 in 0..xs1.len() {
        d_row.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for j in 0..nodes {
            let aij = a[i1 * nodes + j];
            if aij == Complex64::new(0.0, 0.0) {
                continue;
            }
            let wj = ws[j];
            for (dst, &zk) in d_row.iter_mut().zip(&zs) {
                *dst += aij / (wj - zk);
            }
        }
        for i2 in 0..xs2.len() {
            let brow = &b[i2 * nodes..(i2 + 1) * nodes];
            let total: Complex64 = d_row.iter().zip(brow).map(|(&d, &bb)| d * bb).sum();
            out.push(LogScaled {
                log_scale: mw[i1] + mz[i2],
                value: total * measure,
            });
        }
    }
    out
}

#[inline]
fn theta(j: usize, n: usize) -> f64 {
    2.0 * std::f64::consts::PI * j as f64 / n as f64
}

/// Evaluate `exp(e(x, node) - rowmax)` for every x and node; returns the
/// flattened rows and the per-row maxima.
fn scaled_rows(
    xs: &[i64],
    nodes: usize,
    e: impl Fn(f64, usize) -> Complex64,
) -> (Vec<Complex64>, Vec<f64>) {
    let mut vals = vec![Complex64::new(0.0, 0.0); xs.len() * nodes];
    let mut maxima = vec![f64::NEG_INFINITY; xs.len()];
    let mut exps = vec![Complex64::new(0.0, 0.0); nodes];
    for (i, &x) in xs.iter().enumerate() {
        for (j, slot) in exps.iter_mut().enumerate() {
            let v = e(x as f64, j);
            maxima[i] = maxima[i].max(v.re);
            *slot = v;
        }
        for j in 0..nodes {
            vals[i * nodes + j] = (exps[j] - Complex64::new(maxima[i], 0.0)).exp();
        }
    }
    (vals, maxima)
}

/// Batched flat-kernel main term (single `z` integral), same separation
/// trick with the `z`- and `(1-z)`-powers split between the two sides.
#[allow(clippy::too_many_arguments)]
fn flat_main_block(
    n1: usize,
    t1: f64,
    n2: usize,
    t2: f64,
    xs1: &[i64],
    xs2: &[i64],
    right: f64,
    left: f64,
    radii: &ContourRadii,
    log_rho: f64,
) -> Result<Vec<LogScaled>, KernelError> {
    let (a1, b1) = (right * t1, left * t1);
    let (a2, b2) = (right * t2, left * t2);
    let nsum = (n1 + n2) as f64;
    let shift = (n1 + n2) as i64;
    let p_osc = oscillation_power(xs1, shift + 1).max(oscillation_power(xs2, shift));
    let mut nodes = start_nodes(p_osc);
    let mut prev: Option<Vec<LogScaled>> = None;
    loop {
        let zs: Vec<Complex64> = (0..nodes)
            .map(|k| Complex64::new(1.0, 0.0) + Complex64::from_polar(radii.gamma1, theta(k, nodes)))
            .collect();
        // common factor with its own scale
        let mut core = vec![Complex64::new(0.0, 0.0); nodes];
        let mut mc = f64::NEG_INFINITY;
        for (k, &z) in zs.iter().enumerate() {
            let one_minus = Complex64::new(1.0, 0.0) - z;
            let e = a1 * one_minus + b1 / one_minus - a2 * z - b2 / z
                + Complex64::new(nsum, 0.0) * z.ln()
                - Complex64::new(nsum + 1.0, 0.0) * one_minus.ln()
                + Complex64::new(0.0, theta(k, nodes));
            core[k] = e;
            mc = mc.max(e.re);
        }
        let core_vals: Vec<Complex64> = core
            .iter()
            .map(|e| (e - Complex64::new(mc, 0.0)).exp())
            .collect();
        let (a_side, m1) = scaled_rows(xs1, nodes, |x1, k| {
            Complex64::new(x1 * log_rho, 0.0)
                - Complex64::new(x1, 0.0) * (Complex64::new(1.0, 0.0) - zs[k]).ln()
        });
        let (b_side, m2) = scaled_rows(xs2, nodes, |x2, k| {
            Complex64::new(-x2 * log_rho, 0.0) + Complex64::new(x2, 0.0) * zs[k].ln()
        });
        let measure = radii.gamma1 / nodes as f64;
        let mut vals = Vec::with_capacity(xs1.len() * xs2.len());
        for i1 in 0..xs1.len() {
            let arow = &a_side[i1 * nodes..(i1 + 1) * nodes];
            for i2 in 0..xs2.len() {
                let brow = &b_side[i2 * nodes..(i2 + 1) * nodes];
                let total: Complex64 = (0..nodes)
                    .map(|k| arow[k] * brow[k] * core_vals[k])
                    .sum();
                vals.push(LogScaled {
                    log_scale: m1[i1] + m2[i2] + mc,
                    value: -total * measure,
                });
            }
        }
        if let Some(p) = &prev {
            if blocks_converged(&vals, p) {
                return Ok(vals);
            }
        }
        prev = Some(vals);
        nodes *= 2;
        if nodes > DEFAULT_NODE_CAP {
            return Err(KernelError::Contour(ContourError::NonConvergence { nodes }));
        }
    }
}

/// Step-initial-condition kernel (uniform speeds), log-scaled.
pub fn kernel_step_scaled(
    p1: SpaceTimePoint,
    x1: i64,
    p2: SpaceTimePoint,
    x2: i64,
    right: f64,
    left: f64,
    radii: &ContourRadii,
) -> Result<LogScaled, KernelError> {
    let main = step_main_block(p1.n, p1.t, p2.n, p2.t, &[x1], &[x2], right, left, radii, 0.0)?
        .pop()
        .unwrap();
    if !precedes(p1, p2) {
        return Ok(main);
    }
    let da = right * (p1.t - p2.t);
    let db = left * (p1.t - p2.t);
    let ind = indicator_term(x2 - x1, p2.n as i64 - p1.n as i64, da, db, None)?;
    Ok(log_sum(main, ind, 1.0, -1.0))
}

/// Step-initial-condition kernel value.
pub fn kernel_step(
    p1: SpaceTimePoint,
    x1: i64,
    p2: SpaceTimePoint,
    x2: i64,
    right: f64,
    left: f64,
    radii: &ContourRadii,
) -> Result<f64, KernelError> {
    Ok(real_part(
        kernel_step_scaled(p1, x1, p2, x2, right, left, radii)?,
        "kernel_step",
    ))
}

/// Flat-initial-condition kernel, log-scaled.
pub fn kernel_flat_scaled(
    p1: SpaceTimePoint,
    x1: i64,
    p2: SpaceTimePoint,
    x2: i64,
    right: f64,
    left: f64,
    radii: &ContourRadii,
) -> Result<LogScaled, KernelError> {
    let main = flat_main_block(p1.n, p1.t, p2.n, p2.t, &[x1], &[x2], right, left, radii, 0.0)?
        .pop()
        .unwrap();
    if !precedes(p1, p2) {
        return Ok(main);
    }
    let da = right * (p1.t - p2.t);
    let db = left * (p1.t - p2.t);
    let ind = indicator_term(x2 - x1, p2.n as i64 - p1.n as i64, da, db, None)?;
    Ok(log_sum(main, ind, 1.0, -1.0))
}

/// Flat-initial-condition kernel value.
pub fn kernel_flat(
    p1: SpaceTimePoint,
    x1: i64,
    p2: SpaceTimePoint,
    x2: i64,
    right: f64,
    left: f64,
    radii: &ContourRadii,
) -> Result<f64, KernelError> {
    Ok(real_part(
        kernel_flat_scaled(p1, x1, p2, x2, right, left, radii)?,
        "kernel_flat",
    ))
}

/// Finite-N correction `K^{(N)}` of the flat kernel after centering the
/// window on particle N; decays like `κ^N` with
/// `κ = max_{Γ0}|w(w-1)| / min_{Γ1}|z(z-1)| ≈ 0.159` on the preset
/// contours `|w| = e^{-4}`, `|1-z| = e^{-2}`.
#[allow(clippy::too_many_arguments)]
pub fn flat_correction_kn(
    p1: SpaceTimePoint,
    x1: i64,
    p2: SpaceTimePoint,
    x2: i64,
    right: f64,
    left: f64,
    n_shift: usize,
    radii: &ContourRadii,
) -> Result<f64, KernelError> {
    radii.check_disjoint()?;
    let (a1, b1) = (right * p1.t, left * p1.t);
    let (a2, b2) = (right * p2.t, left * p2.t);
    let (n1, n2) = (p1.n as f64, p2.n as f64);
    let nn = n_shift as f64;
    let log_w = move |w: Complex64| -> Complex64 {
        a1 * w + b1 / w + (n1 + nn) * (w - 1.0).ln() - (x1 as f64 + n1 - nn + 1.0) * w.ln()
    };
    let log_z = move |z: Complex64| -> Complex64 {
        -a2 * z - b2 / z - (n2 + nn) * (z - 1.0).ln() + (x2 as f64 + n2 - nn) * z.ln()
    };
    let mut nodes = 64usize;
    let mut prev: Option<LogScaled> = None;
    loop {
        let val = kn_tensor(radii, nodes, &log_w, &log_z);
        if let Some(p) = prev {
            if blocks_converged(&[val], &[p]) {
                return Ok(real_part(val, "flat_correction_kn"));
            }
        }
        prev = Some(val);
        nodes *= 2;
        if nodes > 8192 {
            return Err(KernelError::Contour(ContourError::NonConvergence { nodes }));
        }
    }
}

fn kn_tensor(
    radii: &ContourRadii,
    nodes: usize,
    log_w: &impl Fn(Complex64) -> Complex64,
    log_z: &impl Fn(Complex64) -> Complex64,
) -> LogScaled {
    let (r0, r1) = (radii.gamma0, radii.gamma1);
    let mut ws = Vec::with_capacity(nodes);
    let mut zs = Vec::with_capacity(nodes);
    let mut exps_w = Vec::with_capacity(nodes);
    let mut exps_z = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let th = theta(j, nodes);
        let w = Complex64::from_polar(r0, th);
        let z = Complex64::new(1.0, 0.0) + Complex64::from_polar(r1, th);
        ws.push(w);
        zs.push(z);
        exps_w.push(log_w(w) + Complex64::new(0.0, th));
        exps_z.push(log_z(z) + Complex64::new(0.0, th));
    }
    let mw = exps_w.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    let mz = exps_z.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    let aw: Vec<Complex64> = exps_w
        .iter()
        .map(|e| (e - Complex64::new(mw, 0.0)).exp())
        .collect();
    let bz: Vec<Complex64> = exps_z
        .iter()
        .map(|e| (e - Complex64::new(mz, 0.0)).exp())
        .collect();
    let measure = r0 * r1 / (nodes as f64 * nodes as f64);
    let mut total = Complex64::new(0.0, 0.0);
    for (j, &wj) in ws.iter().enumerate() {
        if aw[j] == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut inner = Complex64::new(0.0, 0.0);
        for (k, &zk) in zs.iter().enumerate() {
            inner += bz[k] * (2.0 * zk - 1.0) / ((wj - zk) * (wj - 1.0 + zk));
        }
        total += aw[j] * inner;
    }
    LogScaled {
        log_scale: mw + mz,
        value: total * measure,
    }
}

/// `c1·u + c2·v` of two log-scaled quantities.
fn log_sum(u: LogScaled, v: LogScaled, c1: f64, c2: f64) -> LogScaled {
    let base = u.log_scale.max(v.log_scale);
    LogScaled {
        log_scale: base,
        value: c1 * u.value * (u.log_scale - base).exp()
            + c2 * v.value * (v.log_scale - base).exp(),
    }
}

/// `Ψ^{n,t}_{n-l}(x)` for general speeds: the coefficient integral with
/// numerator factors `(1-v_j z)` for `j = l+1..n` (or denominator
/// factors `j = n+1..l` when `l > n`).
fn psi_general(
    n: usize,
    t: f64,
    l: usize,
    x: i64,
    plan: &RatePlan,
    initial: &ParticleConfig,
) -> Result<f64, KernelError> {
    let a = plan.profile.a(t);
    let b = plan.profile.b(t);
    let y_l = initial.positions()[l - 1];
    let (numer, denom): (Vec<f64>, Vec<f64>) = if l <= n {
        ((l + 1..=n).map(|j| plan.speed(j)).collect(), Vec::new())
    } else {
        (Vec::new(), (n + 1..=l).map(|j| plan.speed(j)).collect())
    };
    let got = coeff_integral_scaled(x - y_l, a, b, &numer, &denom)?;
    Ok(real_part(got, "psi_general"))
}

/// Complete homogeneous symmetric polynomials `h_0..h_max` of the given
/// variables, by the streaming recurrence (positive terms only, stable
/// under coinciding speeds).
fn complete_homogeneous(values: &[f64], max_degree: usize) -> Vec<f64> {
    let mut h = vec![0.0; max_degree + 1];
    h[0] = 1.0;
    for &v in values {
        for i in 1..=max_degree {
            h[i] += v * h[i - 1];
        }
    }
    h
}

/// The exponential basis `f̂_q(x)` spanning `V_n`, supported by the
/// speeds `v_{n-q}..v_n` and normalized so the Gram diagonal equals
/// `v_{n-q}^{y_{n-q}+1} e^{a v + b/v}`.
struct ExponentialBasis {
    /// per q: (leading speed, h-table in v, h-table in 1/v, product of speeds)
    tables: Vec<(f64, Vec<f64>, Vec<f64>, f64)>,
}

impl ExponentialBasis {
    fn build(plan: &RatePlan, n: usize, max_degree: usize) -> Self {
        let mut tables = Vec::with_capacity(n);
        for q in 0..n {
            let vals: Vec<f64> = (n - q..=n).map(|j| plan.speed(j)).collect();
            let inv: Vec<f64> = vals.iter().map(|v| 1.0 / v).collect();
            let prod: f64 = vals.iter().product();
            tables.push((
                plan.speed(n - q),
                complete_homogeneous(&vals, max_degree),
                complete_homogeneous(&inv, max_degree),
                prod,
            ));
        }
        ExponentialBasis { tables }
    }

    fn eval(&self, q: usize, x: i64) -> f64 {
        let (v_lead, h, h_inv, prod) = &self.tables[q];
        let qi = q as i64;
        if x >= 0 {
            v_lead * h[x as usize]
        } else if x >= -qi {
            0.0
        } else {
            let deg = (-x - qi - 1) as usize;
            let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
            sign * v_lead / prod * h_inv[deg]
        }
    }
}

/// Gram system `G_{q,l} = Σ_x f̂_q(x) Ψ^{n,t}_l(x)` for one level and
/// time, with the inverse rows expanding the `Φ` family.
pub struct GramSystem {
    n: usize,
    basis: ExponentialBasis,
    inv_rows: Vec<Vec<f64>>,
    pub gram: Matrix,
}

impl GramSystem {
    pub fn build(
        n: usize,
        t: f64,
        plan: &RatePlan,
        initial: &ParticleConfig,
    ) -> Result<Self, KernelError> {
        assert!(initial.len() >= n && plan.n() >= n);
        let y = initial.positions();
        let y_lo = y[..n].iter().copied().min().unwrap();
        let y_hi = y[..n].iter().copied().max().unwrap();
        // Ψ mass concentrates near the initial positions and dies off
        // superexponentially; the margin covers t ≤ ~4 at unit rates
        let lo = y_lo - 160;
        let hi = y_hi + 160;
        let max_degree = hi.max(0).max(-lo) as usize + 1;
        let basis = ExponentialBasis::build(plan, n, max_degree);
        let mut psi_vals = vec![vec![0.0; (hi - lo + 1) as usize]; n];
        for l in 0..n {
            for (idx, x) in (lo..=hi).enumerate() {
                psi_vals[l][idx] = psi_general(n, t, n - l, x, plan, initial)?;
            }
        }
        let mut gram = Matrix::zeros(n);
        for q in 0..n {
            for l in 0..n {
                let mut acc = 0.0;
                for (idx, x) in (lo..=hi).enumerate() {
                    let f = basis.eval(q, x);
                    if f != 0.0 {
                        acc += f * psi_vals[l][idx];
                    }
                }
                gram.set(q, l, acc);
            }
        }
        // rows of the inverse: solving G^T x = e_q gives row q of G^{-1}
        let gt = Matrix::from_fn(n, |i, j| gram.get(j, i));
        let rhs: Vec<Vec<f64>> = (0..n)
            .map(|q| (0..n).map(|i| if i == q { 1.0 } else { 0.0 }).collect())
            .collect();
        let inv_rows = solve_full_pivot(&gt, &rhs, 1e12)?;
        Ok(GramSystem {
            n,
            basis,
            inv_rows,
            gram,
        })
    }

    /// `Φ^{n,t}_q(x) = Σ_l [G^{-1}]_{q,l} f̂_l(x)`.
    pub fn phi(&self, q: usize, x: i64) -> f64 {
        assert!(q < self.n);
        (0..self.n)
            .map(|l| self.inv_rows[q][l] * self.basis.eval(l, x))
            .sum()
    }

    pub fn det(&self) -> f64 {
        crate::linalg::det_lu(self.gram.clone())
    }
}

/// General-speeds kernel `-phi + Σ_{k=1..n2} Ψ^{n1,t1}_{n1-k} Φ^{n2,t2}_{n2-k}`.
pub fn kernel_general(
    p1: SpaceTimePoint,
    x1: i64,
    p2: SpaceTimePoint,
    x2: i64,
    spec: &KernelSpec,
) -> Result<f64, KernelError> {
    let initial = spec
        .initial
        .as_ref()
        .ok_or_else(|| KernelError::Unsupported("general kernel requires initial positions".into()))?;
    if p1.n > 10 || p2.n > 10 {
        return Err(KernelError::Unsupported(
            "general kernel supports labels up to 10".into(),
        ));
    }
    let gram = GramSystem::build(p2.n, p2.t, &spec.plan, initial)?;
    kernel_general_with(&gram, p1, x1, p2, x2, spec)
}

/// Same as [`kernel_general`] with a prebuilt Gram system for the second
/// point's level and time.
pub fn kernel_general_with(
    gram: &GramSystem,
    p1: SpaceTimePoint,
    x1: i64,
    p2: SpaceTimePoint,
    x2: i64,
    spec: &KernelSpec,
) -> Result<f64, KernelError> {
    let plan = &spec.plan;
    let initial = spec.initial.as_ref().unwrap();
    let mut total = -crate::transition::spacelike_transition(p1, p2, x1, x2, plan)?;
    for k in 1..=p2.n {
        let psi = psi_general(p1.n, p1.t, k, x1, plan, initial)?;
        let phi = gram.phi(p2.n - k, x2);
        total += psi * phi;
    }
    Ok(total)
}

/// Conjugated kernel block for discrete Fredholm determinants: entries
/// `K(p1,x1;p2,x2)·ρ^{x1-x2}` over `xs1 × xs2`, row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn kernel_block_conjugated(
    variant: KernelVariant,
    p1: SpaceTimePoint,
    xs1: &[i64],
    p2: SpaceTimePoint,
    xs2: &[i64],
    right: f64,
    left: f64,
    radii: &ContourRadii,
    rho: f64,
) -> Result<Vec<f64>, KernelError> {
    let log_rho = rho.ln();
    let main = match variant {
        KernelVariant::Step => {
            step_main_block(p1.n, p1.t, p2.n, p2.t, xs1, xs2, right, left, radii, log_rho)?
        }
        KernelVariant::Flat => {
            flat_main_block(p1.n, p1.t, p2.n, p2.t, xs1, xs2, right, left, radii, log_rho)?
        }
        KernelVariant::General => {
            return Err(KernelError::Unsupported(
                "windowed determinants use the step or flat closed forms".into(),
            ));
        }
    };
    let mut out: Vec<f64> = main.into_iter().map(|v| v.to_f64()).collect();
    if precedes(p1, p2) {
        let da = right * (p1.t - p2.t);
        let db = left * (p1.t - p2.t);
        let dn = p2.n as i64 - p1.n as i64;
        let d_lo = xs2.iter().min().unwrap() - xs1.iter().max().unwrap();
        let d_hi = xs2.iter().max().unwrap() - xs1.iter().min().unwrap();
        let mut by_diff = Vec::with_capacity((d_hi - d_lo + 1) as usize);
        for d in d_lo..=d_hi {
            let v = indicator_term(d, dn, da, db, None)?;
            by_diff.push(v.scaled_by(-(d as f64) * log_rho).to_f64());
        }
        for (i, &x1) in xs1.iter().enumerate() {
            for (j, &x2) in xs2.iter().enumerate() {
                out[i * xs2.len() + j] -= by_diff[(x2 - x1 - d_lo) as usize];
            }
        }
    }
    Ok(out)
}
