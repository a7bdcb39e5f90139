//! Fredholm determinants: discrete ℓ² determinants for finite-time joint
//! distributions along space-like paths, and continuum Nyström
//! determinants for the Airy limit processes.

use thiserror::Error;

use crate::kernels::{
    default_conjugation, kernel_block_conjugated, ContourRadii, KernelError, KernelSpec,
};
use crate::limits::{airy1_kernel, airy2_kernel};
use crate::linalg::{det_lu, gauss_legendre, Matrix};
use crate::transition::SpaceLikePath;

#[derive(Debug, Error)]
pub enum FredholmError {
    #[error("window doubling did not converge: last change {last_change:.3e} at W = {window}")]
    WindowDivergence { window: usize, last_change: f64 },
    #[error("quadrature refinement did not converge: last change {last_change:.3e} at order {order}")]
    QuadratureDivergence { order: usize, last_change: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Joint-distribution problem `P(∩ x_{n_k}(t_k) >= s_k)` for a finite
/// PushASEP system: determinant of `I - χ K̃ χ` with the projection
/// `x < s_k` per point, evaluated on windows `[s_k - W, s_k - 1]`.
#[derive(Debug, Clone)]
pub struct DiscreteDetProblem {
    pub path: SpaceLikePath,
    pub thresholds: Vec<i64>,
    pub kernel: KernelSpec,
    /// Initial window depth (grown by doubling), at least 16.
    pub window: usize,
    /// Conjugation base ρ ∈ (0,1).
    pub conjugation: f64,
    pub radii: ContourRadii,
}

impl DiscreteDetProblem {
    pub fn new(path: SpaceLikePath, thresholds: Vec<i64>, kernel: KernelSpec) -> Self {
        let radii = ContourRadii::default();
        DiscreteDetProblem {
            path,
            thresholds,
            kernel,
            window: 16,
            conjugation: default_conjugation(&radii),
            radii,
        }
    }

    fn validate(&self) -> Result<(), FredholmError> {
        if self.path.len() != self.thresholds.len() {
            return Err(FredholmError::Invalid(
                "one threshold per path point required".into(),
            ));
        }
        if self.path.is_empty() || self.path.len() > 4 {
            return Err(FredholmError::Invalid(
                "between 1 and 4 path points supported".into(),
            ));
        }
        if self.window < 16 {
            return Err(FredholmError::Invalid("window must be at least 16".into()));
        }
        if !(0.0..1.0).contains(&self.conjugation) || self.conjugation == 0.0 {
            return Err(FredholmError::Invalid(
                "conjugation base must lie in (0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a windowed determinant evaluation with its doubling trace.
#[derive(Debug, Clone)]
pub struct DiscreteDetResult {
    /// Clamped to [0,1].
    pub probability: f64,
    /// Raw determinant before clamping.
    pub raw: f64,
    pub window_used: usize,
    /// `(window, determinant)` history.
    pub trace: Vec<(usize, f64)>,
}

/// Evaluate the joint distribution by window doubling until the
/// determinant moves by less than 1e-8 (at most five doublings).
pub fn joint_distribution_discrete(
    p: &DiscreteDetProblem,
) -> Result<DiscreteDetResult, FredholmError> {
    p.validate()?;
    let mut window = p.window;
    let mut trace = Vec::new();
    let mut prev: Option<f64> = None;
    let mut last_change = f64::INFINITY;
    for _ in 0..=5 {
        let det = windowed_determinant(p, window)?;
        trace.push((window, det));
        if let Some(prev) = prev {
            last_change = (det - prev).abs();
            if last_change < 1e-8 {
                return Ok(DiscreteDetResult {
                    probability: det.clamp(0.0, 1.0),
                    raw: det,
                    window_used: window,
                    trace,
                });
            }
        }
        prev = Some(det);
        window *= 2;
    }
    Err(FredholmError::WindowDivergence {
        window: window / 2,
        last_change,
    })
}

fn windowed_determinant(p: &DiscreteDetProblem, window: usize) -> Result<f64, FredholmError> {
    let m = p.path.len();
    let points = p.path.points();
    let (right, left) = homogeneous_rates(&p.kernel)?;
    // window sites per point, and flat offsets into the block matrix
    let sites: Vec<Vec<i64>> = p
        .thresholds
        .iter()
        .map(|&s| (s - window as i64..s).collect())
        .collect();
    let offsets: Vec<usize> = sites
        .iter()
        .scan(0usize, |acc, s| {
            let cur = *acc;
            *acc += s.len();
            Some(cur)
        })
        .collect();
    let total: usize = sites.iter().map(|s| s.len()).sum();
    let mut mat = Matrix::from_fn(total, |i, j| if i == j { 1.0 } else { 0.0 });
    for k in 0..m {
        for l in 0..m {
            let block = kernel_block_conjugated(
                p.kernel.variant,
                points[k],
                &sites[k],
                points[l],
                &sites[l],
                right,
                left,
                &p.radii,
                p.conjugation,
            )?;
            let cols = sites[l].len();
            for (i, row) in block.chunks(cols).enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let r = offsets[k] + i;
                    let c = offsets[l] + j;
                    mat.set(r, c, mat.get(r, c) - v);
                }
            }
        }
    }
    Ok(det_lu(mat))
}

fn homogeneous_rates(kernel: &KernelSpec) -> Result<(f64, f64), FredholmError> {
    match &kernel.plan.profile {
        crate::transition::ClockProfile::Homogeneous { right, left } => Ok((*right, *left)),
        _ => Err(FredholmError::Invalid(
            "windowed determinants require homogeneous rates".into(),
        )),
    }
}

/// Truncated Fredholm series
/// `Σ_{n=0}^{order} ((-1)^n/n!) Σ_{i,x} det[K(i_k,x_k;i_l,x_l)]`
/// over the windows of `p`; an independent oracle for the determinant
/// evaluator on small instances (order ≤ 3, windows ≤ 30 sites).
pub fn fredholm_series_reference(
    p: &DiscreteDetProblem,
    order: usize,
) -> Result<f64, FredholmError> {
    p.validate()?;
    if order > 3 {
        return Err(FredholmError::Invalid("series order capped at 3".into()));
    }
    if p.window > 30 {
        return Err(FredholmError::Invalid(
            "series reference limited to 30-site windows".into(),
        ));
    }
    let m = p.path.len();
    let points = p.path.points();
    let (right, left) = homogeneous_rates(&p.kernel)?;
    let sites: Vec<Vec<i64>> = p
        .thresholds
        .iter()
        .map(|&s| (s - p.window as i64..s).collect())
        .collect();
    let total: usize = sites.iter().map(|s| s.len()).sum();
    // full conjugated kernel matrix over the combined index set
    let mut kmat = vec![0.0; total * total];
    let offsets: Vec<usize> = sites
        .iter()
        .scan(0usize, |acc, s| {
            let cur = *acc;
            *acc += s.len();
            Some(cur)
        })
        .collect();
    for k in 0..m {
        for l in 0..m {
            let block = kernel_block_conjugated(
                p.kernel.variant,
                points[k],
                &sites[k],
                points[l],
                &sites[l],
                right,
                left,
                &p.radii,
                p.conjugation,
            )?;
            let cols = sites[l].len();
            for (i, row) in block.chunks(cols).enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    kmat[(offsets[k] + i) * total + offsets[l] + j] = v;
                }
            }
        }
    }
    let at = |i: usize, j: usize| kmat[i * total + j];

    let mut acc = 1.0; // n = 0 term
    if order >= 1 {
        let tr: f64 = (0..total).map(|i| at(i, i)).sum();
        acc -= tr;
    }
    if order >= 2 {
        let mut s2 = 0.0;
        for i in 0..total {
            for j in 0..total {
                s2 += at(i, i) * at(j, j) - at(i, j) * at(j, i);
            }
        }
        acc += s2 / 2.0;
    }
    if order >= 3 {
        let mut s3 = 0.0;
        for i in 0..total {
            for j in 0..total {
                for k in 0..total {
                    let det3 = at(i, i) * (at(j, j) * at(k, k) - at(j, k) * at(k, j))
                        - at(i, j) * (at(j, i) * at(k, k) - at(j, k) * at(k, i))
                        + at(i, k) * (at(j, i) * at(k, j) - at(j, j) * at(k, i));
                    s3 += det3;
                }
            }
        }
        acc -= s3 / 6.0;
    }
    Ok(acc)
}

/// Which Airy limit process a continuum determinant refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AiryProcess {
    Airy1,
    Airy2,
}

/// Joint-distribution problem for the limit processes:
/// `P(∩ A(u_k) <= s_k) = det(I - χ_s K χ_s)` on
/// `L²({u_1..u_m} × ℝ)` with the projection `x > s_k`.
#[derive(Debug, Clone)]
pub struct ContinuumDetProblem {
    pub times: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub process: AiryProcess,
    /// Half-line truncation: each slice integrates over `[s_k, s_k + cutoff]`.
    pub cutoff: f64,
    /// Gauss–Legendre order per slice.
    pub quad_order: usize,
}

impl ContinuumDetProblem {
    pub fn new(process: AiryProcess, times: Vec<f64>, thresholds: Vec<f64>) -> Self {
        ContinuumDetProblem {
            times,
            thresholds,
            process,
            cutoff: 14.0,
            quad_order: 40,
        }
    }

    fn validate(&self) -> Result<(), FredholmError> {
        if self.times.len() != self.thresholds.len() || self.times.is_empty() {
            return Err(FredholmError::Invalid(
                "one threshold per time required".into(),
            ));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FredholmError::Invalid("times must be increasing".into()));
        }
        if !(20..=200).contains(&self.quad_order) {
            return Err(FredholmError::Invalid(
                "quadrature order must lie in [20, 200]".into(),
            ));
        }
        if self.cutoff < 8.0 {
            return Err(FredholmError::Invalid("cutoff must be at least 8".into()));
        }
        Ok(())
    }
}

/// Nyström evaluation with one refinement check: the result at
/// `(q, cutoff)` must agree with `(2q, 1.5·cutoff)` to 1e-7, else the
/// refinement repeats (twice) before reporting divergence.
pub fn joint_distribution_continuum(p: &ContinuumDetProblem) -> Result<f64, FredholmError> {
    p.validate()?;
    let mut q = p.quad_order;
    let mut cutoff = p.cutoff;
    let mut value = nystrom_determinant(p, q, cutoff);
    for _ in 0..3 {
        let refined = nystrom_determinant(p, q * 2, cutoff * 1.5);
        let change = (refined - value).abs();
        if change < 1e-7 {
            return Ok(refined);
        }
        value = refined;
        q *= 2;
        cutoff *= 1.5;
        if q > 800 {
            return Err(FredholmError::QuadratureDivergence {
                order: q,
                last_change: change,
            });
        }
    }
    Err(FredholmError::QuadratureDivergence {
        order: q,
        last_change: f64::NAN,
    })
}

/// Single Nyström evaluation at the problem's own order and cutoff,
/// without the refinement loop (used by convergence studies).
pub fn nystrom_value(p: &ContinuumDetProblem) -> Result<f64, FredholmError> {
    p.validate()?;
    Ok(nystrom_determinant(p, p.quad_order, p.cutoff))
}

/// One Nyström discretization: Gauss–Legendre nodes on
/// `[s_k, s_k + cutoff]` per slice, square-root weight symmetrization.
fn nystrom_determinant(p: &ContinuumDetProblem, q: usize, cutoff: f64) -> f64 {
    let m = p.times.len();
    let (gl_nodes, gl_weights) = gauss_legendre(q);
    let mut nodes = Vec::with_capacity(m);
    let mut sqrt_w = Vec::with_capacity(m);
    for &s in &p.thresholds {
        let half = cutoff / 2.0;
        let mid = s + half;
        let xs: Vec<f64> = gl_nodes.iter().map(|t| mid + half * t).collect();
        let ws: Vec<f64> = gl_weights.iter().map(|w| (w * half).sqrt()).collect();
        nodes.push(xs);
        sqrt_w.push(ws);
    }
    let total = m * q;
    let mut mat = Matrix::from_fn(total, |i, j| if i == j { 1.0 } else { 0.0 });
    match p.process {
        AiryProcess::Airy1 => {
            for k in 0..m {
                for l in 0..m {
                    for i in 0..q {
                        for j in 0..q {
                            let v = airy1_kernel(p.times[k], nodes[k][i], p.times[l], nodes[l][j])
                                * sqrt_w[k][i]
                                * sqrt_w[l][j];
                            let (r, c) = (k * q + i, l * q + j);
                            mat.set(r, c, mat.get(r, c) - v);
                        }
                    }
                }
            }
        }
        AiryProcess::Airy2 => {
            // forward blocks share the positive-λ grid: cache Ai(x+λ)
            let lam_hi = 26.0 + (-p.thresholds.iter().cloned().fold(f64::INFINITY, f64::min))
                .max(0.0);
            let (lam_nodes, lam_weights) = panel_grid(0.0, lam_hi, 1.0, 16);
            let ai_cache: Vec<Vec<f64>> = nodes
                .iter()
                .map(|xs| {
                    let mut grid = Vec::with_capacity(xs.len() * lam_nodes.len());
                    for &x in xs {
                        for &lam in &lam_nodes {
                            grid.push(crate::limits::airy_ai(x + lam));
                        }
                    }
                    grid
                })
                .collect();
            let nl = lam_nodes.len();
            for k in 0..m {
                for l in 0..m {
                    let du = p.times[l] - p.times[k];
                    if du >= 0.0 {
                        // ∫_0^∞ e^{-λ·du} Ai Ai dλ via the shared grid
                        let wvec: Vec<f64> = lam_weights
                            .iter()
                            .zip(&lam_nodes)
                            .map(|(w, lam)| w * (-lam * du).exp())
                            .collect();
                        for i in 0..q {
                            let row_k = &ai_cache[k][i * nl..(i + 1) * nl];
                            for j in 0..q {
                                let row_l = &ai_cache[l][j * nl..(j + 1) * nl];
                                let mut v = 0.0;
                                for t in 0..nl {
                                    v += wvec[t] * row_k[t] * row_l[t];
                                }
                                v *= sqrt_w[k][i] * sqrt_w[l][j];
                                let (r, c) = (k * q + i, l * q + j);
                                mat.set(r, c, mat.get(r, c) - v);
                            }
                        }
                    } else {
                        for i in 0..q {
                            for j in 0..q {
                                let v = airy2_kernel(
                                    p.times[k],
                                    nodes[k][i],
                                    p.times[l],
                                    nodes[l][j],
                                ) * sqrt_w[k][i]
                                    * sqrt_w[l][j];
                                let (r, c) = (k * q + i, l * q + j);
                                mat.set(r, c, mat.get(r, c) - v);
                            }
                        }
                    }
                }
            }
        }
    }
    det_lu(mat)
}

/// Composite Gauss–Legendre grid on `[lo, hi]` with the given panel
/// width and per-panel order.
fn panel_grid(lo: f64, hi: f64, panel: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (n, w) = gauss_legendre(order);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut a = lo;
    while a < hi - 1e-12 {
        let b = (a + panel).min(hi);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, wt) in n.iter().zip(&w) {
            nodes.push(mid + half * x);
            weights.push(wt * half);
        }
        a = b;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::skellam_sf;
    use crate::transition::{
        green_function, ParticleConfig, RatePlan, SpaceLikePath, SpaceTimePoint,
    };

    fn step_problem(path: Vec<SpaceTimePoint>, thresholds: Vec<i64>, r: f64, l: f64) -> DiscreteDetProblem {
        DiscreteDetProblem::new(
            SpaceLikePath::new(path).unwrap(),
            thresholds,
            KernelSpec::step(r, l),
        )
    }

    #[test]
    fn empty_projection_gives_one() {
        // thresholds far below all reachable mass
        let p = step_problem(vec![SpaceTimePoint::new(1, 1.0)], vec![-200], 1.0, 1.0);
        let got = joint_distribution_discrete(&p).unwrap();
        assert!((got.probability - 1.0).abs() < 1e-9, "{}", got.raw);
    }

    #[test]
    fn single_particle_skellam_tail() {
        // step initial data: x_1(0) = -1, free particle
        let (r, l) = (1.0, 1.0);
        let t = 1.0;
        for s in [-3i64, -1, 0, 2] {
            let p = step_problem(vec![SpaceTimePoint::new(1, t)], vec![s], r, l);
            let got = joint_distribution_discrete(&p).unwrap();
            let want = skellam_sf(s + 1, r * t, l * t);
            assert!(
                (got.probability - want).abs() < 1e-8,
                "s={s}: {} vs {want}",
                got.probability
            );
        }
    }

    #[test]
    fn tasep_second_particle_matches_green() {
        // pure TASEP: m=1, n=2, t=1, R=1, L=0
        let (r, l) = (1.0, 0.0);
        let t = 1.0;
        let s = -2i64;
        let p = step_problem(vec![SpaceTimePoint::new(2, t)], vec![s], r, l);
        let got = joint_distribution_discrete(&p).unwrap();
        let y = ParticleConfig::step(2);
        let plan = RatePlan::uniform(2, r, l);
        let mut want = 0.0;
        for x2 in s..=12 {
            for x1 in x2 + 1..=13 {
                want += green_function(&y, &[x1, x2], t, &plan).unwrap();
            }
        }
        assert!(
            (got.probability - want).abs() < 1e-6,
            "{} vs {want}",
            got.probability
        );
    }

    #[test]
    fn two_point_joint_matches_green() {
        // equal-time pair ((1,t),(2,t)) against the 2-particle law
        let (r, l) = (1.0, 1.0);
        let t = 0.7;
        let (s1, s2) = (-1i64, -3i64);
        let p = step_problem(
            vec![SpaceTimePoint::new(1, t), SpaceTimePoint::new(2, t)],
            vec![s1, s2],
            r,
            l,
        );
        let got = joint_distribution_discrete(&p).unwrap();
        let y = ParticleConfig::step(2);
        let plan = RatePlan::uniform(2, r, l);
        let mut want = 0.0;
        for x1 in s1..=13 {
            for x2 in s2..x1 {
                want += green_function(&y, &[x1, x2], t, &plan).unwrap();
            }
        }
        assert!(
            (got.probability - want).abs() < 1e-6,
            "{} vs {want}",
            got.probability
        );
    }

    #[test]
    fn conjugation_invariance() {
        let (r, l) = (1.0, 0.6);
        let mut p = step_problem(
            vec![SpaceTimePoint::new(1, 1.0), SpaceTimePoint::new(3, 0.4)],
            vec![-1, -4],
            r,
            l,
        );
        let a = joint_distribution_discrete(&p).unwrap().raw;
        p.conjugation = 0.61;
        let b = joint_distribution_discrete(&p).unwrap().raw;
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn monotone_in_thresholds() {
        // P(x_2(t) >= s) is nonincreasing in s and tends to 1 as the
        // threshold drops below the reachable support
        let (r, l) = (1.0, 1.0);
        let t = 1.0;
        let mut prev = 1.0;
        let mut first = f64::NAN;
        for s in -6..=3 {
            let p = step_problem(vec![SpaceTimePoint::new(2, t)], vec![s], r, l);
            let got = joint_distribution_discrete(&p).unwrap().probability;
            assert!(got <= prev + 1e-9, "s={s}: {got} > {prev}");
            if first.is_nan() {
                first = got;
            }
            prev = got;
        }
        assert!(first > 0.99, "lower tail should approach 1: {first}");
        assert!(prev < first);
    }

    #[test]
    fn flat_kernel_determinant_probability_range() {
        let p = DiscreteDetProblem::new(
            SpaceLikePath::new(vec![SpaceTimePoint::new(3, 1.0)]).unwrap(),
            vec![-5],
            KernelSpec::flat(1.0, 1.0),
        );
        let got = joint_distribution_discrete(&p).unwrap();
        assert!(got.raw > -1e-8 && got.raw < 1.0 + 1e-8);
        assert!(got.probability > 0.0 && got.probability < 1.0);
    }

    #[test]
    fn series_reference_small_orders() {
        let mut p = step_problem(vec![SpaceTimePoint::new(1, 0.3)], vec![-1], 0.4, 0.2);
        p.window = 20;
        // order 0 is the empty sum
        assert_eq!(fredholm_series_reference(&p, 0).unwrap(), 1.0);
        // small kernel norm: order-3 series vs exact determinant < 1e-9
        let det = windowed_determinant(&p, 20).unwrap();
        let series = fredholm_series_reference(&p, 3).unwrap();
        assert!((det - series).abs() < 1e-9, "{det} vs {series}");
    }

    #[test]
    fn series_truncation_bounded_by_next_order() {
        let mut p = step_problem(vec![SpaceTimePoint::new(1, 1.0)], vec![0], 1.0, 0.8);
        p.window = 20;
        let det = windowed_determinant(&p, 20).unwrap();
        let s2 = fredholm_series_reference(&p, 2).unwrap();
        let s3 = fredholm_series_reference(&p, 3).unwrap();
        // Hadamard-style estimate of the order-4 term: (4^2/4!)·M^4 with
        // M the entrywise l1-dominance of the trace
        let order3_term = (s3 - s2).abs();
        assert!(
            (det - s3).abs() <= 3.0 * order3_term.max(1e-12),
            "remainder {} vs order-3 term {order3_term}",
            (det - s3).abs()
        );
    }

    #[test]
    fn continuum_gap_probability_limits() {
        // far-right threshold: empty projection, determinant 1
        let p = ContinuumDetProblem::new(AiryProcess::Airy2, vec![0.0], vec![9.0]);
        let got = joint_distribution_continuum(&p).unwrap();
        assert!((got - 1.0).abs() < 1e-7, "{got}");
        // far-left threshold: probability collapses toward 0
        let p = ContinuumDetProblem::new(AiryProcess::Airy2, vec![0.0], vec![-6.5]);
        let got = joint_distribution_continuum(&p).unwrap();
        assert!(got < 1e-3, "{got}");
    }

    #[test]
    fn airy2_one_point_is_monotone_distribution() {
        let mut prev = 0.0;
        for s in [-4.0, -2.0, -1.0, 0.0, 1.0, 2.5] {
            let p = ContinuumDetProblem::new(AiryProcess::Airy2, vec![0.0], vec![s]);
            let v = joint_distribution_continuum(&p).unwrap();
            assert!(v >= prev - 1e-9 && (0.0..=1.0 + 1e-9).contains(&v), "s={s}: {v}");
            prev = v;
        }
        assert!(prev > 0.95);
    }

    #[test]
    fn airy1_one_point_is_monotone_distribution() {
        let mut prev = 0.0;
        for s in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let p = ContinuumDetProblem::new(AiryProcess::Airy1, vec![0.0], vec![s]);
            let v = joint_distribution_continuum(&p).unwrap();
            assert!(v >= prev - 1e-9 && (0.0..=1.0 + 1e-9).contains(&v), "s={s}: {v}");
            prev = v;
        }
        assert!(prev > 0.9);
    }

    #[test]
    fn airy2_two_point_factorizes_at_large_separation() {
        let s = 0.5;
        let joint = joint_distribution_continuum(&ContinuumDetProblem::new(
            AiryProcess::Airy2,
            vec![0.0, 10.0],
            vec![s, s],
        ))
        .unwrap();
        let single = joint_distribution_continuum(&ContinuumDetProblem::new(
            AiryProcess::Airy2,
            vec![0.0],
            vec![s],
        ))
        .unwrap();
        assert!(
            (joint - single * single).abs() < 1e-4,
            "joint {joint} vs product {}",
            single * single
        );
    }
}
