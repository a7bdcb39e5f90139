//! Exact continuous-time Monte Carlo of PushASEP.
//!
//! Right jumps obey the exclusion rule (blocked by an occupied
//! neighbor); a left jump shifts the maximal contiguous block of
//! particles ending at the jumper one site left, preserving labels.
//! Homogeneous rates run through a direct Gillespie loop with a single
//! total-rate clock; time-dependent profiles are handled by Poisson
//! thinning against a user-supplied dominating rate. A separate
//! per-particle-clock engine provides coupled randomness for the flat
//! buffer audit.

use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp1};
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

use crate::transition::{ClockProfile, ParticleConfig, RatePlan, SpaceLikePath};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("thinning bound violated: total rate {rate} exceeds dominating bound {bound} at t={t}")]
    InvalidBound { rate: f64, bound: f64, t: f64 },
    #[error("observable index {index} outside the simulated particle set of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Initial condition of a simulation.
#[derive(Debug, Clone)]
pub enum InitialCondition {
    /// Step data: particles 1..=n at `-1, -2, ..., -n`.
    Step { n: usize },
    /// Flat data: `window` observed particles on `-2, -4, ...` plus
    /// `buffer` particles on `0, 2, ..., 2(buffer-1)` to the right
    /// (lower labels). Observable index `n` maps to simulated label
    /// `n + buffer`.
    Flat { window: usize, buffer: usize },
    Explicit(ParticleConfig),
}

impl InitialCondition {
    pub fn positions(&self) -> Vec<i64> {
        match self {
            InitialCondition::Step { n } => (1..=*n as i64).map(|i| -i).collect(),
            InitialCondition::Flat { window, buffer } => {
                let b = *buffer as i64;
                (1..=(*window as i64 + b)).map(|k| 2 * (b - k)).collect()
            }
            InitialCondition::Explicit(cfg) => cfg.positions().to_vec(),
        }
    }

    /// Offset from observable label to simulated index.
    pub fn label_offset(&self) -> usize {
        match self {
            InitialCondition::Flat { buffer, .. } => *buffer,
            _ => 0,
        }
    }
}

/// Simulation configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub plan: RatePlan,
    pub initial: InitialCondition,
    pub t_max: f64,
    pub seed: u64,
    pub replicas: u64,
    /// Dominating total-rate bound, required for time-dependent profiles.
    pub dominating_rate: Option<f64>,
    /// Worker threads for replica ensembles. Replica seeds are keyed by
    /// absolute index, so results are bit-identical for any value.
    pub threads: usize,
}

impl SimConfig {
    pub fn homogeneous(initial: InitialCondition, right: f64, left: f64, t_max: f64, seed: u64) -> Self {
        let n = initial.positions().len();
        SimConfig {
            plan: RatePlan::uniform(n, right, left),
            initial,
            t_max,
            seed,
            replicas: 1,
            dominating_rate: None,
            threads: 1,
        }
    }
}

/// Split `0..total` into ranges and run `work` on each (scoped threads
/// when more than one is requested); outputs are concatenated in range
/// order, so any thread count yields the same result.
fn run_chunked<T: Send>(
    total: u64,
    threads: usize,
    work: impl Fn(std::ops::Range<u64>) -> Result<T, SimError> + Sync,
) -> Result<Vec<T>, SimError> {
    let threads = threads.clamp(1, total.max(1) as usize);
    if threads == 1 {
        return Ok(vec![work(0..total)?]);
    }
    let chunk = total.div_ceil(threads as u64);
    let ranges: Vec<std::ops::Range<u64>> = (0..threads as u64)
        .map(|i| (i * chunk).min(total)..((i + 1) * chunk).min(total))
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .into_iter()
            .map(|r| scope.spawn(|| work(r)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replica worker panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Right,
    Left,
}

/// One applied move (blocked right attempts are not moves and are not
/// logged).
#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time: f64,
    /// 1-based particle label (right-to-left).
    pub particle: usize,
    pub direction: Direction,
    /// Number of particles displaced (1 for right jumps, block length
    /// for left pushes).
    pub block_len: usize,
}

/// Event log plus terminal state of a single run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: ParticleConfig,
    pub events: Vec<Event>,
    pub terminal: ParticleConfig,
}

/// Mutable particle state; the strict ordering invariant makes the
/// position array itself an O(1) occupancy oracle (only particle k-1
/// can sit on the site ahead of particle k).
struct State {
    pos: Vec<i64>,
}

impl State {
    fn right_free(&self, k: usize) -> bool {
        k == 0 || self.pos[k - 1] > self.pos[k] + 1
    }

    /// Apply a right jump if the target is free; true if moved.
    fn try_right(&mut self, k: usize) -> bool {
        if self.right_free(k) {
            self.pos[k] += 1;
            true
        } else {
            false
        }
    }

    /// Apply a left push initiated by particle k; returns block length.
    fn push_left(&mut self, k: usize) -> usize {
        let mut j = k;
        while j + 1 < self.pos.len() && self.pos[j + 1] == self.pos[j] - 1 {
            j += 1;
        }
        for m in k..=j {
            self.pos[m] -= 1;
        }
        j - k + 1
    }
}

fn replica_rng(seed: u64, replica: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(splitmix(seed ^ splitmix(replica)))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Observer invoked with the state at each requested time.
type Queries<'a> = &'a [(f64, usize)];

/// Core Gillespie loop. `queries` must be sorted by time; the recorded
/// value is the position of the queried 1-based label at that time.
fn run_core(
    plan: &RatePlan,
    initial: &[i64],
    t_max: f64,
    dominating: Option<f64>,
    rng: &mut Xoshiro256PlusPlus,
    queries: Queries,
    mut log: Option<&mut Vec<Event>>,
    out: &mut Vec<i64>,
) -> Result<Vec<i64>, SimError> {
    let n = initial.len();
    let mut state = State {
        pos: initial.to_vec(),
    };
    let uniform_speeds = plan.speeds.iter().all(|&v| v == plan.speeds[0]);

    // per-event rates; homogeneous profiles keep them constant
    let homogeneous = plan.profile.is_homogeneous();
    let (r0, l0) = (plan.profile.a_dot(0.0), plan.profile.b_dot(0.0));
    let mut prefix: Vec<f64> = Vec::new();
    let mut total = 0.0;
    if homogeneous {
        if uniform_speeds {
            let v = plan.speeds[0];
            total = n as f64 * (r0 * v + l0 / v);
        } else {
            prefix.reserve(2 * n);
            for &v in &plan.speeds {
                total += r0 * v;
                prefix.push(total);
                total += l0 / v;
                prefix.push(total);
            }
        }
        if total <= 0.0 {
            // frozen dynamics: answer the queries and return
            for &(_, label) in queries {
                out.push(state.pos[label - 1]);
            }
            return Ok(state.pos);
        }
    }
    let bound = match (homogeneous, dominating) {
        (true, _) => total,
        (false, Some(b)) => b,
        (false, None) => {
            return Err(SimError::Invalid(
                "time-dependent profiles require a dominating rate bound".into(),
            ))
        }
    };

    let mut t = 0.0f64;
    let mut qi = 0usize;
    let per_particle = if uniform_speeds {
        let v = plan.speeds[0];
        r0 * v + l0 / v
    } else {
        0.0
    };
    loop {
        let step: f64 = Exp1.sample(rng);
        let t_next = t + step / bound;
        while qi < queries.len() && queries[qi].0 < t_next.min(t_max) {
            out.push(state.pos[queries[qi].1 - 1]);
            qi += 1;
        }
        if t_next > t_max {
            break;
        }
        t = t_next;
        // select the event
        let (k, dir) = if homogeneous && uniform_speeds {
            let u: f64 = rng.random::<f64>() * total;
            let k = ((u / per_particle) as usize).min(n - 1);
            let frac = u - k as f64 * per_particle;
            let v = plan.speeds[0];
            (
                k,
                if frac < r0 * v {
                    Direction::Right
                } else {
                    Direction::Left
                },
            )
        } else if homogeneous {
            let u: f64 = rng.random::<f64>() * total;
            let idx = prefix.partition_point(|&c| c <= u).min(2 * n - 1);
            (idx / 2, if idx % 2 == 0 { Direction::Right } else { Direction::Left })
        } else {
            // thinning against the dominating bound
            let adot = plan.profile.a_dot(t);
            let bdot = plan.profile.b_dot(t);
            let mut cum = 0.0;
            let u: f64 = rng.random::<f64>() * bound;
            let mut chosen = None;
            for (k, &v) in plan.speeds.iter().enumerate() {
                cum += adot * v;
                if u < cum {
                    chosen = Some((k, Direction::Right));
                    break;
                }
                cum += bdot / v;
                if u < cum {
                    chosen = Some((k, Direction::Left));
                    break;
                }
            }
            if cum > bound {
                return Err(SimError::InvalidBound {
                    rate: cum,
                    bound,
                    t,
                });
            }
            match chosen {
                Some(kd) => kd,
                None => continue, // thinned-out null event
            }
        };
        match dir {
            Direction::Right => {
                if state.try_right(k) {
                    if let Some(log) = log.as_deref_mut() {
                        log.push(Event {
                            time: t,
                            particle: k + 1,
                            direction: Direction::Right,
                            block_len: 1,
                        });
                    }
                }
            }
            Direction::Left => {
                let len = state.push_left(k);
                if let Some(log) = log.as_deref_mut() {
                    log.push(Event {
                        time: t,
                        particle: k + 1,
                        direction: Direction::Left,
                        block_len: len,
                    });
                }
            }
        }
    }
    while qi < queries.len() {
        out.push(state.pos[queries[qi].1 - 1]);
        qi += 1;
    }
    Ok(state.pos)
}

/// Simulate one trajectory with a full event log (replica 0 of the
/// seed); deterministic given the configuration.
pub fn simulate(cfg: &SimConfig) -> Result<Trajectory, SimError> {
    let initial = cfg.initial.positions();
    if cfg.plan.n() != initial.len() {
        return Err(SimError::Invalid(format!(
            "plan has {} speeds but the initial condition has {} particles",
            cfg.plan.n(),
            initial.len()
        )));
    }
    let mut rng = replica_rng(cfg.seed, 0);
    let mut events = Vec::new();
    let mut none = Vec::new();
    let terminal = run_core(
        &cfg.plan,
        &initial,
        cfg.t_max,
        cfg.dominating_rate,
        &mut rng,
        &[],
        Some(&mut events),
        &mut none,
    )?;
    Ok(Trajectory {
        initial: ParticleConfig::new(initial).unwrap(),
        events,
        terminal: ParticleConfig::new(terminal).unwrap(),
    })
}

/// Empirical probability with a 99% binomial confidence interval.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalProbability {
    pub p_hat: f64,
    pub ci99_half_width: f64,
    pub successes: u64,
    pub replicas: u64,
}

/// Estimate `P(∩ x_{n_k}(t_k) >= s_k)` over `cfg.replicas` independent
/// replicas (per-replica seed streams; results independent of any
/// execution order).
pub fn sample_space_like(
    cfg: &SimConfig,
    path: &SpaceLikePath,
    thresholds: &[i64],
) -> Result<EmpiricalProbability, SimError> {
    let initial = cfg.initial.positions();
    let offset = cfg.initial.label_offset();
    if path.len() != thresholds.len() {
        return Err(SimError::Invalid(
            "one threshold per path point required".into(),
        ));
    }
    if cfg.replicas == 0 {
        return Err(SimError::Invalid("at least one replica required".into()));
    }
    // queries sorted by time ascending
    let mut queries: Vec<(f64, usize)> = Vec::new();
    for p in path.points() {
        let label = p.n + offset;
        if label == 0 || label > initial.len() {
            return Err(SimError::IndexOutOfRange {
                index: p.n,
                size: initial.len(),
            });
        }
        if p.t > cfg.t_max {
            return Err(SimError::Invalid(format!(
                "query time {} beyond t_max {}",
                p.t, cfg.t_max
            )));
        }
        queries.push((p.t, label));
    }
    let order = argsort_by_time(&queries);
    let sorted: Vec<(f64, usize)> = order.iter().map(|&i| queries[i]).collect();

    let counts = run_chunked(cfg.replicas, cfg.threads, |range| {
        let mut successes = 0u64;
        let mut out = Vec::with_capacity(sorted.len());
        for rep in range {
            let mut rng = replica_rng(cfg.seed, rep);
            out.clear();
            run_core(
                &cfg.plan,
                &initial,
                cfg.t_max,
                cfg.dominating_rate,
                &mut rng,
                &sorted,
                None,
                &mut out,
            )?;
            let ok = order
                .iter()
                .enumerate()
                .all(|(slot, &qidx)| out[slot] >= thresholds[qidx]);
            if ok {
                successes += 1;
            }
        }
        Ok(successes)
    })?;
    let successes: u64 = counts.iter().sum();
    let p_hat = successes as f64 / cfg.replicas as f64;
    Ok(EmpiricalProbability {
        p_hat,
        ci99_half_width: crate::stats::binomial_ci99(p_hat, cfg.replicas),
        successes,
        replicas: cfg.replicas,
    })
}

fn argsort_by_time(queries: &[(f64, usize)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..queries.len()).collect();
    idx.sort_by(|&a, &b| queries[a].0.partial_cmp(&queries[b].0).unwrap());
    idx
}

/// Terminal positions of one label at several checkpoint times, over an
/// ensemble; used by the fluctuation-exponent study. Returns one vector
/// per checkpoint.
///
/// For uniform speeds with homogeneous rates the total attempt rate is
/// constant, so the attempt process is Poisson and attempt types are
/// i.i.d.; the ensemble then runs untimed events with one Poisson count
/// per checkpoint interval, which is distribution-exact and several
/// times faster than the timed loop.
pub fn ensemble_positions_at(
    cfg: &SimConfig,
    label: usize,
    times: &[f64],
) -> Result<Vec<Vec<i64>>, SimError> {
    let initial = cfg.initial.positions();
    if label == 0 || label > initial.len() {
        return Err(SimError::IndexOutOfRange {
            index: label,
            size: initial.len(),
        });
    }
    let uniform = cfg.plan.speeds.iter().all(|&v| v == cfg.plan.speeds[0]);
    if uniform && cfg.plan.profile.is_homogeneous() && cfg.plan.speeds[0] == 1.0 {
        return poissonized_ensemble(cfg, label, times);
    }
    let mut sorted: Vec<(f64, usize)> = times.iter().map(|&t| (t, label)).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut results = vec![Vec::with_capacity(cfg.replicas as usize); times.len()];
    let mut out = Vec::with_capacity(times.len());
    for rep in 0..cfg.replicas {
        let mut rng = replica_rng(cfg.seed, rep);
        out.clear();
        run_core(
            &cfg.plan,
            &initial,
            cfg.t_max,
            cfg.dominating_rate,
            &mut rng,
            &sorted,
            None,
            &mut out,
        )?;
        for (slot, &(t, _)) in sorted.iter().enumerate() {
            let orig = times.iter().position(|&q| q == t).unwrap();
            results[orig].push(out[slot]);
        }
    }
    Ok(results)
}

/// Untimed event stream between Poisson-counted checkpoints (uniform
/// unit speeds, homogeneous rates).
fn poissonized_ensemble(
    cfg: &SimConfig,
    label: usize,
    times: &[f64],
) -> Result<Vec<Vec<i64>>, SimError> {
    use rand::RngCore;
    let initial = cfg.initial.positions();
    let n = initial.len();
    let (r0, l0) = (cfg.plan.profile.a_dot(0.0), cfg.plan.profile.b_dot(0.0));
    let total_rate = n as f64 * (r0 + l0);
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());
    let mut results = vec![Vec::with_capacity(cfg.replicas as usize); times.len()];
    // probability of a right attempt, as a u64 threshold
    let p_right = r0 / (r0 + l0);
    let right_threshold = (p_right * (u64::MAX as f64)) as u64;
    let symmetric = (r0 - l0).abs() == 0.0;
    let init32: Vec<i32> = initial.iter().map(|&x| x as i32).collect();
    let chunks = run_chunked(cfg.replicas, cfg.threads, |range| {
        let cap = (range.end - range.start) as usize;
        let mut local = vec![Vec::with_capacity(cap); times.len()];
        let mut pos: Vec<i32> = Vec::new();
        for rep in range {
            let mut rng = replica_rng(cfg.seed, rep);
            pos.clone_from(&init32);
            let p = pos.as_mut_slice();
            let mut t_prev = 0.0;
            for &idx in &order {
                let dt = times[idx] - t_prev;
                t_prev = times[idx];
                let lambda = total_rate * dt;
                let count = if lambda > 0.0 {
                    rand_distr::Poisson::new(lambda).unwrap().sample(&mut rng) as u64
                } else {
                    0
                };
                for _ in 0..count {
                    let u = rng.next_u64();
                    let (k, right) = if symmetric {
                        ((((u >> 1) as u128 * n as u128) >> 63) as usize, u & 1 == 0)
                    } else {
                        (
                            ((u as u128 * n as u128) >> 64) as usize,
                            rng.next_u64() < right_threshold,
                        )
                    };
                    if right {
                        let blocked = k > 0 && p[k - 1] == p[k] + 1;
                        p[k] += !blocked as i32;
                    } else if k + 1 >= n || p[k + 1] != p[k] - 1 {
                        // isolated particle: the common case
                        p[k] -= 1;
                    } else {
                        let mut j = k + 1;
                        while j + 1 < n && p[j + 1] == p[j] - 1 {
                            j += 1;
                        }
                        for q in &mut p[k..=j] {
                            *q -= 1;
                        }
                    }
                }
                local[idx].push(p[label - 1] as i64);
            }
        }
        Ok(local)
    })?;
    for chunk in chunks {
        for (idx, mut vals) in chunk.into_iter().enumerate() {
            results[idx].append(&mut vals);
        }
    }
    Ok(results)
}

/// Counts of terminal configurations over an ensemble (for χ² checks
/// against the exact law at small N).
pub fn ensemble_terminals(
    cfg: &SimConfig,
) -> Result<std::collections::HashMap<Vec<i64>, u64>, SimError> {
    let initial = cfg.initial.positions();
    let chunks = run_chunked(cfg.replicas, cfg.threads, |range| {
        let mut counts: std::collections::HashMap<Vec<i64>, u64> = Default::default();
        let mut out = Vec::new();
        for rep in range {
            let mut rng = replica_rng(cfg.seed, rep);
            let term = run_core(
                &cfg.plan,
                &initial,
                cfg.t_max,
                cfg.dominating_rate,
                &mut rng,
                &[],
                None,
                &mut out,
            )?;
            *counts.entry(term).or_default() += 1;
        }
        Ok(counts)
    })?;
    let mut total: std::collections::HashMap<Vec<i64>, u64> = Default::default();
    for chunk in chunks {
        for (k, v) in chunk {
            *total.entry(k).or_default() += v;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------
// Coupled per-particle-clock engine (flat buffer audit)
// ---------------------------------------------------------------------

/// Exact simulation where every (flat label, clock side) pair draws
/// from its own seeded stream, so two runs differing only in buffer
/// depth share all randomness of the common particles.
fn run_coupled_flat(
    window: usize,
    buffer: usize,
    right: f64,
    left: f64,
    t_max: f64,
    seed: u64,
    replica: u64,
    observed: &[usize],
) -> Vec<i64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let k_total = window + buffer;
    let mut pos: Vec<i64> = (1..=k_total as i64).map(|k| 2 * (buffer as i64 - k)).collect();
    // streams keyed by the flat label i = k - buffer (stable across buffers)
    let mut streams: Vec<(Xoshiro256PlusPlus, Xoshiro256PlusPlus)> = (0..k_total)
        .map(|k| {
            let label = k as i64 + 1 - buffer as i64;
            let base = splitmix(seed ^ splitmix(label as u64 ^ splitmix(replica)));
            (
                Xoshiro256PlusPlus::seed_from_u64(splitmix(base ^ 0x72)),
                Xoshiro256PlusPlus::seed_from_u64(splitmix(base ^ 0x6c)),
            )
        })
        .collect();
    #[derive(PartialEq)]
    struct Entry(f64, usize, bool); // (time, particle, is_right)
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0
                .partial_cmp(&other.0)
                .unwrap()
                .then(self.1.cmp(&other.1))
                .then(self.2.cmp(&other.2))
        }
    }
    let mut heap: BinaryHeap<Reverse<Entry>> = BinaryHeap::with_capacity(2 * k_total);
    for k in 0..k_total {
        let tr: f64 = Exp1.sample(&mut streams[k].0);
        heap.push(Reverse(Entry(tr / right.max(1e-300), k, true)));
        let tl: f64 = Exp1.sample(&mut streams[k].1);
        heap.push(Reverse(Entry(tl / left.max(1e-300), k, false)));
    }
    let mut state = State { pos };
    while let Some(Reverse(Entry(t, k, is_right))) = heap.pop() {
        if t > t_max {
            break;
        }
        if is_right {
            if right > 0.0 {
                state.try_right(k);
                let dt: f64 = Exp1.sample(&mut streams[k].0);
                heap.push(Reverse(Entry(t + dt / right, k, true)));
            }
        } else if left > 0.0 {
            state.push_left(k);
            let dt: f64 = Exp1.sample(&mut streams[k].1);
            heap.push(Reverse(Entry(t + dt / left, k, false)));
        }
    }
    pos = state.pos;
    observed.iter().map(|&n| pos[n + buffer - 1]).collect()
}

/// Result of the flat buffer audit.
#[derive(Debug, Clone)]
pub struct BufferAudit {
    /// Max absolute difference of the observed empirical distribution
    /// functions between buffer depths B and 2B.
    pub max_difference: f64,
    /// Conservative Monte Carlo noise floor for the coupled comparison.
    pub noise_floor: f64,
    pub certified: bool,
}

/// Re-run a flat simulation with buffers `B` and `2B` under coupled
/// per-particle clock streams and compare the empirical marginals of
/// the observed indices at `t_max`.
pub fn flat_buffer_audit(cfg: &SimConfig, observed: &[usize]) -> Result<BufferAudit, SimError> {
    let (window, buffer) = match cfg.initial {
        InitialCondition::Flat { window, buffer } => (window, buffer),
        _ => {
            return Err(SimError::Invalid(
                "buffer audit applies to flat initial conditions".into(),
            ))
        }
    };
    let (right, left) = match cfg.plan.profile {
        ClockProfile::Homogeneous { right, left } => (right, left),
        _ => {
            return Err(SimError::Invalid(
                "buffer audit requires homogeneous rates".into(),
            ))
        }
    };
    for &n in observed {
        if n == 0 || n > window {
            return Err(SimError::IndexOutOfRange {
                index: n,
                size: window,
            });
        }
    }
    let mut max_diff = 0.0f64;
    let reps = cfg.replicas;
    for (oi, _) in observed.iter().enumerate() {
        let mut counts: std::collections::BTreeMap<i64, (i64, i64)> = Default::default();
        for rep in 0..reps {
            let a = run_coupled_flat(window, buffer, right, left, cfg.t_max, cfg.seed, rep, observed);
            let b = run_coupled_flat(
                window,
                2 * buffer.max(1),
                right,
                left,
                cfg.t_max,
                cfg.seed,
                rep,
                observed,
            );
            counts.entry(a[oi]).or_default().0 += 1;
            counts.entry(b[oi]).or_default().1 += 1;
        }
        // max CDF difference
        let mut ca = 0i64;
        let mut cb = 0i64;
        for (_, (da, db)) in counts {
            ca += da;
            cb += db;
            max_diff = max_diff.max(((ca - cb) as f64 / reps as f64).abs());
        }
    }
    let noise_floor = 3.0 * 0.5 / (reps as f64).sqrt();
    Ok(BufferAudit {
        max_difference: max_diff,
        noise_floor,
        certified: max_diff < noise_floor,
    })
}

/// Step-IC coupling check: with per-particle streams, the trajectories
/// of the first `m` particles are identical whatever the total particle
/// count (exact triangularity). Returns terminal positions of labels
/// `1..=m` when simulating `n_total` particles from step data.
pub fn coupled_step_terminal(
    n_total: usize,
    m: usize,
    right: f64,
    left: f64,
    t_max: f64,
    seed: u64,
) -> Vec<i64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut state = State {
        pos: (1..=n_total as i64).map(|i| -i).collect(),
    };
    let mut streams: Vec<(Xoshiro256PlusPlus, Xoshiro256PlusPlus)> = (0..n_total)
        .map(|k| {
            let base = splitmix(seed ^ splitmix(k as u64));
            (
                Xoshiro256PlusPlus::seed_from_u64(splitmix(base ^ 0x72)),
                Xoshiro256PlusPlus::seed_from_u64(splitmix(base ^ 0x6c)),
            )
        })
        .collect();
    #[derive(PartialEq)]
    struct Entry(f64, usize, bool);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0
                .partial_cmp(&other.0)
                .unwrap()
                .then(self.1.cmp(&other.1))
                .then(self.2.cmp(&other.2))
        }
    }
    let mut heap: BinaryHeap<Reverse<Entry>> = BinaryHeap::new();
    for k in 0..n_total {
        if right > 0.0 {
            let dt: f64 = Exp1.sample(&mut streams[k].0);
            heap.push(Reverse(Entry(dt / right, k, true)));
        }
        if left > 0.0 {
            let dt: f64 = Exp1.sample(&mut streams[k].1);
            heap.push(Reverse(Entry(dt / left, k, false)));
        }
    }
    while let Some(Reverse(Entry(t, k, is_right))) = heap.pop() {
        if t > t_max {
            break;
        }
        if is_right {
            state.try_right(k);
            let dt: f64 = Exp1.sample(&mut streams[k].0);
            heap.push(Reverse(Entry(t + dt / right, k, true)));
        } else {
            state.push_left(k);
            let dt: f64 = Exp1.sample(&mut streams[k].1);
            heap.push(Reverse(Entry(t + dt / left, k, false)));
        }
    }
    state.pos[..m].to_vec()
}
