//! Command-line experiments for the PushASEP numerical laboratory.
//!
//! Five subcommands expose the library as reproducible experiments
//! emitting CSV or JSON: `green` (exact transition probabilities),
//! `kernel` (correlation-kernel tables), `fredholm` (joint
//! distributions, discrete and continuum), `simulate` (Monte Carlo),
//! and `limit` (scaling constants and convergence studies).
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical
//! non-convergence.

mod output;

use std::collections::HashMap;
use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::{fmt_float, Report, Value};
use pushasep_core::fredholm::{
    joint_distribution_continuum, joint_distribution_discrete, nystrom_value, AiryProcess,
    ContinuumDetProblem, DiscreteDetProblem, FredholmError,
};
use pushasep_core::kernels::{
    default_conjugation, flat_correction_kn, kernel_flat, kernel_general, kernel_step,
    ContourRadii, KernelError, KernelSpec,
};
use pushasep_core::limits::{
    flat_limit_kernel, flat_scaling, rescaled_flat_kernel, rescaled_step_kernel,
    step_limit_kernel, step_scaling, LimitsError, PathGerm,
};
use pushasep_core::simulator::{
    ensemble_positions_at, ensemble_terminals, flat_buffer_audit, sample_space_like, simulate,
    Direction, InitialCondition, SimConfig, SimError,
};
use pushasep_core::stats::{chi2_test, fit_slope, mean_std};
use pushasep_core::transition::{
    green_function, master_equation_oracle, ParticleConfig, RatePlan, SpaceLikePath,
    SpaceTimePoint, TransitionError,
};

// ---------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------

#[derive(Debug)]
enum CliError {
    /// Bad arguments or inconsistent configuration (exit 2).
    Validation(String),
    /// A computation failed to converge (exit 3).
    Numerical(String),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<TransitionError> for CliError {
    fn from(e: TransitionError) -> Self {
        match e {
            TransitionError::Contour(c) => CliError::Numerical(c.to_string()),
            TransitionError::WindowTooSmall { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::Contour(_) | KernelError::SingularGram(_) => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<FredholmError> for CliError {
    fn from(e: FredholmError) -> Self {
        match e {
            FredholmError::Invalid(m) => CliError::Validation(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidBound { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<LimitsError> for CliError {
    fn from(e: LimitsError) -> Self {
        match e {
            LimitsError::RootNotBracketed { .. } => CliError::Validation(e.to_string()),
            LimitsError::Kernel(k) => k.into(),
        }
    }
}

// ---------------------------------------------------------------------
// Argument structures
// ---------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "pushasep", version, about = "PushASEP numerical laboratory")]
struct Cli {
    /// Key = value configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<String>,
    /// Output format.
    #[arg(long, global = true, value_parser = ["csv", "json"])]
    format: Option<String>,
    /// Random seed for stochastic commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replica ensembles.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Convergence tolerance hint (module tolerances are pinned;
    /// accepted for interface compatibility).
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact transition probabilities over a grid of terminal configurations.
    Green(GreenArgs),
    /// Correlation-kernel values over position grids.
    Kernel(KernelArgs),
    /// Fredholm determinants: joint distributions and gap probabilities.
    Fredholm(FredholmArgs),
    /// Continuous-time Monte Carlo experiments.
    Simulate(SimulateArgs),
    /// Scaling constants and kernel convergence studies.
    Limit(LimitArgs),
}

#[derive(Args)]
struct GreenArgs {
    /// Number of particles.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    l: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    /// Initial positions, comma separated (default: step data).
    #[arg(long, allow_hyphen_values = true)]
    y: Option<String>,
    /// Particle speeds, comma separated (default: all 1).
    #[arg(long)]
    speeds: Option<String>,
    /// Half-width of the terminal window around the initial positions.
    #[arg(long)]
    window: Option<i64>,
    /// Add a column with the master-equation oracle difference (N <= 4).
    #[arg(long)]
    oracle: bool,
    /// Drop rows with probability below this threshold.
    #[arg(long)]
    min_prob: Option<f64>,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_parser = ["step", "flat", "general"])]
    variant: Option<String>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    t1: Option<f64>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    t2: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    l: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    x1_min: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    x1_max: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    x2_min: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    x2_max: Option<i64>,
    /// Contour radius around 0.
    #[arg(long)]
    gamma0: Option<f64>,
    /// Contour radius around 1.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Speeds for the general variant.
    #[arg(long)]
    speeds: Option<String>,
    /// Initial positions for the general variant.
    #[arg(long, allow_hyphen_values = true)]
    y: Option<String>,
    /// General variant: add the difference against the step closed form.
    #[arg(long)]
    compare_step: bool,
    /// Flat variant: tabulate the finite-N correction on the preset
    /// contours and fit its decay rate.
    #[arg(long)]
    decay_study: bool,
    /// Largest N shift for the decay study.
    #[arg(long)]
    nmax: Option<usize>,
}

#[derive(Args)]
struct FredholmArgs {
    /// Discrete kernel variant.
    #[arg(long, value_parser = ["step", "flat"])]
    variant: Option<String>,
    /// Space-like path as "n:t,n:t,...".
    #[arg(long)]
    path: Option<String>,
    /// Thresholds, comma separated (integers for discrete, reals for continuum).
    #[arg(long, allow_hyphen_values = true)]
    thresholds: Option<String>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    l: Option<f64>,
    /// Initial window depth.
    #[arg(long)]
    window: Option<usize>,
    /// Conjugation base in (0,1).
    #[arg(long)]
    rho: Option<f64>,
    /// Continuum mode: evaluate an Airy-process determinant instead.
    #[arg(long, value_parser = ["airy1", "airy2"])]
    process: Option<String>,
    /// Continuum times, comma separated, increasing.
    #[arg(long)]
    times: Option<String>,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    order: Option<usize>,
    /// Compare the discrete determinant against Monte Carlo at this
    /// replica count.
    #[arg(long)]
    mc_replicas: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Initial condition: "step:N", "flat:M,B", or "explicit:x1,x2,...".
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    l: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Space-like path "n:t,..." to sample jointly with --thresholds.
    #[arg(long)]
    path: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    thresholds: Option<String>,
    /// Export one trajectory's event log as JSON lines to this path.
    #[arg(long)]
    export_events: Option<String>,
    /// Chi-squared test of the terminal distribution against the
    /// master-equation oracle (N <= 4).
    #[arg(long)]
    chi2: bool,
    /// Fluctuation-exponent study: checkpoint times, comma separated.
    #[arg(long)]
    kpz: Option<String>,
    /// Buffer audit for flat initial data: observed indices.
    #[arg(long)]
    audit: Option<String>,
}

#[derive(Args)]
struct LimitArgs {
    /// Path germ: "fixed-time:theta", "tagged:alpha", or
    /// "custom:theta,pi,pi1,pi2".
    #[arg(long)]
    germ: Option<String>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    l: Option<f64>,
    /// Convergence study comparing the rescaled kernel at --t-values
    /// against the limit kernel.
    #[arg(long, value_parser = ["none", "flat", "step"])]
    study: Option<String>,
    #[arg(long)]
    t_values: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    u1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    u2: Option<f64>,
    /// Scaled-position grid for the study, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    s_grid: Option<String>,
}

// ---------------------------------------------------------------------
// Config-file resolution
// ---------------------------------------------------------------------

struct Ctx {
    file: HashMap<String, String>,
    seed: u64,
    threads: usize,
}

impl Ctx {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Validation(format!("config key '{key}' has invalid value '{raw}'"))
            }),
        }
    }

    fn resolve<T: std::str::FromStr + Clone>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn resolve_opt<T: std::str::FromStr + Clone>(
        &self,
        flag: Option<T>,
        key: &str,
    ) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.get(key)
    }
}

fn load_config(path: &Option<String>) -> Result<HashMap<String, String>, CliError> {
    let mut map = HashMap::new();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Validation(format!(
                    "config line is not 'key = value': {line}"
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(map)
}

// ---------------------------------------------------------------------
// Parsing helpers
// ---------------------------------------------------------------------

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| CliError::Validation(format!("bad {what} entry '{p}'")))
        })
        .collect()
}

fn parse_path(s: &str) -> Result<SpaceLikePath, CliError> {
    let mut pts = Vec::new();
    for part in s.split(',') {
        let Some((n, t)) = part.trim().split_once(':') else {
            return Err(CliError::Validation(format!(
                "path entries are 'n:t', got '{part}'"
            )));
        };
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("bad particle label '{n}'")))?;
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("bad time '{t}'")))?;
        if n == 0 || t < 0.0 || !t.is_finite() {
            return Err(CliError::Validation(format!("invalid path point {part}")));
        }
        pts.push(SpaceTimePoint::new(n, t));
    }
    SpaceLikePath::new(pts).map_err(|e| CliError::Validation(e.to_string()))
}

fn parse_germ(s: &str) -> Result<PathGerm, CliError> {
    let bad = |m: &str| CliError::Validation(m.to_string());
    if let Some(theta) = s.strip_prefix("fixed-time:") {
        let theta: f64 = theta.parse().map_err(|_| bad("bad germ theta"))?;
        if !(0.0..0.5).contains(&theta) {
            return Err(bad("fixed-time germ needs theta in [0, 0.5)"));
        }
        Ok(PathGerm::fixed_time(theta))
    } else if let Some(alpha) = s.strip_prefix("tagged:") {
        let alpha: f64 = alpha.parse().map_err(|_| bad("bad germ alpha"))?;
        if alpha <= 0.0 || alpha >= 1.0 {
            return Err(bad("tagged germ needs alpha in (0, 1)"));
        }
        Ok(PathGerm::tagged_particle(alpha))
    } else if let Some(rest) = s.strip_prefix("custom:") {
        let vals: Vec<f64> = parse_list(rest, "germ parameter")?;
        if vals.len() != 4 {
            return Err(bad("custom germ needs theta,pi,pi1,pi2"));
        }
        if vals[2].abs() > 1.0 || vals[1] < vals[0].abs() {
            return Err(bad("germ must satisfy |pi'| <= 1 and pi >= |theta|"));
        }
        Ok(PathGerm::new(vals[0], vals[1], vals[2], vals[3]))
    } else {
        Err(bad("germ must be fixed-time:..., tagged:..., or custom:..."))
    }
}

fn parse_initial(s: &str) -> Result<InitialCondition, CliError> {
    if let Some(n) = s.strip_prefix("step:") {
        let n: usize = n
            .parse()
            .map_err(|_| CliError::Validation("bad step count".into()))?;
        if n == 0 {
            return Err(CliError::Validation("step:N needs N >= 1".into()));
        }
        Ok(InitialCondition::Step { n })
    } else if let Some(rest) = s.strip_prefix("flat:") {
        let parts: Vec<usize> = parse_list(rest, "flat parameter")?;
        if parts.len() != 2 || parts[0] == 0 {
            return Err(CliError::Validation("flat:M,B needs M >= 1".into()));
        }
        Ok(InitialCondition::Flat {
            window: parts[0],
            buffer: parts[1].max(1),
        })
    } else if let Some(rest) = s.strip_prefix("explicit:") {
        let pos: Vec<i64> = parse_list(rest, "position")?;
        let cfg = ParticleConfig::new(pos).map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(InitialCondition::Explicit(cfg))
    } else {
        Err(CliError::Validation(
            "initial must be step:N, flat:M,B, or explicit:x1,x2,...".into(),
        ))
    }
}

fn check_rates(r: f64, l: f64) -> Result<(), CliError> {
    if r < 0.0 || l < 0.0 || !(r + l).is_finite() || r + l == 0.0 {
        return Err(CliError::Validation(
            "rates must be nonnegative with r + l > 0".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------

fn cmd_green(args: &GreenArgs, ctx: &Ctx) -> Result<Report, CliError> {
    let n = ctx.resolve(args.n, "n", 1)?;
    let r = ctx.resolve(args.r, "r", 1.0)?;
    let l = ctx.resolve(args.l, "l", 0.0)?;
    let t = ctx.resolve(args.t, "t", 1.0)?;
    let window = ctx.resolve(args.window, "window", 10)?;
    let min_prob = ctx.resolve(args.min_prob, "min_prob", 1e-12)?;
    check_rates(r, l)?;
    if n == 0 || t < 0.0 || window <= 0 {
        return Err(CliError::Validation(
            "need n >= 1, t >= 0, window > 0".into(),
        ));
    }
    let y = match ctx.resolve_opt(args.y.clone(), "y")? {
        Some(s) => ParticleConfig::new(parse_list(&s, "initial position")?)
            .map_err(|e| CliError::Validation(e.to_string()))?,
        None => ParticleConfig::step(n),
    };
    let speeds: Vec<f64> = match ctx.resolve_opt(args.speeds.clone(), "speeds")? {
        Some(s) => parse_list(&s, "speed")?,
        None => vec![1.0; n],
    };
    if y.len() != n || speeds.len() != n {
        return Err(CliError::Validation(
            "y and speeds must have n entries".into(),
        ));
    }
    let plan = RatePlan::new(
        speeds.clone(),
        pushasep_core::transition::ClockProfile::Homogeneous { right: r, left: l },
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;

    let oracle = if args.oracle {
        if n > 4 {
            return Err(CliError::Validation("--oracle supports N <= 4".into()));
        }
        let mut w = window.max(8);
        loop {
            match master_equation_oracle(&y, t, &plan, w) {
                Ok(sol) => break Some(sol),
                Err(TransitionError::WindowTooSmall { .. }) if w < 512 => w *= 2,
                Err(e) => return Err(e.into()),
            }
        }
    } else {
        None
    };

    let mut report = Report::new("green");
    report.cfg("n", n);
    report.cfg("r", fmt_float(r));
    report.cfg("l", fmt_float(l));
    report.cfg("t", fmt_float(t));
    report.cfg("window", window);
    report.cfg("min_prob", fmt_float(min_prob));
    report.cfg(
        "y",
        y.positions()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    report.cfg(
        "speeds",
        speeds
            .iter()
            .map(|v| fmt_float(*v))
            .collect::<Vec<_>>()
            .join(","),
    );
    for i in 0..n {
        report.columns.push(format!("x{}", i + 1));
    }
    report.columns.push("probability".into());
    if oracle.is_some() {
        report.columns.push("oracle_diff".into());
    }

    let lo = y.positions().iter().min().unwrap() - window;
    let hi = y.positions().iter().max().unwrap() + window;
    let mut configs = Vec::new();
    let mut cur = Vec::new();
    enumerate_decreasing(lo, hi, n, &mut cur, &mut configs);
    let mut total = 0.0;
    for cfg in configs {
        let p = green_function(&y, &cfg, t, &plan)?;
        total += p;
        if p < min_prob {
            continue;
        }
        let mut row: Vec<Value> = cfg.iter().map(|&x| Value::Int(x)).collect();
        row.push(Value::Float(p));
        if let Some(sol) = &oracle {
            let key = ParticleConfig::new(cfg.clone()).unwrap();
            let q = sol.probabilities.get(&key).copied().unwrap_or(0.0);
            row.push(Value::Float(p - q));
        }
        report.rows.push(row);
    }
    report.note_float("window_mass", total);
    Ok(report)
}

fn enumerate_decreasing(lo: i64, hi: i64, n: usize, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
    if cur.len() == n {
        out.push(cur.clone());
        return;
    }
    let upper = cur.last().map_or(hi, |&last| last - 1);
    let needed = (n - cur.len() - 1) as i64;
    let mut x = upper;
    while x - needed >= lo {
        cur.push(x);
        enumerate_decreasing(lo, hi, n, cur, out);
        cur.pop();
        x -= 1;
    }
}

fn cmd_kernel(args: &KernelArgs, ctx: &Ctx) -> Result<Report, CliError> {
    let variant = ctx.resolve(args.variant.clone(), "variant", "step".to_string())?;
    let n1 = ctx.resolve(args.n1, "n1", 1)?;
    let t1 = ctx.resolve(args.t1, "t1", 1.0)?;
    let n2 = ctx.resolve(args.n2, "n2", 2)?;
    let t2 = ctx.resolve(args.t2, "t2", 0.5)?;
    let r = ctx.resolve(args.r, "r", 1.0)?;
    let l = ctx.resolve(args.l, "l", 1.0)?;
    check_rates(r, l)?;
    let x1_min = ctx.resolve(args.x1_min, "x1_min", -6)?;
    let x1_max = ctx.resolve(args.x1_max, "x1_max", 2)?;
    let x2_min = ctx.resolve(args.x2_min, "x2_min", -6)?;
    let x2_max = ctx.resolve(args.x2_max, "x2_max", 2)?;
    if x1_min > x1_max || x2_min > x2_max || n1 == 0 || n2 == 0 {
        return Err(CliError::Validation("empty kernel grid".into()));
    }
    let radii = ContourRadii {
        gamma0: ctx.resolve(args.gamma0, "gamma0", 0.4)?,
        gamma1: ctx.resolve(args.gamma1, "gamma1", 0.4)?,
    };
    let p1 = SpaceTimePoint::new(n1, t1);
    let p2 = SpaceTimePoint::new(n2, t2);

    let mut report = Report::new("kernel");
    report.cfg("variant", &variant);
    report.cfg("n1", n1);
    report.cfg("t1", fmt_float(t1));
    report.cfg("n2", n2);
    report.cfg("t2", fmt_float(t2));
    report.cfg("r", fmt_float(r));
    report.cfg("l", fmt_float(l));
    report.cfg("gamma0", fmt_float(radii.gamma0));
    report.cfg("gamma1", fmt_float(radii.gamma1));

    if args.decay_study {
        if variant != "flat" {
            return Err(CliError::Validation(
                "--decay-study applies to the flat variant".into(),
            ));
        }
        let nmax = ctx.resolve(args.nmax, "nmax", 10)?.clamp(4, 16);
        let preset = ContourRadii {
            gamma0: pushasep_core::kernels::presets::E_INV_4,
            gamma1: pushasep_core::kernels::presets::E_INV_2,
        };
        report.columns = vec!["n_shift".into(), "correction".into()];
        let mut xs = Vec::new();
        let mut logs = Vec::new();
        for shift in 2..=nmax {
            let v = flat_correction_kn(p1, x1_min, p2, x2_min, r, l, shift, &preset)?;
            report
                .rows
                .push(vec![Value::Int(shift as i64), Value::Float(v)]);
            xs.push(shift as f64);
            logs.push(v.abs().ln());
        }
        report.note_float("kappa_fit", fit_slope(&xs, &logs).exp());
        report.note_float("kappa_reference", 0.159);
        return Ok(report);
    }

    report.columns = vec!["x1".into(), "x2".into(), "value".into()];
    let general_spec = if variant == "general" {
        let n_max = n1.max(n2);
        let speeds: Vec<f64> = match ctx.resolve_opt(args.speeds.clone(), "speeds")? {
            Some(s) => parse_list(&s, "speed")?,
            None => vec![1.0; n_max],
        };
        let y = match ctx.resolve_opt(args.y.clone(), "y")? {
            Some(s) => ParticleConfig::new(parse_list(&s, "initial position")?)
                .map_err(|e| CliError::Validation(e.to_string()))?,
            None => ParticleConfig::step(n_max),
        };
        if speeds.len() < n_max || y.len() < n_max {
            return Err(CliError::Validation(
                "general variant needs speeds and y covering max(n1, n2)".into(),
            ));
        }
        let plan = RatePlan::new(
            speeds,
            pushasep_core::transition::ClockProfile::Homogeneous { right: r, left: l },
        )
        .map_err(|e| CliError::Validation(e.to_string()))?;
        Some(KernelSpec::general(plan, y))
    } else {
        None
    };
    if args.compare_step {
        report.columns.push("diff_vs_step".into());
    }
    for x1 in x1_min..=x1_max {
        for x2 in x2_min..=x2_max {
            let value = match variant.as_str() {
                "step" => kernel_step(p1, x1, p2, x2, r, l, &radii)?,
                "flat" => kernel_flat(p1, x1, p2, x2, r, l, &radii)?,
                "general" => kernel_general(p1, x1, p2, x2, general_spec.as_ref().unwrap())?,
                _ => unreachable!(),
            };
            let mut row = vec![Value::Int(x1), Value::Int(x2), Value::Float(value)];
            if args.compare_step {
                let sign = if (n1 as i64 - n2 as i64) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                let s = sign * kernel_step(p1, x1, p2, x2, r, l, &radii)?;
                row.push(Value::Float(value - s));
            }
            report.rows.push(row);
        }
    }
    Ok(report)
}

fn cmd_fredholm(args: &FredholmArgs, ctx: &Ctx) -> Result<Report, CliError> {
    let mut report = Report::new("fredholm");
    if let Some(process) = ctx.resolve_opt(args.process.clone(), "process")? {
        // continuum mode
        let times: Vec<f64> = parse_list(
            &ctx.resolve(args.times.clone(), "times", "0.0".to_string())?,
            "time",
        )?;
        let thresholds: Vec<f64> = parse_list(
            &ctx.resolve(args.thresholds.clone(), "thresholds", "0.0".to_string())?,
            "threshold",
        )?;
        let cutoff = ctx.resolve(args.cutoff, "cutoff", 14.0)?;
        let order = ctx.resolve(args.order, "order", 40)?;
        let proc = match process.as_str() {
            "airy1" => AiryProcess::Airy1,
            _ => AiryProcess::Airy2,
        };
        let mut p = ContinuumDetProblem::new(proc, times.clone(), thresholds.clone());
        p.cutoff = cutoff;
        p.quad_order = order;
        report.cfg("process", &process);
        report.cfg(
            "times",
            times
                .iter()
                .map(|v| fmt_float(*v))
                .collect::<Vec<_>>()
                .join(","),
        );
        report.cfg(
            "thresholds",
            thresholds
                .iter()
                .map(|v| fmt_float(*v))
                .collect::<Vec<_>>()
                .join(","),
        );
        report.cfg("cutoff", fmt_float(cutoff));
        report.cfg("order", order);
        report.columns = vec!["order".into(), "cutoff".into(), "value".into()];
        let coarse = nystrom_value(&p)?;
        report.rows.push(vec![
            Value::Int(order as i64),
            Value::Float(cutoff),
            Value::Float(coarse),
        ]);
        let mut fine = p.clone();
        fine.quad_order = order * 2;
        fine.cutoff = cutoff * 1.5;
        let fine_v = nystrom_value(&fine)?;
        report.rows.push(vec![
            Value::Int(2 * order as i64),
            Value::Float(cutoff * 1.5),
            Value::Float(fine_v),
        ]);
        let value = joint_distribution_continuum(&p)?;
        report.note_float("probability", value);
        return Ok(report);
    }

    // discrete mode
    let variant = ctx.resolve(args.variant.clone(), "variant", "step".to_string())?;
    let path = parse_path(&ctx.resolve(args.path.clone(), "path", "1:1.0".to_string())?)?;
    let thresholds: Vec<i64> = parse_list(
        &ctx.resolve(args.thresholds.clone(), "thresholds", "-1".to_string())?,
        "threshold",
    )?;
    let r = ctx.resolve(args.r, "r", 1.0)?;
    let l = ctx.resolve(args.l, "l", 1.0)?;
    check_rates(r, l)?;
    let window = ctx.resolve(args.window, "window", 16)?;
    let kernel = match variant.as_str() {
        "flat" => KernelSpec::flat(r, l),
        _ => KernelSpec::step(r, l),
    };
    let mut problem = DiscreteDetProblem::new(path.clone(), thresholds.clone(), kernel);
    problem.window = window;
    if let Some(rho) = ctx.resolve_opt(args.rho, "rho")? {
        problem.conjugation = rho;
    } else {
        problem.conjugation = default_conjugation(&problem.radii);
    }
    report.cfg("variant", &variant);
    report.cfg(
        "path",
        path.points()
            .iter()
            .map(|p| format!("{}:{}", p.n, fmt_float(p.t)))
            .collect::<Vec<_>>()
            .join(","),
    );
    report.cfg(
        "thresholds",
        thresholds
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    report.cfg("r", fmt_float(r));
    report.cfg("l", fmt_float(l));
    report.cfg("window", window);
    report.cfg("rho", fmt_float(problem.conjugation));
    let result = joint_distribution_discrete(&problem)?;
    report.columns = vec!["window".into(), "determinant".into()];
    for (w, d) in &result.trace {
        report
            .rows
            .push(vec![Value::Int(*w as i64), Value::Float(*d)]);
    }
    report.note_float("probability", result.probability);
    report.note_float("raw", result.raw);
    report.note("window_used", result.window_used);

    if let Some(reps) = args.mc_replicas {
        if reps > 0 {
            if variant != "step" {
                return Err(CliError::Validation(
                    "Monte Carlo comparison is wired to the step initial condition".into(),
                ));
            }
            let n_max = path.points().iter().map(|p| p.n).max().unwrap();
            let t_max = path.points().iter().fold(0.0f64, |m, p| m.max(p.t));
            let mut cfg =
                SimConfig::homogeneous(InitialCondition::Step { n: n_max }, r, l, t_max, ctx.seed);
            cfg.replicas = reps;
            cfg.threads = ctx.threads;
            let est = sample_space_like(&cfg, &path, &thresholds)?;
            report.note_float("mc_p_hat", est.p_hat);
            report.note_float("mc_ci99", est.ci99_half_width);
            report.note_float("mc_diff", est.p_hat - result.probability);
        }
    }
    Ok(report)
}

fn cmd_simulate(args: &SimulateArgs, ctx: &Ctx) -> Result<Report, CliError> {
    let initial_s = ctx.resolve(args.initial.clone(), "initial", "step:3".to_string())?;
    let initial = parse_initial(&initial_s)?;
    let r = ctx.resolve(args.r, "r", 1.0)?;
    let l = ctx.resolve(args.l, "l", 1.0)?;
    check_rates(r, l)?;
    let t_max = ctx.resolve(args.t_max, "t_max", 1.0)?;
    let replicas = ctx.resolve(args.replicas, "replicas", 10_000)?;
    if t_max < 0.0 || replicas == 0 {
        return Err(CliError::Validation(
            "need t_max >= 0 and replicas >= 1".into(),
        ));
    }
    let mut cfg = SimConfig::homogeneous(initial.clone(), r, l, t_max, ctx.seed);
    cfg.replicas = replicas;
    cfg.threads = ctx.threads;

    let mut report = Report::new("simulate");
    report.cfg("initial", &initial_s);
    report.cfg("r", fmt_float(r));
    report.cfg("l", fmt_float(l));
    report.cfg("t_max", fmt_float(t_max));
    report.cfg("replicas", replicas);
    report.columns = vec!["statistic".into(), "value".into()];

    // one logged trajectory: exclusion audit + optional export
    let traj = simulate(&cfg)?;
    let mut exclusion_violations = 0u64;
    {
        let mut pos = traj.initial.positions().to_vec();
        for e in &traj.events {
            let k = e.particle - 1;
            match e.direction {
                Direction::Right => {
                    if k > 0 && pos[k - 1] == pos[k] + 1 {
                        exclusion_violations += 1;
                    }
                    pos[k] += 1;
                }
                Direction::Left => {
                    let mut j = k;
                    while j + 1 < pos.len() && pos[j + 1] == pos[j] - 1 {
                        j += 1;
                    }
                    for m in k..=j {
                        pos[m] -= 1;
                    }
                }
            }
        }
    }
    report.rows.push(vec![
        Value::Text("events_in_trajectory".into()),
        Value::Int(traj.events.len() as i64),
    ]);
    report.rows.push(vec![
        Value::Text("exclusion_violations".into()),
        Value::Int(exclusion_violations as i64),
    ]);

    if let Some(path) = &args.export_events {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &traj.events {
            let dir = match e.direction {
                Direction::Right => "right",
                Direction::Left => "left",
            };
            writeln!(
                f,
                "{{\"time\":\"{:.11e}\",\"particle\":{},\"direction\":\"{}\",\"block_len\":{}}}",
                e.time, e.particle, dir, e.block_len
            )?;
        }
        report.note("events_exported", path);
    }

    if let (Some(path_s), Some(thr_s)) = (&args.path, &args.thresholds) {
        let path = parse_path(path_s)?;
        let thresholds: Vec<i64> = parse_list(thr_s, "threshold")?;
        if thresholds.len() != path.len() {
            return Err(CliError::Validation(
                "one threshold per path point required".into(),
            ));
        }
        let est = sample_space_like(&cfg, &path, &thresholds)?;
        report.rows.push(vec![
            Value::Text("empirical_probability".into()),
            Value::Float(est.p_hat),
        ]);
        report.rows.push(vec![
            Value::Text("ci99_half_width".into()),
            Value::Float(est.ci99_half_width),
        ]);
    }

    if args.chi2 {
        let y = ParticleConfig::new(initial.positions())
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if y.len() > 4 {
            return Err(CliError::Validation("--chi2 supports N <= 4".into()));
        }
        let plan = RatePlan::uniform(y.len(), r, l);
        let mut w = 10;
        let oracle = loop {
            match master_equation_oracle(&y, t_max, &plan, w) {
                Ok(sol) => break sol,
                Err(TransitionError::WindowTooSmall { .. }) if w < 512 => w *= 2,
                Err(e) => return Err(e.into()),
            }
        };
        let counts = ensemble_terminals(&cfg)?;
        let mut observed = Vec::new();
        let mut probs = Vec::new();
        for (state, &p) in &oracle.probabilities {
            observed.push(counts.get(state.positions()).copied().unwrap_or(0));
            probs.push(p);
        }
        let pval = chi2_test(&observed, &probs, replicas, 5.0);
        report.rows.push(vec![
            Value::Text("chi2_pvalue".into()),
            Value::Float(pval),
        ]);
    }

    if let Some(kpz) = &args.kpz {
        let times: Vec<f64> = parse_list(kpz, "checkpoint time")?;
        if times.iter().any(|&t| t <= 0.0 || t > t_max) {
            return Err(CliError::Validation(
                "kpz checkpoints must lie in (0, t_max]".into(),
            ));
        }
        let label = initial.label_offset() + 1;
        let ensembles = ensemble_positions_at(&cfg, label, &times)?;
        let mut log_t = Vec::new();
        let mut log_std = Vec::new();
        for (t, xs) in times.iter().zip(&ensembles) {
            let vals: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
            let (mean, std) = mean_std(&vals);
            report
                .rows
                .push(vec![Value::Text(format!("std_at_{t}")), Value::Float(std)]);
            report.rows.push(vec![
                Value::Text(format!("mean_at_{t}")),
                Value::Float(mean),
            ]);
            log_t.push(t.ln());
            log_std.push(std.ln());
        }
        if times.len() >= 2 {
            report.rows.push(vec![
                Value::Text("kpz_slope".into()),
                Value::Float(fit_slope(&log_t, &log_std)),
            ]);
        }
    }

    if let Some(audit) = &args.audit {
        let observed: Vec<usize> = parse_list(audit, "observed index")?;
        let result = flat_buffer_audit(&cfg, &observed)?;
        report.rows.push(vec![
            Value::Text("audit_max_difference".into()),
            Value::Float(result.max_difference),
        ]);
        report.rows.push(vec![
            Value::Text("audit_noise_floor".into()),
            Value::Float(result.noise_floor),
        ]);
        report.rows.push(vec![
            Value::Text("audit_certified".into()),
            Value::Text(result.certified.to_string()),
        ]);
    }
    Ok(report)
}

fn cmd_limit(args: &LimitArgs, ctx: &Ctx) -> Result<Report, CliError> {
    let germ_s = ctx.resolve(args.germ.clone(), "germ", "fixed-time:0.25".to_string())?;
    let germ = parse_germ(&germ_s)?;
    let r = ctx.resolve(args.r, "r", 1.0)?;
    let l = ctx.resolve(args.l, "l", 1.0)?;
    check_rates(r, l)?;
    let study = ctx.resolve(args.study.clone(), "study", "none".to_string())?;

    let mut report = Report::new("limit");
    report.cfg("germ", &germ_s);
    report.cfg("r", fmt_float(r));
    report.cfg("l", fmt_float(l));
    report.columns = vec!["name".into(), "value".into()];
    fn push(report: &mut Report, name: &str, v: f64) {
        report
            .rows
            .push(vec![Value::Text(name.into()), Value::Float(v)]);
    }
    let flat = flat_scaling(&germ, r, l);
    push(&mut report, "flat_s_v", flat.s_v);
    push(&mut report, "flat_s_h", flat.s_h);
    push(&mut report, "v_mean", flat.v_mean);
    push(&mut report, "flat_kappa0", flat.kappa0);
    push(&mut report, "flat_kappa1", flat.kappa1);
    match step_scaling(&germ, r, l) {
        Ok(step) => {
            push(&mut report, "step_mu", step.mu);
            push(&mut report, "step_alpha", step.alpha);
            push(&mut report, "step_beta", step.beta);
            push(&mut report, "step_sigma0", step.sigma0);
            push(&mut report, "step_sigma1", step.sigma1);
            push(&mut report, "step_sigma2", step.sigma2);
            push(&mut report, "step_kappa0", step.kappa0);
            push(&mut report, "step_kappa1", step.kappa1);
        }
        Err(e) => {
            if study == "step" {
                return Err(e.into());
            }
            report.note("step_scaling", format!("unavailable: {e}"));
        }
    }

    if study != "none" {
        let t_values: Vec<f64> = parse_list(
            &ctx.resolve(args.t_values.clone(), "t_values", "100,1000".to_string())?,
            "T value",
        )?;
        let u1 = ctx.resolve(args.u1, "u1", 0.0)?;
        let u2 = ctx.resolve(args.u2, "u2", if study == "flat" { 1.0 } else { 0.0 })?;
        let s_grid: Vec<f64> = parse_list(
            &ctx.resolve(args.s_grid.clone(), "s_grid", "-2,0,2".to_string())?,
            "s value",
        )?;
        report.cfg(
            "t_values",
            t_values
                .iter()
                .map(|v| fmt_float(*v))
                .collect::<Vec<_>>()
                .join(","),
        );
        report.cfg("u1", fmt_float(u1));
        report.cfg("u2", fmt_float(u2));
        let mut errs = Vec::new();
        for &t_large in &t_values {
            if t_large < 20.0 {
                return Err(CliError::Validation("study requires T >= 20".into()));
            }
            let mut sup = 0.0f64;
            for &s1 in &s_grid {
                for &s2 in &s_grid {
                    let (got, want) = if study == "flat" {
                        let got = rescaled_flat_kernel(t_large, u1, s1, u2, s2, &germ, r, l)?;
                        let want = flat_limit_kernel(&flat, u1, got.s1_eff, u2, got.s2_eff);
                        (got.value, want)
                    } else {
                        let params = step_scaling(&germ, r, l)?;
                        let got = rescaled_step_kernel(t_large, u1, s1, u2, s2, &germ, r, l)?;
                        let want = step_limit_kernel(&params, u1, got.s1_eff, u2, got.s2_eff);
                        (got.value, want)
                    };
                    sup = sup.max((got - want).abs());
                }
            }
            report.rows.push(vec![
                Value::Text(format!("sup_error_T_{t_large}")),
                Value::Float(sup),
            ]);
            errs.push(sup);
        }
        if errs.len() >= 2 {
            report.note_float(
                "error_ratio_last_over_first",
                errs[errs.len() - 1] / errs[0],
            );
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let file = load_config(&cli.config)?;
    let ctx = Ctx {
        seed: cli
            .seed
            .or_else(|| file.get("seed").and_then(|s| s.parse().ok()))
            .unwrap_or(1),
        threads: cli
            .threads
            .or_else(|| file.get("threads").and_then(|s| s.parse().ok()))
            .unwrap_or(1),
        file,
    };
    let mut report = match &cli.command {
        Command::Green(args) => cmd_green(args, &ctx)?,
        Command::Kernel(args) => cmd_kernel(args, &ctx)?,
        Command::Fredholm(args) => cmd_fredholm(args, &ctx)?,
        Command::Simulate(args) => cmd_simulate(args, &ctx)?,
        Command::Limit(args) => cmd_limit(args, &ctx)?,
    };
    report.cfg("seed", ctx.seed);
    report.cfg("threads", ctx.threads);
    let format = cli
        .format
        .clone()
        .or_else(|| ctx.file.get("format").cloned())
        .unwrap_or_else(|| "csv".to_string());
    let mut buf: Vec<u8> = Vec::new();
    match format.as_str() {
        "json" => report.write_json(&mut buf)?,
        _ => report.write_csv(&mut buf)?,
    }
    match &cli.out {
        Some(path) => std::fs::write(path, &buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(CliError::Validation("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numerical("x".into()).exit_code(), 3);
        let e: CliError = FredholmError::WindowDivergence {
            window: 512,
            last_change: 0.1,
        }
        .into();
        assert_eq!(e.exit_code(), 3);
        let e: CliError = FredholmError::Invalid("bad".into()).into();
        assert_eq!(e.exit_code(), 2);
        let e: CliError = SimError::InvalidBound {
            rate: 2.0,
            bound: 1.0,
            t: 0.5,
        }
        .into();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn parsers_accept_and_reject() {
        assert!(parse_path("1:1.0,3:0.5").is_ok());
        assert!(parse_path("3:1.0,1:2.0").is_err());
        assert!(parse_germ("fixed-time:0.25").is_ok());
        assert!(parse_germ("tagged:0.5").is_ok());
        assert!(parse_germ("custom:0.1,0.9,0.5,0.0").is_ok());
        assert!(parse_germ("custom:0.9,0.1,0.5,0.0").is_err());
        assert!(parse_initial("step:4").is_ok());
        assert!(parse_initial("flat:3,8").is_ok());
        assert!(parse_initial("explicit:3,0,-2").is_ok());
        assert!(parse_initial("explicit:0,0").is_err());
    }
}
