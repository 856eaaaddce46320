//! Command-line front end.
//!
//! Settings resolve in three layers: command-line flags, then keys from an
//! optional `key=value` config file, then built-in defaults. Everything is
//! validated before any output is written.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::fdt::{
    estimate_mean_fdt, extrapolate_fdt, fdt_vs_delta, fdt_vs_tau, optimal_restart,
    truncated_grid, AdaptiveGrid, HorizonPolicy,
};
use crate::oracle::{
    enumerate_averaged_first_detection, enumerate_jstar, mc_first_detection, step_probabilities,
    DEFAULT_SEGMENT_CAP,
};
use crate::propagation::{peak_offset, LatticeConfig};
use crate::protocols::{
    jstar_distribution, jstar_moments, Protocol, RestartKernel, RestartSchedule, ResolvedProtocol, SwitchPoint,
};

/// Largest deviation tolerated by `oracle-check`.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] crate::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("oracle mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Mismatch(_) => "mismatch",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// One-line JSON record written to stderr.
    pub fn record(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolKind {
    Ipr,
    Mpr,
    Ampr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "qreset", version, about = "First detection of a quantum walker under stochastic resetting")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat key=value file; flags take precedence over its keys
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Measurement period
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Detector site
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub delta: Option<i64>,
    /// Initial site
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub x0: Option<i64>,
    /// Series length
    #[arg(long = "n-max", global = true)]
    pub n_max: Option<usize>,
    #[arg(long, value_enum, global = true)]
    pub protocol: Option<ProtocolKind>,
    /// Right-hop probability for MPR
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Initial right-hop probability for adaptive MPR
    #[arg(long, global = true)]
    pub pi: Option<f64>,
    /// Final right-hop probability for adaptive MPR
    #[arg(long, global = true)]
    pub pf: Option<f64>,
    /// Switch point for adaptive MPR: a positive integer or `auto`
    #[arg(long, global = true)]
    pub rc: Option<String>,
    /// `adaptive`, `classic`, or a comma-separated list of horizons
    #[arg(long = "nc-grid", global = true)]
    pub nc_grid: Option<String>,
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Output file; standard output when absent
    #[arg(long, short = 'o', global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to QRESET_THREADS
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Survival series S_n under restart
    Survival(WindowArgs),
    /// Cumulative detection probability under restart
    Pdet(WindowArgs),
    /// Reset-site distribution and its moments
    Jstar(JstarArgs),
    /// Peak offset against restart time
    Peak(PeakArgs),
    /// Mean first-detection time against the restart window
    FdtSweep(RangeArgs),
    /// Optimal restart window, optionally across detector positions or periods
    Optimal(OptimalArgs),
    /// Truncated means against 1/n_c and the extrapolated limit
    Extrapolate(WindowArgs),
    /// Enumeration and Monte Carlo checks of the protocol kernel
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    /// Restart window in measurements
    #[arg(long)]
    pub r: Option<usize>,
}

#[derive(Debug, Args)]
pub struct JstarArgs {
    #[arg(long)]
    pub r: Option<usize>,
    /// Number of resets
    #[arg(long = "R")]
    pub resets: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PeakArgs {
    #[arg(long = "t-min")]
    pub t_min: Option<f64>,
    #[arg(long = "t-max")]
    pub t_max: Option<f64>,
    #[arg(long = "t-step")]
    pub t_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RangeArgs {
    #[arg(long = "r-min")]
    pub r_min: Option<usize>,
    #[arg(long = "r-max")]
    pub r_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptimalArgs {
    #[command(flatten)]
    pub range: RangeArgs,
    /// Detector positions, `a..b` or a comma-separated list
    #[arg(long = "delta-list", allow_hyphen_values = true)]
    pub delta_list: Option<String>,
    /// Measurement periods, comma-separated
    #[arg(long = "tau-list")]
    pub tau_list: Option<String>,
    /// Restart-time grid for --tau-list
    #[arg(long = "t-min")]
    pub t_min: Option<f64>,
    #[arg(long = "t-max")]
    pub t_max: Option<f64>,
    #[arg(long = "t-step")]
    pub t_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub r: Option<usize>,
    /// Number of enumerated resets
    #[arg(long = "R")]
    pub resets: Option<usize>,
    /// Monte Carlo trials
    #[arg(long)]
    pub trials: Option<usize>,
    /// Resets per trajectory before it is censored
    #[arg(long = "segment-cap")]
    pub segment_cap: Option<usize>,
}

/// What to compute.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Survival { r: usize },
    Pdet { r: usize },
    Jstar { r: usize, resets: usize },
    Peak { grid: Vec<f64> },
    FdtSweep { r_min: usize, r_max: usize },
    Optimal { r_min: usize, r_max: usize },
    OptimalDelta { r_min: usize, r_max: usize, deltas: Vec<i64> },
    OptimalTau { taus: Vec<f64>, t_grid: Vec<f64> },
    Extrapolate { r: usize },
    OracleCheck { r: usize, resets: usize, trials: usize, segment_cap: usize },
}

/// Fully resolved and validated run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub protocol: Protocol,
    pub horizon: HorizonPolicy,
    pub format: Format,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub task: Task,
    /// Resolved settings echoed at the top of every output.
    pub header: Vec<(String, String)>,
}

const KNOWN_KEYS: &[&str] = &[
    "tau", "delta", "x0", "n_max", "protocol", "p", "pi", "pf", "rc", "nc_grid", "format", "output", "seed",
    "threads", "r", "R", "r_min", "r_max", "t_min", "t_max", "t_step", "delta_list", "tau_list", "trials",
    "segment_cap",
];

/// Config-file keys, normalized to underscores.
#[derive(Debug, Default)]
struct FileKeys(BTreeMap<String, String>);

impl FileKeys {
    fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("config line {}: unknown key `{key}`", i + 1)));
            }
            map.insert(key, v.trim().to_string());
        }
        Ok(FileKeys(map))
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    fn pick_str(&self, flag: Option<String>, key: &str) -> Option<String> {
        flag.or_else(|| self.0.get(key).cloned())
    }
}

fn parse_switch(s: &str) -> CliResult<SwitchPoint> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(SwitchPoint::Auto);
    }
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(SwitchPoint::Fixed(v)),
        _ => Err(CliError::Usage(format!("--rc must be a positive integer or `auto`, got `{s}`"))),
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| CliError::Usage(format!("{what}: cannot parse `{v}`"))))
        .collect()
}

fn parse_delta_list(s: &str) -> CliResult<Vec<i64>> {
    if let Some((a, b)) = s.split_once("..") {
        let lo: i64 = a.trim().parse().map_err(|_| CliError::Usage(format!("--delta-list: bad bound `{a}`")))?;
        let hi: i64 = b.trim().parse().map_err(|_| CliError::Usage(format!("--delta-list: bad bound `{b}`")))?;
        if hi < lo {
            return Err(CliError::Usage("--delta-list: empty range".into()));
        }
        return Ok((lo..=hi).collect());
    }
    parse_list(s, "--delta-list")
}

fn parse_horizon(s: &str) -> CliResult<HorizonPolicy> {
    let policy = match s.trim() {
        "adaptive" => HorizonPolicy::default(),
        "classic" => HorizonPolicy::classic(),
        list => HorizonPolicy::Fixed { grid: parse_list(list, "--nc-grid")? },
    };
    policy.validate()?;
    Ok(policy)
}

fn horizon_label(policy: &HorizonPolicy) -> String {
    match policy {
        HorizonPolicy::Fixed { grid } => {
            grid.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";")
        }
        HorizonPolicy::Adaptive(AdaptiveGrid { points, base_top, span, survival_tol, cap }) => {
            format!("adaptive(points={points};base_top={base_top};span={span};survival_tol={survival_tol:e};cap={cap})")
        }
    }
}

/// Evenly spaced grid `lo, lo+step, ..., <= hi`.
fn linear_grid(lo: f64, hi: f64, step: f64, what: &str) -> CliResult<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && step > 0.0) {
        return Err(CliError::Usage(format!("{what}: need 0 < t-min <= t-max and t-step > 0")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| lo + step * k as f64).collect())
}

fn check_positive(name: &str, v: usize) -> CliResult<usize> {
    if v == 0 {
        return Err(CliError::Usage(format!("--{name} must be >= 1")));
    }
    Ok(v)
}

/// Merge flags, config file and defaults into a validated [`RunConfig`].
pub fn parse_config(cli: Cli) -> CliResult<RunConfig> {
    let g = cli.global;
    let file = match &g.config {
        Some(path) => FileKeys::load(path)?,
        None => FileKeys::default(),
    };
    let defaults = LatticeConfig::default();
    let lattice = LatticeConfig {
        tau: file.pick(g.tau, "tau")?.unwrap_or(defaults.tau),
        delta: file.pick(g.delta, "delta")?.unwrap_or(defaults.delta),
        x0: file.pick(g.x0, "x0")?.unwrap_or(defaults.x0),
        n_max: file.pick(g.n_max, "n_max")?.unwrap_or(defaults.n_max),
    };
    lattice.validate()?;

    let p = file.pick(g.p, "p")?;
    let pi = file.pick(g.pi, "pi")?;
    let pf = file.pick(g.pf, "pf")?;
    let rc = file.pick_str(g.rc, "rc");
    let kind = match file.pick_str(g.protocol.map(|k| format!("{k:?}").to_lowercase()), "protocol") {
        Some(name) => ProtocolKind::from_str(&name, true)
            .map_err(|_| CliError::Usage(format!("unknown protocol `{name}`; expected ipr, mpr or ampr")))?,
        None if pi.is_some() || pf.is_some() || rc.is_some() => ProtocolKind::Ampr,
        None if p.is_some() => ProtocolKind::Mpr,
        None => ProtocolKind::Ipr,
    };
    let protocol = match kind {
        ProtocolKind::Ipr => Protocol::Ipr,
        ProtocolKind::Mpr => Protocol::Mpr { p: p.unwrap_or(0.5) },
        ProtocolKind::Ampr => Protocol::AdaptiveMpr {
            p_initial: pi.unwrap_or(1.0),
            p_final: pf.unwrap_or(0.5),
            switch: parse_switch(rc.as_deref().unwrap_or("auto"))?,
        },
    };
    protocol.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let horizon = match file.pick_str(g.nc_grid, "nc_grid") {
        Some(s) => parse_horizon(&s)?,
        None => HorizonPolicy::default(),
    };
    let format = match g.format {
        Some(f) => f,
        None => match file.0.get("format") {
            Some(s) => Format::from_str(s, true).map_err(|_| CliError::Usage(format!("unknown format `{s}`")))?,
            None => Format::Csv,
        },
    };
    let output = g.output.or_else(|| file.0.get("output").map(PathBuf::from));
    let seed = file.pick(g.seed, "seed")?.unwrap_or(0);
    let threads = match file.pick(g.threads, "threads")? {
        Some(t) => Some(t),
        None => match std::env::var("QRESET_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| CliError::Usage(format!("QRESET_THREADS: cannot parse `{v}`")))?),
            Err(_) => None,
        },
    };
    if threads == Some(0) {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }

    let r_of = |flag: Option<usize>| -> CliResult<usize> { check_positive("r", file.pick(flag, "r")?.unwrap_or(24)) };
    let range_of = |a: &RangeArgs| -> CliResult<(usize, usize)> {
        let lo = check_positive("r-min", file.pick(a.r_min, "r_min")?.unwrap_or(2))?;
        let hi = file.pick(a.r_max, "r_max")?.unwrap_or(48);
        if hi < lo {
            return Err(CliError::Usage(format!("empty restart range {lo}..={hi}")));
        }
        Ok((lo, hi))
    };
    let t_grid = |lo: Option<f64>, hi: Option<f64>, step: Option<f64>| -> CliResult<Vec<f64>> {
        linear_grid(
            file.pick(lo, "t_min")?.unwrap_or(0.25),
            file.pick(hi, "t_max")?.unwrap_or(12.0),
            file.pick(step, "t_step")?.unwrap_or(0.25),
            "restart-time grid",
        )
    };

    let task = match cli.command {
        Command::Survival(a) => Task::Survival { r: r_of(a.r)? },
        Command::Pdet(a) => Task::Pdet { r: r_of(a.r)? },
        Command::Jstar(a) => Task::Jstar { r: r_of(a.r)?, resets: file.pick(a.resets, "R")?.unwrap_or(4) },
        Command::Peak(a) => Task::Peak { grid: t_grid(a.t_min, a.t_max, a.t_step)? },
        Command::FdtSweep(a) => {
            let (r_min, r_max) = range_of(&a)?;
            Task::FdtSweep { r_min, r_max }
        }
        Command::Optimal(a) => {
            let (r_min, r_max) = range_of(&a.range)?;
            let deltas = file.pick_str(a.delta_list, "delta_list");
            let taus = file.pick_str(a.tau_list, "tau_list");
            match (deltas, taus) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Usage("--delta-list and --tau-list are mutually exclusive".into()))
                }
                (Some(d), None) => {
                    let deltas = parse_delta_list(&d)?;
                    let mut uniq = deltas.clone();
                    uniq.sort_unstable();
                    uniq.dedup();
                    if deltas.len() < 3 || uniq.len() != deltas.len() {
                        return Err(CliError::Usage("--delta-list needs at least three distinct positions".into()));
                    }
                    for &delta in &deltas {
                        LatticeConfig { delta, ..lattice }.validate()?;
                    }
                    Task::OptimalDelta { r_min, r_max, deltas }
                }
                (None, Some(t)) => {
                    let taus: Vec<f64> = parse_list(&t, "--tau-list")?;
                    for &tau in &taus {
                        if !(tau > 0.0 && tau <= 0.5) {
                            return Err(CliError::Usage(format!("--tau-list: tau must lie in (0, 0.5], got {tau}")));
                        }
                    }
                    Task::OptimalTau { taus, t_grid: t_grid(a.t_min, a.t_max, a.t_step)? }
                }
                (None, None) => Task::Optimal { r_min, r_max },
            }
        }
        Command::Extrapolate(a) => Task::Extrapolate { r: r_of(a.r)? },
        Command::OracleCheck(a) => {
            let resets = file.pick(a.resets, "R")?.unwrap_or(12);
            if resets > crate::oracle::ENUMERATION_LIMIT {
                return Err(CliError::Core(crate::Error::Budget(format!(
                    "--R {resets} exceeds the enumeration limit {}",
                    crate::oracle::ENUMERATION_LIMIT
                ))));
            }
            Task::OracleCheck {
                r: r_of(a.r)?,
                resets,
                trials: check_positive("trials", file.pick(a.trials, "trials")?.unwrap_or(100_000))?,
                segment_cap: check_positive(
                    "segment-cap",
                    file.pick(a.segment_cap, "segment_cap")?.unwrap_or(DEFAULT_SEGMENT_CAP),
                )?,
            }
        }
    };

    let mut cfg = RunConfig { lattice, protocol, horizon, format, output, seed, threads, task, header: Vec::new() };
    cfg.header = header_lines(&cfg)?;
    Ok(cfg)
}

fn header_lines(cfg: &RunConfig) -> CliResult<Vec<(String, String)>> {
    let l = &cfg.lattice;
    let mut h = vec![
        ("command".to_string(), task_name(&cfg.task).to_string()),
        ("tau".into(), format!("{}", l.tau)),
        ("delta".into(), l.delta.to_string()),
        ("x0".into(), l.x0.to_string()),
        ("n_max".into(), l.n_max.to_string()),
        ("protocol".into(), cfg.protocol.label()),
        ("nc_grid".into(), horizon_label(&cfg.horizon)),
        ("seed".into(), cfg.seed.to_string()),
    ];
    let single_r = match cfg.task {
        Task::Survival { r } | Task::Pdet { r } | Task::Extrapolate { r } => Some(r),
        Task::Jstar { r, resets } => {
            h.push(("R".into(), resets.to_string()));
            Some(r)
        }
        Task::OracleCheck { r, resets, trials, segment_cap } => {
            h.push(("R".into(), resets.to_string()));
            h.push(("trials".into(), trials.to_string()));
            h.push(("segment_cap".into(), segment_cap.to_string()));
            Some(r)
        }
        Task::FdtSweep { r_min, r_max } | Task::Optimal { r_min, r_max } => {
            h.push(("r_range".into(), format!("{r_min}..={r_max}")));
            None
        }
        Task::OptimalDelta { r_min, r_max, ref deltas } => {
            h.push(("r_range".into(), format!("{r_min}..={r_max}")));
            h.push(("delta_list".into(), join(deltas)));
            None
        }
        Task::OptimalTau { ref taus, ref t_grid } => {
            h.push(("tau_list".into(), join(taus)));
            h.push(("t_grid".into(), format!("{}..={} ({} points)", t_grid[0], t_grid[t_grid.len() - 1], t_grid.len())));
            None
        }
        Task::Peak { ref grid } => {
            h.push(("t_grid".into(), format!("{}..={} ({} points)", grid[0], grid[grid.len() - 1], grid.len())));
            None
        }
    };
    if let Some(r) = single_r {
        let sched = RestartSchedule::new(r, l.tau)?;
        let resolved = ResolvedProtocol::resolve(&cfg.protocol, &sched, l)?;
        h.push(("r".into(), r.to_string()));
        h.push(("t_r".into(), format!("{}", sched.t_r())));
        h.push(("delta_offset".into(), sched.delta_offset.to_string()));
        if let Some(rc) = resolved.switch_point() {
            h.push(("resolved_rc".into(), rc.to_string()));
        }
    }
    Ok(h)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn task_name(task: &Task) -> &'static str {
    match task {
        Task::Survival { .. } => "survival",
        Task::Pdet { .. } => "pdet",
        Task::Jstar { .. } => "jstar",
        Task::Peak { .. } => "peak",
        Task::FdtSweep { .. } => "fdt-sweep",
        Task::Optimal { .. } | Task::OptimalDelta { .. } | Task::OptimalTau { .. } => "optimal",
        Task::Extrapolate { .. } => "extrapolate",
        Task::OracleCheck { .. } => "oracle-check",
    }
}

/// One output cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => fmt_real(*v),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Real(v) if v.is_finite() => json!(v),
            Cell::Real(v) => json!(fmt_real(*v)),
            Cell::Bool(v) => json!(v),
            Cell::Text(s) => json!(s),
        }
    }
}

/// 17 significant digits.
fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn int(v: impl TryInto<i64>) -> Cell {
    Cell::Int(v.try_into().unwrap_or(i64::MAX))
}

/// Tabular result of one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub footer: Vec<(String, Cell)>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Table { columns: columns.to_vec(), rows: Vec::new(), footer: Vec::new() }
    }

    pub fn to_csv(&self, header: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in header {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
        }
        if !self.footer.is_empty() {
            let parts: Vec<String> = self.footer.iter().map(|(k, v)| format!("{k}={}", v.csv())).collect();
            let _ = writeln!(out, "# {}", parts.join(","));
        }
        out
    }

    pub fn to_json(&self, header: &[(String, String)]) -> String {
        let config: Map<String, Value> = header.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        let rows: Vec<Value> = self.rows.iter().map(|r| Value::Array(r.iter().map(Cell::json).collect())).collect();
        let footer: Map<String, Value> = self.footer.iter().map(|(k, v)| (k.clone(), v.json())).collect();
        let doc = json!({ "config": config, "columns": self.columns, "rows": rows, "summary": footer });
        let mut s = serde_json::to_string_pretty(&doc).expect("table serializes");
        s.push('\n');
        s
    }
}

fn kernel_for(cfg: &RunConfig, r: usize) -> crate::Result<RestartKernel> {
    let sched = RestartSchedule::new(r, cfg.lattice.tau)?;
    RestartKernel::new(&cfg.protocol, &sched, &cfg.lattice)
}

fn series_table(cfg: &RunConfig, r: usize) -> CliResult<Table> {
    let series = kernel_for(cfg, r)?.series(cfg.lattice.n_max);
    let mut t = Table::new(&["n", "F", "P_det", "S"]);
    for i in 0..series.len() {
        t.rows.push(vec![int(i + 1), Cell::Real(series.f[i]), Cell::Real(series.p_det[i]), Cell::Real(series.s[i])]);
    }
    Ok(t)
}

/// Run a validated configuration and return its table.
pub fn run_subcommand(cfg: &RunConfig) -> CliResult<Table> {
    let l = &cfg.lattice;
    match &cfg.task {
        Task::Survival { r } | Task::Pdet { r } => series_table(cfg, *r),
        Task::Jstar { r, resets } => {
            let kernel = kernel_for(cfg, *r)?;
            let dist = jstar_distribution(kernel.protocol(), l.x0, *resets);
            let m = jstar_moments(&dist, l.x0);
            let mut t = Table::new(&["offset", "weight"]);
            for (o, w) in dist.offsets.iter().zip(&dist.weights) {
                t.rows.push(vec![int(*o), Cell::Real(*w)]);
            }
            t.footer = vec![("mean".into(), Cell::Real(m.mean)), ("variance".into(), Cell::Real(m.variance))];
            Ok(t)
        }
        Task::Peak { grid } => {
            let mut t = Table::new(&["t_r", "delta_offset"]);
            for &tr in grid {
                t.rows.push(vec![Cell::Real(tr), int(peak_offset(tr)?.delta_offset)]);
            }
            Ok(t)
        }
        Task::FdtSweep { r_min, r_max } => {
            let sweep = optimal_restart(&cfg.protocol, l, *r_min..=*r_max, &cfg.horizon)?;
            let mut t = Table::new(&["r", "t_r", "delta_offset", "fdt", "is_local_min"]);
            for (i, p) in sweep.points.iter().enumerate() {
                t.rows.push(vec![
                    int(p.r),
                    Cell::Real(p.t_r),
                    int(p.delta_offset),
                    Cell::Real(p.value()),
                    Cell::Bool(sweep.local_minima.contains(&i)),
                ]);
            }
            let best = sweep.optimum();
            t.footer = vec![("r_star".into(), int(best.r)), ("fdt_star".into(), Cell::Real(best.value()))];
            Ok(t)
        }
        Task::Optimal { r_min, r_max } => {
            let sweep = optimal_restart(&cfg.protocol, l, *r_min..=*r_max, &cfg.horizon)?;
            let best = sweep.optimum();
            let mut t = Table::new(&["r_star", "t_r_star", "delta_offset", "fdt_star"]);
            t.rows.push(vec![int(best.r), Cell::Real(best.t_r), int(best.delta_offset), Cell::Real(best.value())]);
            Ok(t)
        }
        Task::OptimalDelta { r_min, r_max, deltas } => {
            let sweep = fdt_vs_delta(&cfg.protocol, l, deltas, *r_min..=*r_max, &cfg.horizon)?;
            let mut t = Table::new(&["delta", "r_star", "fdt_star"]);
            for row in &sweep.rows {
                t.rows.push(vec![int(row.delta), int(row.r_star), Cell::Real(row.fdt_star)]);
            }
            t.footer = vec![
                ("slope".into(), Cell::Real(sweep.fit.slope)),
                ("intercept".into(), Cell::Real(sweep.fit.intercept)),
                ("r_squared".into(), Cell::Real(sweep.fit.r_squared)),
            ];
            Ok(t)
        }
        Task::OptimalTau { taus, t_grid } => {
            let curves = fdt_vs_tau(&cfg.protocol, l, taus, t_grid, &cfg.horizon)?;
            let mut t = Table::new(&["tau", "t_r", "r", "delta_offset", "fdt", "is_local_min", "is_optimum"]);
            for c in &curves {
                for (i, p) in c.points.iter().enumerate() {
                    t.rows.push(vec![
                        Cell::Real(c.tau),
                        Cell::Real(p.t_r_grid),
                        int(p.r),
                        int(p.delta_offset),
                        Cell::Real(p.fdt),
                        Cell::Bool(c.local_minima.contains(&i)),
                        Cell::Bool(i == c.optimum),
                    ]);
                }
            }
            t.footer = curves
                .iter()
                .map(|c| (format!("t_r_star(tau={})", c.tau), Cell::Real(c.t_r_star())))
                .collect();
            Ok(t)
        }
        Task::Extrapolate { r } => {
            let kernel = kernel_for(cfg, *r)?;
            let (grid, sums, survival) = truncated_grid(&kernel, &cfg.horizon)?;
            let pairs: Vec<(usize, f64)> = grid.iter().copied().zip(sums.iter().copied()).collect();
            let est = extrapolate_fdt(&pairs)?;
            let mut t = Table::new(&["n_c", "inv_n_c", "fdt_truncated"]);
            for (n, v) in &pairs {
                t.rows.push(vec![int(*n), Cell::Real(1.0 / *n as f64), Cell::Real(*v)]);
            }
            t.footer = vec![
                ("extrapolated".into(), Cell::Real(est.value)),
                ("stability".into(), Cell::Real(est.stability.unwrap_or(0.0))),
                ("stable".into(), Cell::Bool(est.stable)),
                ("tail_survival".into(), Cell::Real(survival)),
            ];
            if kernel.protocol().delta_offset == 0 {
                let closed = estimate_mean_fdt(&kernel, &cfg.horizon)?;
                t.footer.push(("closed_form".into(), Cell::Real(closed.value)));
            }
            Ok(t)
        }
        Task::OracleCheck { r, resets, trials, segment_cap } => oracle_table(cfg, *r, *resets, *trials, *segment_cap),
    }
}

fn oracle_table(cfg: &RunConfig, r: usize, resets: usize, trials: usize, segment_cap: usize) -> CliResult<Table> {
    let l = &cfg.lattice;
    let kernel = kernel_for(cfg, r)?;
    let proto = kernel.protocol();
    let probs = step_probabilities(proto, resets);
    let exact = enumerate_jstar(&probs, proto.delta_offset, l.x0)?;
    let closed = jstar_distribution(proto, l.x0, resets);
    let weight_dev = exact
        .weights
        .iter()
        .zip(&closed.weights)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut window_dev: f64 = 0.0;
    for n in 1..=r {
        let a = enumerate_averaged_first_detection(&probs, proto.delta_offset, l, kernel.cache(), n)?;
        let b = kernel.averaged_first_detection(resets, n)?;
        window_dev = window_dev.max((a - b).abs());
    }
    let mc = mc_first_detection(&kernel, trials, cfg.seed, segment_cap)?;
    let factorized = match estimate_mean_fdt(&kernel, &cfg.horizon) {
        Ok(e) => e.value,
        Err(crate::Error::Divergent(_)) => f64::INFINITY,
        Err(e) => return Err(e.into()),
    };
    let mut t = Table::new(&["check", "value"]);
    let rows: [(&str, Cell); 9] = [
        ("max_weight_deviation", Cell::Real(weight_dev)),
        ("max_window_deviation", Cell::Real(window_dev)),
        ("total_weight", Cell::Real(exact.total_weight())),
        ("mc_mean", Cell::Real(mc.mean)),
        ("mc_std_error", Cell::Real(mc.std_error)),
        ("mc_detected", int(mc.detected)),
        ("mc_censored", int(mc.censored)),
        ("factorized_mean", Cell::Real(factorized)),
        ("within_tolerance", Cell::Bool(weight_dev < ORACLE_TOLERANCE && window_dev < ORACLE_TOLERANCE)),
    ];
    for (k, v) in rows {
        t.rows.push(vec![Cell::Text(k.to_string()), v]);
    }
    Ok(t)
}

fn write_output(cfg: &RunConfig, text: &str) -> CliResult<()> {
    match &cfg.output {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
    }
}

/// Parse, run, render and write; returns the rendered text.
pub fn execute(cfg: &RunConfig) -> CliResult<String> {
    let table = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?
            .install(|| run_subcommand(cfg))?,
        None => run_subcommand(cfg)?,
    };
    let text = match cfg.format {
        Format::Csv => table.to_csv(&cfg.header),
        Format::Json => table.to_json(&cfg.header),
    };
    if let Task::OracleCheck { .. } = cfg.task {
        if table.rows.last().map(|r| &r[1]) != Some(&Cell::Bool(true)) {
            write_output(cfg, &text)?;
            return Err(CliError::Mismatch(format!(
                "enumeration and kernel disagree by more than {ORACLE_TOLERANCE:e}"
            )));
        }
    }
    write_output(cfg, &text)?;
    Ok(text)
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.record());
            return err.exit_code();
        }
    };
    match parse_config(cli).and_then(|cfg| execute(&cfg)) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code()
        }
    }
}
