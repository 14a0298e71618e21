//! Command-line experiment runner for the perishable-pricing laboratory.
//!
//! Every subcommand resolves its settings the same way: command-line flags
//! override values from an optional `--config` TOML file, which override
//! built-in defaults. A run prints exactly one result table to stdout in the
//! selected format (`csv` or `json`) and writes the identical bytes to an
//! output file, so a fixed command line plus seed reproduces its output byte
//! for byte — independently of `--threads`.
//!
//! Exit codes: `0` when every row's `pass` flag is true, `2` when the run
//! completed but at least one acceptance threshold failed, `1` on any error
//! (bad flags, bad config, simulation failure).
//!
//! Column order per experiment is fixed; see the `COLS_*` constants (the
//! JSON format mirrors the CSV rows as an array of objects in the same key
//! order). Every row carries the experiment name, all of its parameters,
//! the seed, the trial count, point estimates with standard errors, the
//! relevant analytic bound, and the pass flag.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use perish_core::bounds::{
    prophet_upper_bound, ratio_lb_alpha, single_mhr_ratio, walk_limit, walk_reach_prob,
};
use perish_core::dist::{random_mhr_explicit, HorizonDistribution, ValueDistribution};
use perish_core::lowerbounds::{eval_general_horizon, eval_loglog, eval_low_rate_geometric};
use perish_core::policies::{policy_from_name, MHR_MIX_TOTAL};
use perish_core::prophet::Instance;
use perish_core::simulator::monte_carlo;
use perish_core::stages::{build_stage_plan, expected_remaining, StageKind};
use perish_core::vpro::{
    build_vpro_lp, exact_optimal_policy_value, random_finite_instance, solve_lp,
    truthful_pricing_factory, vpro_assignment_factory,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PERISH_OUT_DIR";

/// Monte Carlo pass checks allow this many standard errors of slack.
const SIGMA: f64 = 3.0;
/// Tolerance for exact analytic comparisons.
const ANALYTIC_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "perish",
    version,
    about = "Experiments on online posted pricing of perishable items",
    after_help = "Flags override config-file values; config values override built-in defaults."
)]
pub struct Cli {
    /// TOML config file; every flag has a config equivalent (same name,
    /// snake_case). Unknown keys are rejected.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for Monte Carlo runs (default: all cores).
    /// Results never depend on this value.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output table format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    /// Output file (default: <out-dir>/<experiment>.<format>).
    #[arg(long, global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Directory for default-named output files (also settable via the
    /// PERISH_OUT_DIR environment variable; defaults to the working dir).
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Master seed; all randomness derives from it deterministically.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo trial count.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Progress notes on stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Option<Cmd>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Single MHR item: best fixed price vs the prophet (bound 2 - 1/mu).
    SingleMhr(SingleMhrArgs),
    /// Many MHR items: mixture policy vs the stage-decomposed prophet bound.
    MultiMhr(MultiMhrArgs),
    /// Low-rate geometric construction with Pareto values: prophet vs alg'.
    GeometricLb(GeometricLbArgs),
    /// Fixed-pricing gap construction whose ratio grows like log log m.
    FixedPriceGap(FixedPriceGapArgs),
    /// General-horizon construction separating VPro from Pro.
    GeneralHorizonGap(GeneralHorizonGapArgs),
    /// Random small instances: LP relaxation vs exact optimum vs policies.
    VproVerify(VproVerifyArgs),
    /// Ruin probabilities f_j(x) of the biased walk and their j -> inf limit.
    WalkTable(WalkTableArgs),
    /// Small-m and large-m low-rate ratio limits as functions of alpha.
    RatioCurve(RatioCurveArgs),
    /// Second-order stochastic dominance of random MHR horizons vs geometric.
    SosdCheck(SosdCheckArgs),
    /// Stage-plan boundaries, caps, and expected remaining items.
    StagePlan(StagePlanArgs),
}

#[derive(Debug, Default, Args)]
pub struct SingleMhrArgs {
    /// Horizon family: geometric | deterministic | uniform | truncated-geometric.
    #[arg(long)]
    pub horizon: Option<String>,
    /// Mean horizon parameter mu (>= 1).
    #[arg(long)]
    pub mean: Option<f64>,
    /// Simulation cap on horizon draws (default 40 * mean; a draw beyond the
    /// cap aborts the run rather than being truncated silently).
    #[arg(long)]
    pub cap: Option<u64>,
    /// Buyer values: uniform:LO:HI | atoms:V=W,V=W,... | pareto:ALPHA[:CAP].
    #[arg(long)]
    pub values: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct MultiMhrArgs {
    /// Number of items.
    #[arg(long)]
    pub m: Option<u64>,
    /// Mean of the i.i.d. geometric horizons.
    #[arg(long)]
    pub mean: Option<f64>,
    /// Simulation cap on horizon draws (default 40 * mean).
    #[arg(long)]
    pub cap: Option<u64>,
    /// Buyer values: uniform:LO:HI | atoms:V=W,... | pareto:ALPHA[:CAP].
    #[arg(long)]
    pub values: Option<String>,
    /// Stage shrink factor rho in (0,1).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Policy: multiple_mhr | single_fixed | balancing | blind |
    /// departure_simulation_odd | departure_simulation_even | single_item |
    /// fixed:<price>.
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct GeometricLbArgs {
    /// Number of items.
    #[arg(long)]
    pub m: Option<u64>,
    /// Per-step departure rate lambda (geometric mean 1/lambda), m*lambda <= 1.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Pareto tail index (> 1).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Pass floor on the measured prophet/alg' ratio
    /// (default 0.92 * small-m limit).
    #[arg(long)]
    pub min_ratio: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct FixedPriceGapArgs {
    /// Number of items; must be a power of two in [32, 2^20].
    #[arg(long)]
    pub m: Option<u64>,
}

#[derive(Debug, Default, Args)]
pub struct GeneralHorizonGapArgs {
    /// Construction scale parameter c >= 1 (instance has 2^(c * 2^c) steps).
    #[arg(long)]
    pub c: Option<u32>,
}

#[derive(Debug, Default, Args)]
pub struct VproVerifyArgs {
    /// Number of random instances to audit.
    #[arg(long)]
    pub instances: Option<u64>,
}

#[derive(Debug, Default, Args)]
pub struct WalkTableArgs {
    /// Comma-separated step budgets j >= 1, e.g. 1,3.
    #[arg(long)]
    pub j: Option<String>,
    /// Comma-separated down-step probabilities x in (0,1), e.g. 0.5.
    #[arg(long)]
    pub x: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct RatioCurveArgs {
    /// Comma-separated tail indices alpha > 1, e.g. 1.5,2,3.
    #[arg(long)]
    pub alpha: Option<String>,
}

#[derive(Debug, Default, Args)]
pub struct SosdCheckArgs {
    /// Number of random MHR distributions to draw.
    #[arg(long)]
    pub count: Option<u64>,
    /// Largest support size of the random distributions.
    #[arg(long)]
    pub max_support: Option<u64>,
    /// Largest threshold checked in the dominance comparison
    /// (default 4 * max_support).
    #[arg(long)]
    pub c_max: Option<u64>,
}

#[derive(Debug, Default, Args)]
pub struct StagePlanArgs {
    /// Number of items.
    #[arg(long)]
    pub m: Option<u64>,
    /// Horizon family: geometric | deterministic | uniform | truncated-geometric.
    #[arg(long)]
    pub horizon: Option<String>,
    /// Mean horizon parameter mu (>= 1).
    #[arg(long)]
    pub mean: Option<f64>,
    /// Cap for the truncated-geometric family (default 10 * mean).
    #[arg(long)]
    pub cap: Option<u64>,
    /// Stage shrink factor rho in (0,1).
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn ext(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

fn parse_format(s: &str) -> Result<OutputFormat> {
    match s {
        "csv" => Ok(OutputFormat::Csv),
        "json" => Ok(OutputFormat::Json),
        other => bail!("unknown format {other:?} (expected csv or json)"),
    }
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

/// A TOML value that may be a number, a list of numbers, or a
/// comma-separated string — mirrors how list-valued flags are typed.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum NumOrList {
    Num(f64),
    List(Vec<f64>),
    Text(String),
}

impl NumOrList {
    fn as_scalar(&self) -> Result<f64> {
        match self {
            NumOrList::Num(v) => Ok(*v),
            NumOrList::List(vs) if vs.len() == 1 => Ok(vs[0]),
            NumOrList::List(_) => bail!("expected a single number, got a list"),
            NumOrList::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("expected a number, got {s:?}")),
        }
    }

    fn as_list(&self) -> Result<Vec<f64>> {
        match self {
            NumOrList::Num(v) => Ok(vec![*v]),
            NumOrList::List(vs) => Ok(vs.clone()),
            NumOrList::Text(s) => parse_f64_list(s),
        }
    }
}

/// The config-file schema. Field names match the flag names; keys that
/// belong to other experiments are allowed (like unused flags would be),
/// unknown keys are errors.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: Option<String>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub format: Option<String>,
    pub output: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub verbose: Option<bool>,
    pub horizon: Option<String>,
    pub mean: Option<f64>,
    pub cap: Option<u64>,
    pub values: Option<String>,
    pub m: Option<u64>,
    pub lambda: Option<f64>,
    pub alpha: Option<NumOrList>,
    pub c: Option<u32>,
    pub rho: Option<f64>,
    pub policy: Option<String>,
    pub min_ratio: Option<f64>,
    pub j: Option<NumOrList>,
    pub x: Option<NumOrList>,
    pub count: Option<u64>,
    pub max_support: Option<u64>,
    pub c_max: Option<u64>,
    pub instances: Option<u64>,
}

pub fn load_config(path: &std::path::Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Str(String),
    U64(u64),
    F64(f64),
    Bool(bool),
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Str(s.to_string())
    }
}
impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Str(s)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::U64(v)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F64(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &'static [&'static str]) -> Self {
        Table { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    /// True when every `pass` cell in the table is true.
    pub fn all_pass(&self) -> bool {
        let Some(idx) = self.columns.iter().position(|&c| c == "pass") else {
            return true;
        };
        self.rows.iter().all(|r| r[idx] == Cell::Bool(true))
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }

    fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&csv_cell(cell));
            }
            out.push('\n');
        }
        out
    }

    /// JSON mirror of the CSV: an array of objects with keys in column order.
    fn to_json(&self) -> String {
        let mut out = String::from("[\n");
        for (ri, row) in self.rows.iter().enumerate() {
            out.push_str("  {");
            for (ci, cell) in row.iter().enumerate() {
                if ci > 0 {
                    out.push_str(", ");
                }
                let key = serde_json::to_string(self.columns[ci]).expect("plain key");
                let _ = write!(out, "{key}: {}", json_cell(cell));
            }
            out.push('}');
            if ri + 1 < self.rows.len() {
                out.push(',');
            }
            out.push('\n');
        }
        out.push_str("]\n");
        out
    }
}

fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

fn csv_cell(cell: &Cell) -> String {
    match cell {
        Cell::Str(s) => {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.clone()
            }
        }
        Cell::U64(v) => v.to_string(),
        Cell::F64(v) => format_f64(*v),
        Cell::Bool(v) => v.to_string(),
    }
}

fn json_cell(cell: &Cell) -> String {
    match cell {
        Cell::Str(s) => serde_json::to_string(s).expect("string encodes"),
        Cell::U64(v) => v.to_string(),
        Cell::F64(v) => serde_json::Number::from_f64(*v)
            .map(|n| n.to_string())
            .unwrap_or_else(|| "null".to_string()),
        Cell::Bool(v) => v.to_string(),
    }
}

// Fixed column orders, one constant per experiment.
pub const COLS_SINGLE_MHR: &[&str] = &[
    "experiment", "horizon", "mean", "cap", "values", "seed", "trials", "alg_mean",
    "alg_stderr", "pro_mean", "pro_stderr", "ratio", "ratio_stderr", "analytic_ratio",
    "bound", "pass",
];
pub const COLS_MULTI_MHR: &[&str] = &[
    "experiment", "m", "mean", "cap", "values", "rho", "policy", "seed", "trials",
    "alg_mean", "alg_stderr", "pro_mean", "pro_stderr", "ratio", "ratio_stderr",
    "stage_bound", "final_bound", "mix_floor", "bound", "pass",
];
pub const COLS_GEOMETRIC_LB: &[&str] = &[
    "experiment", "m", "lambda", "alpha", "seed", "trials", "alg_prime", "pro_mean",
    "pro_stderr", "gap_ratio", "walk_lb", "finite_m_lb", "limit_small_m",
    "limit_large_m", "bound", "pass",
];
pub const COLS_FIXED_PRICE_GAP: &[&str] = &[
    "experiment", "m", "seed", "trials", "best_t", "fixed_best_mean", "fixed_best_stderr",
    "pro_mean", "pro_stderr", "gap_ratio", "bound", "pass",
];
pub const COLS_GENERAL_HORIZON_GAP: &[&str] = &[
    "experiment", "c", "seed", "trials", "vpro_mean", "vpro_stderr", "pro_mean",
    "pro_stderr", "gap_ratio", "pro_lower_sum", "bound", "pass",
];
pub const COLS_VPRO_VERIFY: &[&str] = &[
    "experiment", "instance", "m", "n", "seed", "trials", "lp_opt", "monotone_opt",
    "exact_opt", "assignment_mean", "assignment_stderr", "truthful_mean",
    "truthful_stderr", "bound", "pass",
];
pub const COLS_WALK_TABLE: &[&str] = &[
    "experiment", "j", "x", "seed", "trials", "f_j", "f_limit", "ratio", "bound", "pass",
];
pub const COLS_RATIO_CURVE: &[&str] = &[
    "experiment", "alpha", "seed", "trials", "finite_m", "large_m", "bound", "pass",
];
pub const COLS_SOSD_CHECK: &[&str] = &[
    "experiment", "count", "max_support", "c_max", "seed", "trials", "holds",
    "violations", "first_violation", "bound", "pass",
];
pub const COLS_STAGE_PLAN: &[&str] = &[
    "experiment", "m", "horizon", "mean", "rho", "seed", "trials", "k", "start", "end",
    "kind", "stage_cap", "entry_cap", "expected_at_entry", "bound", "pass",
];

// ---------------------------------------------------------------------------
// Argument parsing helpers
// ---------------------------------------------------------------------------

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("cannot parse {t:?} as a number"))
        })
        .collect()
}

/// Parses a buyer-value spec: `uniform:LO:HI` (equal-mass integer atoms),
/// `atoms:V=W,V=W,...` (weights normalized), or `pareto:ALPHA[:CAP]`.
pub fn parse_values(spec: &str) -> Result<ValueDistribution> {
    let (head, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let dist = match head {
        "uniform" => {
            let (lo, hi) = rest
                .split_once(':')
                .ok_or_else(|| anyhow!("uniform needs LO:HI, got {spec:?}"))?;
            let lo: u64 = lo.parse().context("uniform LO")?;
            let hi: u64 = hi.parse().context("uniform HI")?;
            if lo > hi {
                bail!("uniform needs LO <= HI, got {spec:?}");
            }
            let n = (hi - lo + 1) as f64;
            ValueDistribution::DiscreteAtoms {
                atoms: (lo..=hi).map(|v| (v as f64, 1.0 / n)).collect(),
            }
        }
        "atoms" => {
            let mut atoms = Vec::new();
            for part in rest.split(',') {
                let (v, w) = part
                    .split_once('=')
                    .ok_or_else(|| anyhow!("atoms need V=W pairs, got {part:?}"))?;
                let v: f64 = v.trim().parse().context("atom value")?;
                let w: f64 = w.trim().parse().context("atom weight")?;
                atoms.push((v, w));
            }
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = atoms.iter().map(|&(_, w)| w).sum();
            if !(total > 0.0) {
                bail!("atom weights must have positive total");
            }
            for a in &mut atoms {
                a.1 /= total;
            }
            ValueDistribution::DiscreteAtoms { atoms }
        }
        "pareto" => {
            let mut parts = rest.split(':');
            let alpha: f64 = parts
                .next()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| anyhow!("pareto needs ALPHA, got {spec:?}"))?
                .parse()
                .context("pareto ALPHA")?;
            let cap: f64 = match parts.next() {
                Some(c) => c.parse().context("pareto CAP")?,
                None => 1e9,
            };
            ValueDistribution::Pareto { alpha, cap }
        }
        other => bail!("unknown value family {other:?} (uniform | atoms | pareto)"),
    };
    dist.validated().map_err(|e| anyhow!("invalid values {spec:?}: {e}"))
}

/// Builds a horizon distribution from a family name and mean. For the
/// `deterministic` and `uniform` families the mean must be a positive
/// integer (uniform is over `{1, ..., 2*mean - 1}`).
pub fn parse_horizon(family: &str, mean: f64, cap: Option<u64>) -> Result<HorizonDistribution> {
    let int_mean = || -> Result<u64> {
        if mean >= 1.0 && mean.fract() == 0.0 {
            Ok(mean as u64)
        } else {
            bail!("family {family:?} needs an integer mean >= 1, got {mean}")
        }
    };
    let dist = match family {
        "geometric" => HorizonDistribution::Geometric { mean },
        "deterministic" => HorizonDistribution::Deterministic { n: int_mean()? },
        "uniform" => HorizonDistribution::UniformRange { lo: 1, hi: 2 * int_mean()? - 1 },
        "truncated-geometric" => HorizonDistribution::TruncatedGeometric {
            mean,
            cap: cap.unwrap_or((10.0 * mean).ceil() as u64),
        },
        other => bail!(
            "unknown horizon family {other:?} \
             (geometric | deterministic | uniform | truncated-geometric)"
        ),
    };
    dist.validated().map_err(|e| anyhow!("invalid horizon: {e}"))
}

/// Simulation cap: bounded families use their own support, unbounded ones
/// get `cap` or 40 mean horizons of headroom (draw-beyond-cap probability
/// about `e^{-40}` per trial, which aborts the run rather than truncating).
fn sim_cap(d: &HorizonDistribution, cap: Option<u64>, mean: f64) -> u64 {
    d.support_max()
        .unwrap_or_else(|| cap.unwrap_or(((40.0 * mean).ceil() as u64).max(40)))
}

// ---------------------------------------------------------------------------
// Experiment runners
// ---------------------------------------------------------------------------

struct Common {
    seed: u64,
    trials: Option<u64>,
}

fn run_single_mhr(a: &SingleMhrArgs, f: &FileConfig, c: &Common) -> Result<Table> {
    let family = a.horizon.clone().or_else(|| f.horizon.clone()).unwrap_or_else(|| "geometric".into());
    let mean = a.mean.or(f.mean).unwrap_or(2.0);
    let cap = a.cap.or(f.cap);
    let values_spec = a.values.clone().or_else(|| f.values.clone()).unwrap_or_else(|| "uniform:1:100".into());
    let trials = c.trials.unwrap_or(10_000);

    let d = parse_horizon(&family, mean, cap)?;
    let v = parse_values(&values_spec)?;
    let time_cap = sim_cap(&d, cap, mean);
    let inst = Instance::iid(1, d.clone(), v, time_cap)?;
    let plan = build_stage_plan(&inst, 0.5)?;
    policy_from_name("single_fixed", &inst, &plan, ChaCha8Rng::seed_from_u64(0))?;
    let factory = |_t: u64, rng: ChaCha8Rng| {
        policy_from_name("single_fixed", &inst, &plan, rng).expect("validated above")
    };
    let rep = monte_carlo(&inst, &factory, trials, c.seed, true)?;

    let analytic = single_mhr_ratio(&d);
    let bound = 2.0 - 1.0 / d.mean();
    let pass = analytic <= bound + ANALYTIC_TOL && rep.ratio <= bound + SIGMA * rep.ratio_stderr;

    let mut t = Table::new(COLS_SINGLE_MHR);
    t.push(vec![
        "single-mhr".into(),
        family.into(),
        mean.into(),
        time_cap.into(),
        values_spec.into(),
        c.seed.into(),
        trials.into(),
        rep.alg.mean.into(),
        rep.alg.stderr.into(),
        rep.pro.mean.into(),
        rep.pro.stderr.into(),
        rep.ratio.into(),
        rep.ratio_stderr.into(),
        analytic.into(),
        bound.into(),
        pass.into(),
    ]);
    Ok(t)
}

fn run_multi_mhr(a: &MultiMhrArgs, f: &FileConfig, c: &Common) -> Result<Table> {
    let m = a.m.or(f.m).unwrap_or(20);
    let mean = a.mean.or(f.mean).unwrap_or(8.0);
    let cap = a.cap.or(f.cap);
    let values_spec = a.values.clone().or_else(|| f.values.clone()).unwrap_or_else(|| "uniform:1:100".into());
    let rho = a.rho.or(f.rho).unwrap_or(0.5);
    let policy = a.policy.clone().or_else(|| f.policy.clone()).unwrap_or_else(|| "multiple_mhr".into());
    let trials = c.trials.unwrap_or(10_000);

    let d = parse_horizon("geometric", mean, None)?;
    let v = parse_values(&values_spec)?;
    let time_cap = sim_cap(&d, cap, mean);
    let inst = Instance::iid(m as usize, d, v, time_cap)?;
    let plan = build_stage_plan(&inst, rho)?;
    policy_from_name(&policy, &inst, &plan, ChaCha8Rng::seed_from_u64(0))?;
    let factory = |_t: u64, rng: ChaCha8Rng| {
        policy_from_name(&policy, &inst, &plan, rng).expect("validated above")
    };
    let rep = monte_carlo(&inst, &factory, trials, c.seed, true)?;

    let sb = prophet_upper_bound(&inst, &plan)?;
    let stage_total: f64 = sb.per_stage.iter().sum();
    let mix_floor = sb.total / MHR_MIX_TOTAL;
    let pro_ok = rep.pro.mean <= sb.total + SIGMA * rep.pro.stderr;
    let alg_ok = policy != "multiple_mhr"
        || rep.alg.mean >= mix_floor - SIGMA * rep.alg.stderr;
    let pass = pro_ok && alg_ok;

    let mut t = Table::new(COLS_MULTI_MHR);
    t.push(vec![
        "multi-mhr".into(),
        m.into(),
        mean.into(),
        time_cap.into(),
        values_spec.into(),
        rho.into(),
        policy.into(),
        c.seed.into(),
        trials.into(),
        rep.alg.mean.into(),
        rep.alg.stderr.into(),
        rep.pro.mean.into(),
        rep.pro.stderr.into(),
        rep.ratio.into(),
        rep.ratio_stderr.into(),
        stage_total.into(),
        sb.final_bound.into(),
        mix_floor.into(),
        sb.total.into(),
        pass.into(),
    ]);
    Ok(t)
}

fn run_geometric_lb(a: &GeometricLbArgs, f: &FileConfig, c: &Common) -> Result<Table> {
    let m = a.m.or(f.m).unwrap_or(1);
    let lambda = a.lambda.or(f.lambda).unwrap_or(1e-4);
    let alpha = match (&a.alpha, &f.alpha) {
        (Some(v), _) => *v,
        (None, Some(n)) => n.as_scalar()?,
        (None, None) => 2.0,
    };
    let trials = c.trials.unwrap_or(20_000);

    let report = eval_low_rate_geometric(m as usize, lambda, alpha, trials, c.seed)?;
    let need = |label: &str| {
        report
            .analytic_value(label)
            .ok_or_else(|| anyhow!("missing analytic value {label}"))
    };
    let alg_prime = need("alg_prime")?;
    let finite_lb = need("pro_prime_finite_m_lb")?;
    let small = need("ratio_limit_small_m")?;
    let large = need("ratio_limit_large_m")?;
    let walk_lb = need("walk_lb")?;
    let (pro, pro_se) = report
        .mc_value("pro")
        .ok_or_else(|| anyhow!("missing MC value pro"))?;
    let min_ratio = a.min_ratio.or(f.min_ratio).unwrap_or(0.92 * small);
    let pass = report.gap_ratio >= min_ratio;

    let mut t = Table::new(COLS_GEOMETRIC_LB);
    t.push(vec![
        "geometric-lb".into(),
        m.into(),
        lambda.into(),
        alpha.into(),
        c.seed.into(),
        trials.into(),
        alg_prime.into(),
        pro.into(),
        pro_se.into(),
        report.gap_ratio.into(),
        walk_lb.into(),
        finite_lb.into(),
        small.into(),
        large.into(),
        min_ratio.into(),
        pass.into(),
    ]);
    Ok(t)
}

fn run_fixed_price_gap(a: &FixedPriceGapArgs, f: &FileConfig, c: &Common) -> Result<Table> {
    let m = a.m.or(f.m).unwrap_or(1024);
    let trials = c.trials.unwrap_or(2_000);

    let report = eval_loglog(m, trials, c.seed)?;
    let best_t = report
        .analytic_value("best_threshold_t")
        .ok_or_else(|| anyhow!("missing best_threshold_t"))?;
    let bound = report
        .analytic_value("sing_bound_best")
        .ok_or_else(|| anyhow!("missing sing_bound_best"))?;
    let (best, best_se) = report
        .mc_value("fixed_best")
        .ok_or_else(|| anyhow!("missing fixed_best"))?;
    let (pro, pro_se) = report.mc_value("pro").ok_or_else(|| anyhow!("missing pro"))?;
    let pass = best <= bound + SIGMA * best_se;

    let mut t = Table::new(COLS_FIXED_PRICE_GAP);
    t.push(vec![
        "fixed-price-gap".into(),
        m.into(),
        c.seed.into(),
        trials.into(),
        best_t.into(),
        best.into(),
        best_se.into(),
        pro.into(),
        pro_se.into(),
        report.gap_ratio.into(),
        bound.into(),
        pass.into(),
    ]);
    Ok(t)
}

fn run_general_horizon_gap(
    a: &GeneralHorizonGapArgs,
    f: &FileConfig,
    c: &Common,
) -> Result<Table> {
    let cc = a.c.or(f.c).unwrap_or(2);
    let trials = c.trials.unwrap_or(4_000);

    let report = eval_general_horizon(cc, trials, c.seed)?;
    let bound = report
        .analytic_value("vpro_upper_sum")
        .ok_or_else(|| anyhow!("missing vpro_upper_sum"))?;
    let pro_lower = report
        .analytic_value("pro_lower_sum")
        .ok_or_else(|| anyhow!("missing pro_lower_sum"))?;
    let (vpro, vpro_se) = report.mc_value("vpro").ok_or_else(|| anyhow!("missing vpro"))?;
    let (pro, pro_se) = report.mc_value("pro").ok_or_else(|| anyhow!("missing pro"))?;
    let pass = vpro <= bound + SIGMA * vpro_se;

    let mut t = Table::new(COLS_GENERAL_HORIZON_GAP);
    t.push(vec![
        "general-horizon-gap".into(),
        u64::from(cc).into(),
        c.seed.into(),
        trials.into(),
        vpro.into(),
        vpro_se.into(),
        pro.into(),
        pro_se.into(),
        report.gap_ratio.into(),
        pro_lower.into(),
        bound.into(),
        pass.into(),
    ]);
    Ok(t)
}

fn run_vpro_verify(a: &VproVerifyArgs, f: &FileConfig, c: &Common) -> Result<Table> {
    let instances = a.instances.or(f.instances).unwrap_or(50);
    let trials = c.trials.unwrap_or(4_000);

    let mut gen_rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut t = Table::new(COLS_VPRO_VERIFY);
    for idx in 0..instances {
        let fi = random_finite_instance(&mut gen_rng);
        let lp = build_vpro_lp(&fi, false)?;
        let sol = solve_lp(&lp)?;
        let lp_mono = build_vpro_lp(&fi, true)?;
        let sol_mono = solve_lp(&lp_mono)?;
        let exact = exact_optimal_policy_value(&fi)?;
        let inst = fi.to_instance()?;

        let assign_factory = vpro_assignment_factory(&lp, &sol, &fi);
        let a_rep = monte_carlo(&inst, &assign_factory, trials, c.seed.wrapping_add(1 + 2 * idx), true)?;
        let truthful_factory = truthful_pricing_factory(&lp_mono, &sol_mono, &fi)?;
        let t_rep = monte_carlo(&inst, &truthful_factory, trials, c.seed.wrapping_add(2 + 2 * idx), true)?;

        let lp_ok = sol.objective >= exact - ANALYTIC_TOL;
        let mono_ok = sol_mono.objective >= exact - ANALYTIC_TOL
            && sol_mono.objective <= sol.objective + ANALYTIC_TOL;
        let a_ok = a_rep.alg.mean >= sol.objective / 8.0 - SIGMA * a_rep.alg.stderr
            && a_rep.alg.mean <= exact + SIGMA * a_rep.alg.stderr;
        let t_ok = t_rep.alg.mean >= sol_mono.objective / 8.0 - SIGMA * t_rep.alg.stderr
            && t_rep.alg.mean <= exact + SIGMA * t_rep.alg.stderr;
        let pass = lp_ok && mono_ok && a_ok && t_ok;

        t.push(vec![
            "vpro-verify".into(),
            idx.into(),
            (fi.m() as u64).into(),
            fi.n().into(),
            c.seed.into(),
            trials.into(),
            sol.objective.into(),
            sol_mono.objective.into(),
            exact.into(),
            a_rep.alg.mean.into(),
            a_rep.alg.stderr.into(),
            t_rep.alg.mean.into(),
            t_rep.alg.stderr.into(),
            (sol.objective / 8.0).into(),
            pass.into(),
        ]);
    }
    Ok(t)
}

fn run_walk_table(a: &WalkTableArgs, f: &FileConfig, c: &Common) -> Result<Table> {
    let js: Vec<f64> = match (&a.j, &f.j) {
        (Some(s), _) => parse_f64_list(s)?,
        (None, Some(n)) => n.as_list()?,
        (None, None) => vec![1.0, 2.0, 3.0, 5.0, 8.0, 13.0],
    };
    let xs: Vec<f64> = match (&a.x, &f.x) {
        (Some(s), _) => parse_f64_list(s)?,
        (None, Some(n)) => n.as_list()?,
        (None, None) => vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9],
    };
    let mut t = Table::new(COLS_WALK_TABLE);
    for &jf in &js {
        if !(jf >= 1.0) || jf.fract() != 0.0 || jf > u32::MAX as f64 {
            bail!("--j entries must be integers >= 1, got {jf}");
        }
        let j = jf as u32;
        for &x in &xs {
            if !(x > 0.0 && x < 1.0) {
                bail!("--x entries must lie in (0,1), got {x}");
            }
            let fj = walk_reach_prob(j, x);
            let limit = walk_limit(x);
            let pass = fj <= limit + ANALYTIC_TOL;
            t.push(vec![
                "walk-table".into(),
                u64::from(j).into(),
                x.into(),
                c.seed.into(),
                0u64.into(),
                fj.into(),
                limit.into(),
                (fj / limit).into(),
                limit.into(),
                pass.into(),
            ]);
        }
    }
    Ok(t)
}

fn run_ratio_curve(a: &RatioCurveArgs, f: &FileConfig, c: &Common) -> Result<Table> {
    let alphas: Vec<f64> = match (&a.alpha, &f.alpha) {
        (Some(s), _) => parse_f64_list(s)?,
        (None, Some(n)) => n.as_list()?,
        (None, None) => vec![1.5, 2.0, 3.0, 4.0],
    };
    let mut t = Table::new(COLS_RATIO_CURVE);
    for &alpha in &alphas {
        let (finite_m, large_m) = ratio_lb_alpha(alpha)?;
        let pass = finite_m <= large_m + ANALYTIC_TOL;
        t.push(vec![
            "ratio-curve".into(),
            alpha.into(),
            c.seed.into(),
            0u64.into(),
            finite_m.into(),
            large_m.into(),
            large_m.into(),
            pass.into(),
        ]);
    }
    Ok(t)
}

fn run_sosd_check(a: &SosdCheckArgs, f: &FileConfig, c: &Common) -> Result<Table> {
    let count = a.count.or(f.count).unwrap_or(1_000);
    let max_support = a.max_support.or(f.max_support).unwrap_or(30);
    let c_max = a.c_max.or(f.c_max).unwrap_or(4 * max_support);

    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut holds = 0u64;
    let mut violations = 0u64;
    let mut first_violation = -1.0;
    for _ in 0..count {
        let d = random_mhr_explicit(&mut rng, max_support);
        let (ok, witness) = d.sosd_vs_geometric(c_max);
        if ok {
            holds += 1;
        } else {
            violations += 1;
            if first_violation < 0.0 {
                first_violation = witness.map(|w| w as f64).unwrap_or(-1.0);
            }
        }
    }
    let pass = violations == 0;

    let mut t = Table::new(COLS_SOSD_CHECK);
    t.push(vec![
        "sosd-check".into(),
        count.into(),
        max_support.into(),
        c_max.into(),
        c.seed.into(),
        count.into(),
        holds.into(),
        violations.into(),
        first_violation.into(),
        0.0.into(),
        pass.into(),
    ]);
    Ok(t)
}

fn run_stage_plan(a: &StagePlanArgs, f: &FileConfig, c: &Common) -> Result<Table> {
    let m = a.m.or(f.m).unwrap_or(40);
    let family = a.horizon.clone().or_else(|| f.horizon.clone()).unwrap_or_else(|| "geometric".into());
    let mean = a.mean.or(f.mean).unwrap_or(8.0);
    let rho = a.rho.or(f.rho).unwrap_or(0.5);

    let d = parse_horizon(&family, mean, a.cap.or(f.cap))?;
    let time_cap = sim_cap(&d, a.cap.or(f.cap), mean);
    let values = ValueDistribution::DiscreteAtoms { atoms: vec![(1.0, 1.0)] };
    let inst = Instance::iid(m as usize, d, values, time_cap)?;
    let plan = build_stage_plan(&inst, rho)?;

    let mut t = Table::new(COLS_STAGE_PLAN);
    let mut push_row = |k: u64, start: u64, end: u64, kind: &str, stage_cap: f64, entry: f64| {
        let expected = expected_remaining(&inst.horizons, start - 1);
        let pass = expected <= entry + ANALYTIC_TOL;
        t.push(vec![
            "stage-plan".into(),
            m.into(),
            family.clone().into(),
            mean.into(),
            rho.into(),
            c.seed.into(),
            0u64.into(),
            k.into(),
            start.into(),
            end.into(),
            kind.into(),
            stage_cap.into(),
            entry.into(),
            expected.into(),
            entry.into(),
            pass.into(),
        ]);
    };
    for stage in &plan.stages {
        let kind = match stage.kind {
            StageKind::Long => "long",
            StageKind::Short => "short",
            StageKind::Empty => "empty",
        };
        push_row(
            u64::from(stage.k),
            stage.start,
            stage.end,
            kind,
            stage.cap,
            plan.entry_cap(stage.k),
        );
    }
    // Final phase: open-ended (`end` is reported as 0), capped at m * rho^s.
    push_row(
        u64::from(plan.s) + 1,
        plan.final_start,
        0,
        "final",
        f64::NAN,
        plan.entry_cap(plan.s + 1),
    );
    Ok(t)
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

pub fn experiment_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::SingleMhr(_) => "single-mhr",
        Cmd::MultiMhr(_) => "multi-mhr",
        Cmd::GeometricLb(_) => "geometric-lb",
        Cmd::FixedPriceGap(_) => "fixed-price-gap",
        Cmd::GeneralHorizonGap(_) => "general-horizon-gap",
        Cmd::VproVerify(_) => "vpro-verify",
        Cmd::WalkTable(_) => "walk-table",
        Cmd::RatioCurve(_) => "ratio-curve",
        Cmd::SosdCheck(_) => "sosd-check",
        Cmd::StagePlan(_) => "stage-plan",
    }
}

fn command_from_name(name: &str) -> Result<Cmd> {
    Ok(match name {
        "single-mhr" => Cmd::SingleMhr(Default::default()),
        "multi-mhr" => Cmd::MultiMhr(Default::default()),
        "geometric-lb" => Cmd::GeometricLb(Default::default()),
        "fixed-price-gap" => Cmd::FixedPriceGap(Default::default()),
        "general-horizon-gap" => Cmd::GeneralHorizonGap(Default::default()),
        "vpro-verify" => Cmd::VproVerify(Default::default()),
        "walk-table" => Cmd::WalkTable(Default::default()),
        "ratio-curve" => Cmd::RatioCurve(Default::default()),
        "sosd-check" => Cmd::SosdCheck(Default::default()),
        "stage-plan" => Cmd::StagePlan(Default::default()),
        other => bail!("unknown experiment {other:?} in config"),
    })
}

/// Runs one experiment end to end. Returns `true` when every row passed.
pub fn execute(cli: Cli) -> Result<bool> {
    let file = match &cli.config {
        Some(path) => load_config(path)?,
        None => FileConfig::default(),
    };

    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        // Only fails when a pool already exists (e.g. two runs in-process);
        // results are thread-count independent either way.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let cmd = match cli.command {
        Some(cmd) => {
            if let Some(file_exp) = &file.experiment {
                if file_exp != experiment_name(&cmd) {
                    bail!(
                        "config selects experiment {file_exp:?} but the command line says {:?}",
                        experiment_name(&cmd)
                    );
                }
            }
            cmd
        }
        None => match &file.experiment {
            Some(name) => command_from_name(name)?,
            None => bail!("no experiment selected: pass a subcommand or set `experiment` in the config"),
        },
    };
    let name = experiment_name(&cmd);

    let common = Common {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        trials: cli.trials.or(file.trials),
    };
    let verbose = cli.verbose || file.verbose.unwrap_or(false);

    let started = std::time::Instant::now();
    let table = match &cmd {
        Cmd::SingleMhr(a) => run_single_mhr(a, &file, &common)?,
        Cmd::MultiMhr(a) => run_multi_mhr(a, &file, &common)?,
        Cmd::GeometricLb(a) => run_geometric_lb(a, &file, &common)?,
        Cmd::FixedPriceGap(a) => run_fixed_price_gap(a, &file, &common)?,
        Cmd::GeneralHorizonGap(a) => run_general_horizon_gap(a, &file, &common)?,
        Cmd::VproVerify(a) => run_vpro_verify(a, &file, &common)?,
        Cmd::WalkTable(a) => run_walk_table(a, &file, &common)?,
        Cmd::RatioCurve(a) => run_ratio_curve(a, &file, &common)?,
        Cmd::SosdCheck(a) => run_sosd_check(a, &file, &common)?,
        Cmd::StagePlan(a) => run_stage_plan(a, &file, &common)?,
    };

    let format = match (cli.format, &file.format) {
        (Some(fmt), _) => fmt,
        (None, Some(s)) => parse_format(s)?,
        (None, None) => OutputFormat::Csv,
    };
    let rendered = table.render(format);
    print!("{rendered}");

    let path = match cli.output.or_else(|| file.output.clone()) {
        Some(p) => p,
        None => {
            let dir = cli
                .out_dir
                .or_else(|| file.out_dir.clone())
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            dir.join(format!("{name}.{}", format.ext()))
        }
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))?;
        }
    }
    fs::write(&path, &rendered).with_context(|| format!("cannot write {}", path.display()))?;
    if verbose {
        eprintln!(
            "wrote {} ({} rows) in {:.2}s",
            path.display(),
            table.rows.len(),
            started.elapsed().as_secs_f64()
        );
    }
    Ok(table.all_pass())
}

/// Entry point used by the `perish` binary: parses flags, runs, and maps the
/// outcome to an exit code (0 pass, 2 threshold failure, 1 error).
pub fn run_from_args() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}
