//! Replicated simulations, normalization and the statistical comparisons
//! against the limit laws.

pub mod stats;

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branching::{decompose_counts, simulate_counts, GenerationCounts, MeanCurve, SimOptions};
use crate::error::{Error, Result};
use crate::models::{classify_conditions, ConditionReport, ModelSpec, Regime};
use crate::normalization::{JFunction, NormalizationPlan};
use crate::renewal_numerics::{ExactMean, MeanTables};
use crate::sampling::{stream_for, Role, Stream, StreamKey};
use crate::stable_limit::{limit_functional, required_horizon, simulate_path, StableSpec};

pub use stats::{ks_one_sample, ks_two_sample, trend_verdict, KsResult, Summary};

/// Environment variable overriding the default worker count.
pub const WORKERS_ENV: &str = "PRWLAB_WORKERS";

/// Replica id offset for the auxiliary draws estimating `E|S_alpha(1)|`.
const ABS_MOMENT_REPLICA: u64 = 1 << 40;
const ABS_MOMENT_DRAWS: usize = 1_000_000;

pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Maps `f` over `0..n` on a pool of `workers` threads, keeping index order.
pub fn par_map<T, F>(workers: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FddMain,
    FddBaseline,
    FirstGenFlt,
    Decomposition,
    SelfSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Grid tables, replaced by a closed form when the model has one.
    #[default]
    NumericVj,
    /// Closed form only; models without one are rejected.
    ExactFormula,
}

fn default_u() -> Vec<f64> {
    vec![1.0]
}
fn default_replicas() -> usize {
    1000
}
fn default_dy() -> f64 {
    0.01
}
fn default_slack() -> f64 {
    0.15
}
fn default_exclusion() -> f64 {
    0.05
}
fn default_cap() -> usize {
    crate::branching::DEFAULT_POPULATION_CAP
}
fn default_true() -> bool {
    true
}
fn default_scale_factor() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub mode: Mode,
    #[serde(default)]
    pub t_grid: Vec<f64>,
    /// Generation index `j(t)`; filled in by [`ExperimentConfig::resolve`].
    #[serde(default)]
    pub j: Option<JFunction>,
    #[serde(default = "default_u")]
    pub u_points: Vec<f64>,
    /// Tree replicas `M`.
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Limit samples `M_L`.
    #[serde(default = "default_replicas")]
    pub limit_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub centering: Centering,
    /// Grid step of simulated limit paths.
    #[serde(default = "default_dy")]
    pub dy: f64,
    #[serde(default = "default_slack")]
    pub trend_slack: f64,
    /// Largest tolerated fraction of replicas lost to the population cap.
    #[serde(default = "default_exclusion")]
    pub max_exclusion_fraction: f64,
    #[serde(default = "default_cap")]
    pub population_cap: usize,
    /// Step of the mean tables; chosen from the model when absent.
    #[serde(default)]
    pub grid_step: Option<f64>,
    #[serde(default = "default_true")]
    pub aggregate_last_generation: bool,
    /// `a` in the self-similarity comparison.
    #[serde(default = "default_scale_factor")]
    pub scale_factor: f64,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, mode: Mode) -> Self {
        ExperimentConfig {
            model,
            mode,
            t_grid: Vec::new(),
            j: None,
            u_points: default_u(),
            replicas: default_replicas(),
            limit_samples: default_replicas(),
            seed: 0,
            centering: Centering::default(),
            dy: default_dy(),
            trend_slack: default_slack(),
            max_exclusion_fraction: default_exclusion(),
            population_cap: default_cap(),
            grid_step: None,
            aggregate_last_generation: true,
            scale_factor: default_scale_factor(),
        }
    }

    /// Fills defaults and validates.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = self.clone();
        if c.replicas < 100 {
            return Err(Error::param("replicas", format!("must be at least 100, got {}", c.replicas)));
        }
        if c.limit_samples < 100 {
            return Err(Error::param(
                "limit_samples",
                format!("must be at least 100, got {}", c.limit_samples),
            ));
        }
        if c.u_points.is_empty() || c.u_points.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
            return Err(Error::param("u_points", "must be a nonempty list of positive numbers"));
        }
        if !(c.dy > 0.0 && c.dy.is_finite()) {
            return Err(Error::param("dy", format!("must be positive, got {}", c.dy)));
        }
        if !(c.trend_slack >= 0.0) {
            return Err(Error::param("trend_slack", "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&c.max_exclusion_fraction) {
            return Err(Error::param("max_exclusion_fraction", "must lie in [0, 1]"));
        }
        if c.mode != Mode::SelfSimilarity {
            if c.t_grid.is_empty() {
                return Err(Error::param("t_grid", "must not be empty"));
            }
            if c.t_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
                return Err(Error::param("t_grid", "entries must be positive"));
            }
            if c.t_grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::param("t_grid", "must be increasing"));
            }
        }
        if !(c.scale_factor > 0.0 && c.scale_factor.is_finite()) {
            return Err(Error::param("scale_factor", "must be positive"));
        }
        let gamma = c.model.gamma();
        match c.mode {
            Mode::FirstGenFlt => {
                match c.j {
                    None | Some(JFunction::Fixed { j: 1 }) => {}
                    Some(other) => {
                        return Err(Error::param(
                            "j",
                            format!("first_gen_flt uses generation 1 only, got {other:?}"),
                        ))
                    }
                }
                c.j = Some(JFunction::Fixed { j: 1 });
                c.u_points = vec![1.0];
            }
            Mode::SelfSimilarity => {}
            _ => {
                let j = c.j.unwrap_or_else(|| JFunction::default_for(gamma));
                if c.mode == Mode::FddMain {
                    j.validate(gamma)?;
                } else if let JFunction::Fixed { j: 0 } = j {
                    return Err(Error::param("j.j", "must be at least 1"));
                }
                c.j = Some(j);
            }
        }
        Ok(c)
    }

    fn sim_options(&self) -> SimOptions {
        SimOptions {
            population_cap: self.population_cap,
            aggregate_last_generation: self.aggregate_last_generation,
            ..SimOptions::default()
        }
    }
}

/// Stream of tree replica `r` at the `ti`-th horizon.
pub fn tree_stream(seed: u64, replica: u64, ti: usize) -> Stream {
    stream_for(StreamKey::new(seed, replica, Role::Tree)).child(ti as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    /// Two-sample test against simulated limit values.
    Simulated { samples: usize },
    /// One-sample test against the centered normal law.
    Normal { variance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringCheck {
    /// `mean` for finite-variance scaling, `trimmed_mean_difference` otherwise.
    pub statistic: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsMoment {
    pub simulated: f64,
    pub limit: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub t: f64,
    pub u: f64,
    pub j_u: usize,
    pub log_prefactor: f64,
    pub centering_value: f64,
    pub centering_source: String,
    pub reference: Reference,
    pub ks: KsResult,
    pub simulated: Summary,
    pub limit: Option<Summary>,
    pub centering_check: CenteringCheck,
    pub abs_moment: Option<AbsMoment>,
    #[serde(skip)]
    pub normalized: Vec<f64>,
    #[serde(skip)]
    pub replica_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub u: f64,
    pub d_values: Vec<f64>,
    pub verdict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub t: f64,
    pub u_a: f64,
    pub u_b: f64,
    /// Rank correlation of the normalized counts.
    pub simulated: f64,
    pub limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCell {
    pub t: f64,
    pub j: usize,
    pub log_prefactor: f64,
    pub martingale: Summary,
    pub shot_noise: Summary,
    #[serde(skip)]
    pub martingale_values: Vec<f64>,
    #[serde(skip)]
    pub shot_noise_values: Vec<f64>,
}

/// Largest ratio of shot-noise IQRs across the grid still called stable.
pub const SHOT_NOISE_IQR_RATIO: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub cells: Vec<DecompositionCell>,
    pub martingale_variances: Vec<f64>,
    pub martingale_decreasing: bool,
    pub shot_noise_iqr_ratio: f64,
    pub shot_noise_stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarityReport {
    pub alpha: f64,
    pub a: f64,
    pub u: f64,
    pub samples: usize,
    pub ks: KsResult,
    #[serde(skip)]
    pub base: Vec<f64>,
    #[serde(skip)]
    pub scaled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub t: f64,
    pub replica_ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Events {
    pub tree_draws: u64,
    pub limit_increments: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub conditions: ConditionReport,
    pub plans: Vec<NormalizationPlan>,
    pub numerics_step: Option<f64>,
    pub cells: Vec<CellReport>,
    pub trends: Vec<TrendReport>,
    pub correlations: Vec<CorrelationReport>,
    pub decomposition: Option<DecompositionReport>,
    pub self_similarity: Option<SelfSimilarityReport>,
    pub exclusions: Vec<Exclusion>,
    pub events: Events,
    pub timing: Timing,
    #[serde(skip)]
    pub limit_values: Vec<(f64, Vec<f64>)>,
}

impl ExperimentReport {
    fn empty(config: ExperimentConfig, conditions: ConditionReport) -> Self {
        ExperimentReport {
            config,
            conditions,
            plans: Vec::new(),
            numerics_step: None,
            cells: Vec::new(),
            trends: Vec::new(),
            correlations: Vec::new(),
            decomposition: None,
            self_similarity: None,
            exclusions: Vec::new(),
            events: Events::default(),
            timing: Timing::default(),
            limit_values: Vec::new(),
        }
    }

    pub fn cell(&self, t: f64, u: f64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.t == t && c.u == u)
    }

    /// JSON of everything except the timing block; a pure function of the config.
    pub fn statistical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timing");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Rows `t, u, replica_id, normalized_value, kind`.
    pub fn write_samples_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "u", "replica_id", "normalized_value", "kind"])?;
        for c in &self.cells {
            for (r, v) in c.replica_ids.iter().zip(&c.normalized) {
                out.write_record([c.t.to_string(), c.u.to_string(), r.to_string(), v.to_string(), "simulated".into()])?;
            }
            if let Some((_, lim)) = self.limit_values.iter().find(|(u, _)| *u == c.u) {
                for (i, v) in lim.iter().enumerate() {
                    out.write_record([c.t.to_string(), c.u.to_string(), i.to_string(), v.to_string(), "limit".into()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// `V_j(t)` from a closed form or from grid tables.
struct Centerer {
    exact: Option<ExactMean>,
    tables: Option<MeanTables>,
}

impl Centerer {
    fn build(cfg: &ExperimentConfig, t_max: f64, j_max: usize) -> Result<Centerer> {
        let exact = ExactMean::for_model(&cfg.model);
        if exact.is_none() && cfg.centering == Centering::ExactFormula {
            return Err(Error::Conditions("centering exact_formula needs a model with a closed-form mean".into()));
        }
        let tables = match exact {
            Some(_) => None,
            None => Some(MeanTables::compute(&cfg.model, cfg.grid_step, t_max, j_max)?),
        };
        Ok(Centerer { exact, tables })
    }

    fn eval(&self, j: usize, t: f64) -> Result<(f64, &'static str)> {
        match (&self.exact, &self.tables) {
            (Some(e), _) => Ok((e.eval(j, t), "exact")),
            (None, Some(tab)) => Ok((tab.numeric(j, t)?, "numeric")),
            _ => unreachable!("centerer without a source"),
        }
    }

    fn curve(&self, j: usize) -> MeanCurve {
        if j == 0 {
            return MeanCurve::Unit;
        }
        match (&self.exact, &self.tables) {
            (Some(e), _) => MeanCurve::Exact { form: *e, j },
            (None, Some(tab)) => MeanCurve::Grid(tab.v[j - 1].clone()),
            _ => unreachable!("centerer without a source"),
        }
    }

    fn step(&self) -> Option<f64> {
        self.tables.as_ref().map(|t| t.step)
    }
}

/// `L_alpha(u)` for each `u` from `n` simulated paths; entry `k` of the
/// result belongs to `u_points[k]`.
pub fn simulate_limit_samples(
    alpha: f64,
    u_points: &[f64],
    n: usize,
    dy: f64,
    seed: u64,
    role: Role,
    workers: usize,
) -> Result<Vec<Vec<f64>>> {
    let spec = StableSpec::new(alpha)?;
    let horizon = required_horizon(u_points);
    let rows = par_map(workers, n, |i| -> Result<Vec<f64>> {
        let mut s = stream_for(StreamKey::new(seed, i as u64, role));
        let path = simulate_path(&spec, dy, horizon, &mut s)?;
        Ok(limit_functional(&path, u_points)?.values)
    })?;
    let mut out = vec![Vec::with_capacity(n); u_points.len()];
    for row in rows {
        for (k, v) in row?.into_iter().enumerate() {
            out[k].push(v);
        }
    }
    Ok(out)
}

/// `n` draws of `S_alpha(1)`.
pub fn simulate_marginal_samples(alpha: f64, n: usize, seed: u64, role: Role, workers: usize) -> Result<Vec<f64>> {
    let spec = StableSpec::new(alpha)?;
    par_map(workers, n, |i| {
        let mut s = stream_for(StreamKey::new(seed, i as u64, role));
        spec.sample_unit(&mut s)
    })
}

/// `E|S_alpha(1)|`: exact for the Gaussian case, Monte Carlo otherwise.
pub fn abs_moment_of_limit(alpha: f64, seed: u64) -> Result<f64> {
    if alpha == 2.0 {
        return Ok((2.0 / std::f64::consts::PI).sqrt());
    }
    let spec = StableSpec::new(alpha)?;
    let mut s = stream_for(StreamKey::new(seed, ABS_MOMENT_REPLICA, Role::Aux));
    let mut sum = 0.0;
    for _ in 0..ABS_MOMENT_DRAWS {
        sum += spec.sample_unit(&mut s).abs();
    }
    Ok(sum / ABS_MOMENT_DRAWS as f64)
}

struct Replicas {
    retained: Vec<(u64, GenerationCounts)>,
    excluded: Vec<u64>,
    draws: u64,
}

fn run_replicas(cfg: &ExperimentConfig, t: f64, ti: usize, j_max: usize, opts: &SimOptions, workers: usize) -> Result<Replicas> {
    let allowed = cfg.max_exclusion_fraction;
    let limit = (allowed * cfg.replicas as f64).floor() as usize;
    // once the limit is passed the run is lost, so remaining replicas are skipped
    let breaches = AtomicUsize::new(0);
    let results = par_map(workers, cfg.replicas, |r| {
        if breaches.load(Ordering::Relaxed) > limit {
            return None;
        }
        let res = simulate_counts(&cfg.model, t, j_max, &tree_stream(cfg.seed, r as u64, ti), opts);
        if matches!(res, Err(Error::PopulationCap { .. })) {
            breaches.fetch_add(1, Ordering::Relaxed);
        }
        Some(res)
    })?;
    let excluded_total = breaches.load(Ordering::Relaxed);
    if excluded_total > limit {
        return Err(Error::TooManyExclusions {
            excluded: excluded_total,
            total: cfg.replicas,
            allowed,
        });
    }
    let mut retained = Vec::with_capacity(results.len());
    let mut excluded = Vec::new();
    let mut draws = 0;
    for (r, res) in results.into_iter().enumerate() {
        match res.expect("no replica skipped below the limit") {
            Ok(c) => {
                draws += c.draws;
                retained.push((r as u64, c));
            }
            Err(Error::PopulationCap { .. }) => excluded.push(r as u64),
            Err(e) => return Err(e),
        }
    }
    if retained.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(Replicas { retained, excluded, draws })
}

/// What the normalized counts are compared with, per `u`.
struct LimitReference {
    alpha: f64,
    /// Variance of the Gaussian limit at `u`; `None` when the limit is non-Gaussian.
    normal_variance: Option<Box<dyn Fn(f64) -> f64 + Sync>>,
    samples: Vec<(f64, Vec<f64>)>,
    abs_moment: Option<f64>,
    increments: u64,
}

fn check_regime(cfg: &ExperimentConfig, cond: &ConditionReport) -> Result<()> {
    match cfg.mode {
        Mode::FddMain | Mode::FirstGenFlt => {
            if !cond.is_heavy_tailed() {
                return Err(Error::Conditions(format!(
                    "{:?} needs xi in the RW_I or RW_II regime, got {:?}",
                    cfg.mode, cond.regime
                )));
            }
            if cfg.mode == Mode::FddMain && !cond.pert_satisfied {
                return Err(Error::Conditions(format!(
                    "the perturbation condition fails for gamma = {}",
                    cond.gamma
                )));
            }
        }
        Mode::FddBaseline => {
            if cond.regime != Regime::FiniteVarianceBaseline {
                return Err(Error::Conditions(format!(
                    "fdd_baseline needs finite Var xi, got regime {:?}",
                    cond.regime
                )));
            }
        }
        Mode::Decomposition => {}
        Mode::SelfSimilarity => {
            if cond.regime == Regime::Inapplicable {
                return Err(Error::Conditions("self_similarity needs a random xi".into()));
            }
        }
    }
    Ok(())
}

fn plan_for(cfg: &ExperimentConfig, cond: &ConditionReport, t: f64, u_points: &[f64]) -> Result<Option<NormalizationPlan>> {
    let j = cfg.j.expect("resolved config");
    let m = cfg.model.mean();
    let gamma = cfg.model.gamma();
    match cond.regime {
        Regime::RwI | Regime::RwII => {
            NormalizationPlan::stable(cond.alpha, cond.ell, m, gamma, t, j, u_points).map(Some)
        }
        Regime::FiniteVarianceBaseline => {
            NormalizationPlan::finite_variance(cfg.model.xi_variance(), m, gamma, t, j, u_points).map(Some)
        }
        Regime::Inapplicable => Ok(None),
    }
}

fn limit_alpha(cond: &ConditionReport) -> f64 {
    match cond.regime {
        Regime::RwII => cond.alpha,
        _ => 2.0,
    }
}

/// Runs the experiment selected by `config.mode`.
pub fn run(config: &ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    match config.mode {
        Mode::FddMain | Mode::FddBaseline => run_fdd(config, workers),
        Mode::FirstGenFlt => run_first_gen_flt(config, workers),
        Mode::Decomposition => run_decomposition(config, workers),
        Mode::SelfSimilarity => run_self_similarity(config, workers),
    }
}

/// Normalized `N_{floor(j(t) u)}(t) - V_{floor(j(t) u)}(t)` against `L_alpha(u)`.
pub fn run_fdd(config: &ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    let start = Instant::now();
    let cfg = config.resolve()?;
    if !matches!(cfg.mode, Mode::FddMain | Mode::FddBaseline) {
        return Err(Error::param("mode", "run_fdd handles fdd_main and fdd_baseline"));
    }
    let cond = classify_conditions(&cfg.model);
    check_regime(&cfg, &cond)?;
    let alpha = limit_alpha(&cond);
    let samples = simulate_limit_samples(alpha, &cfg.u_points, cfg.limit_samples, cfg.dy, cfg.seed, Role::LimitPath, workers)?;
    let steps = (required_horizon(&cfg.u_points) / cfg.dy).floor() as u64;
    let reference = LimitReference {
        alpha,
        normal_variance: if alpha == 2.0 {
            Some(Box::new(|u: f64| 1.0 / (2.0 * u)))
        } else {
            None
        },
        samples: cfg.u_points.iter().copied().zip(samples).collect(),
        abs_moment: None,
        increments: steps * cfg.limit_samples as u64,
    };
    let mut report = run_cells(&cfg, &cond, &reference, workers)?;
    report.timing = Timing {
        wall_seconds: start.elapsed().as_secs_f64(),
        workers,
    };
    Ok(report)
}

/// Normalized `N(t) - V(t)` against `S_alpha(1)`.
pub fn run_first_gen_flt(config: &ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut cfg = config.resolve()?;
    if cfg.mode != Mode::FirstGenFlt {
        cfg.mode = Mode::FirstGenFlt;
        cfg = cfg.resolve()?;
    }
    let cond = classify_conditions(&cfg.model);
    check_regime(&cfg, &cond)?;
    let alpha = limit_alpha(&cond);
    let draws = simulate_marginal_samples(alpha, cfg.limit_samples, cfg.seed, Role::LimitPath, workers)?;
    let reference = LimitReference {
        alpha,
        normal_variance: if alpha == 2.0 { Some(Box::new(|_| 1.0)) } else { None },
        samples: vec![(1.0, draws)],
        abs_moment: Some(abs_moment_of_limit(alpha, cfg.seed)?),
        increments: cfg.limit_samples as u64,
    };
    let mut report = run_cells(&cfg, &cond, &reference, workers)?;
    report.timing = Timing {
        wall_seconds: start.elapsed().as_secs_f64(),
        workers,
    };
    Ok(report)
}

fn run_cells(cfg: &ExperimentConfig, cond: &ConditionReport, reference: &LimitReference, workers: usize) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::empty(cfg.clone(), cond.clone());
    let mut plans = Vec::with_capacity(cfg.t_grid.len());
    for &t in &cfg.t_grid {
        plans.push(plan_for(cfg, cond, t, &cfg.u_points)?.expect("regime checked"));
    }
    let j_max = plans.iter().map(|p| p.max_j()).max().unwrap_or(1);
    let t_max = *cfg.t_grid.last().expect("nonempty grid");
    let centerer = Centerer::build(cfg, t_max, j_max)?;
    report.numerics_step = centerer.step();
    report.events.limit_increments = reference.increments;
    let opts = cfg.sim_options();
    let finite_variance = cond.regime == Regime::FiniteVarianceBaseline;

    for (ti, plan) in plans.iter().enumerate() {
        let t = plan.t;
        let reps = run_replicas(cfg, t, ti, plan.max_j(), &opts, workers)?;
        report.events.tree_draws += reps.draws;
        if !reps.excluded.is_empty() {
            report.exclusions.push(Exclusion {
                t,
                replica_ids: reps.excluded.clone(),
            });
        }
        let ids: Vec<u64> = reps.retained.iter().map(|(r, _)| *r).collect();
        let mut per_u: Vec<(f64, Vec<f64>)> = Vec::new();
        for cell in &plan.cells {
            let (vj, source) = centerer.eval(cell.j_u, t)?;
            let scale = cell.log_prefactor.exp();
            let normalized: Vec<f64> = reps
                .retained
                .iter()
                .map(|(_, c)| (c.n(cell.j_u) as f64 - vj) * scale)
                .collect();
            let lim = reference
                .samples
                .iter()
                .find(|(u, _)| *u == cell.u)
                .map(|(_, v)| v.as_slice());
            let (ks, reference_kind) = match &reference.normal_variance {
                Some(var) => {
                    let variance = var(cell.u);
                    (
                        ks_one_sample(&normalized, |x| stats::normal_cdf(x, variance))?,
                        Reference::Normal { variance },
                    )
                }
                None => {
                    let lim = lim.ok_or(Error::EmptySample)?;
                    (ks_two_sample(&normalized, lim)?, Reference::Simulated { samples: lim.len() })
                }
            };
            let simulated = Summary::of(&normalized)?;
            let limit = lim.map(Summary::of).transpose()?;
            let n = normalized.len() as f64;
            let centering_check = if finite_variance {
                let bound = 4.0 * simulated.variance.sqrt() / n.sqrt();
                CenteringCheck {
                    statistic: "mean".into(),
                    value: simulated.mean,
                    bound,
                    passed: simulated.mean.abs() <= bound,
                }
            } else {
                let (ref_tm, ref_term) = match (&reference.normal_variance, &limit) {
                    (Some(_), _) | (None, None) => (0.0, 0.0),
                    (None, Some(l)) => (l.trimmed_mean, l.trimmed_variance / l.n as f64),
                };
                let value = simulated.trimmed_mean - ref_tm;
                let bound = 4.0 * (simulated.trimmed_variance / n + ref_term).sqrt();
                CenteringCheck {
                    statistic: "trimmed_mean_difference".into(),
                    value,
                    bound,
                    passed: value.abs() <= bound,
                }
            };
            let abs_moment = reference.abs_moment.map(|limit| AbsMoment {
                simulated: simulated.abs_mean,
                limit,
                ratio: simulated.abs_mean / limit,
            });
            per_u.push((cell.u, normalized.clone()));
            report.cells.push(CellReport {
                t,
                u: cell.u,
                j_u: cell.j_u,
                log_prefactor: cell.log_prefactor,
                centering_value: vj,
                centering_source: source.into(),
                reference: reference_kind,
                ks,
                simulated,
                limit,
                centering_check,
                abs_moment,
                normalized,
                replica_ids: ids.clone(),
            });
        }
        for a in 0..per_u.len() {
            for b in a + 1..per_u.len() {
                let limit = match (
                    reference.samples.iter().find(|(u, _)| *u == per_u[a].0),
                    reference.samples.iter().find(|(u, _)| *u == per_u[b].0),
                ) {
                    (Some((_, x)), Some((_, y))) => Some(stats::spearman(x, y)),
                    _ => None,
                };
                report.correlations.push(CorrelationReport {
                    t,
                    u_a: per_u[a].0,
                    u_b: per_u[b].0,
                    simulated: stats::spearman(&per_u[a].1, &per_u[b].1),
                    limit,
                });
            }
        }
    }
    if cfg.t_grid.len() >= 2 {
        for &u in &cfg.u_points {
            let d_values: Vec<f64> = report.cells.iter().filter(|c| c.u == u).map(|c| c.ks.d).collect();
            report.trends.push(TrendReport {
                u,
                verdict: trend_verdict(&d_values, cfg.trend_slack)?,
                d_values,
            });
        }
    }
    report.plans = plans;
    report.limit_values = reference.samples.clone();
    let _ = reference.alpha;
    Ok(report)
}

/// Martingale and shot-noise parts of `N_j(t) - V_j(t)` along the grid.
pub fn run_decomposition(config: &ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    let start = Instant::now();
    let cfg = config.resolve()?;
    if cfg.mode != Mode::Decomposition {
        return Err(Error::param("mode", "run_decomposition needs mode decomposition"));
    }
    let cond = classify_conditions(&cfg.model);
    check_regime(&cfg, &cond)?;
    let mut report = ExperimentReport::empty(cfg.clone(), cond.clone());
    let j_fn = cfg.j.expect("resolved config");
    let j_max = cfg.t_grid.iter().map(|&t| j_fn.eval(t)).max().unwrap_or(1).max(1);
    let t_max = *cfg.t_grid.last().expect("nonempty grid");
    let centerer = Centerer::build(&cfg, t_max, j_max)?;
    report.numerics_step = centerer.step();
    let opts = SimOptions {
        record_first_generation: true,
        ..cfg.sim_options()
    };

    let mut cells = Vec::new();
    for (ti, &t) in cfg.t_grid.iter().enumerate() {
        let j = j_fn.eval(t);
        if j == 0 {
            return Err(Error::param("t_grid", format!("j(t) = 0 at t = {t}")));
        }
        let plan = plan_for(&cfg, &cond, t, &[1.0])?;
        let log_prefactor = plan.as_ref().map(|p| p.cells[0].log_prefactor).unwrap_or(0.0);
        let scale = log_prefactor.exp();
        let (vj, _) = centerer.eval(j, t)?;
        let v_prev = centerer.curve(j - 1);
        let reps = run_replicas(&cfg, t, ti, j, &opts, workers)?;
        report.events.tree_draws += reps.draws;
        if !reps.excluded.is_empty() {
            report.exclusions.push(Exclusion {
                t,
                replica_ids: reps.excluded.clone(),
            });
        }
        let mut mart = Vec::with_capacity(reps.retained.len());
        let mut shot = Vec::with_capacity(reps.retained.len());
        for (_, c) in &reps.retained {
            let d = decompose_counts(c, j, &v_prev, vj)?;
            mart.push(d.martingale * scale);
            shot.push(d.shot_noise * scale);
        }
        if let Some(p) = plan {
            report.plans.push(p);
        }
        cells.push(DecompositionCell {
            t,
            j,
            log_prefactor,
            martingale: Summary::of(&mart)?,
            shot_noise: Summary::of(&shot)?,
            martingale_values: mart,
            shot_noise_values: shot,
        });
    }
    let martingale_variances: Vec<f64> = cells.iter().map(|c| c.martingale.variance).collect();
    let iqrs: Vec<f64> = cells.iter().map(|c| c.shot_noise.iqr()).collect();
    let hi = iqrs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = iqrs.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = if lo > 0.0 { hi / lo } else if hi == 0.0 { 1.0 } else { f64::INFINITY };
    report.decomposition = Some(DecompositionReport {
        martingale_decreasing: stats::strictly_decreasing(&martingale_variances),
        martingale_variances,
        shot_noise_iqr_ratio: ratio,
        shot_noise_stable: ratio <= SHOT_NOISE_IQR_RATIO,
        cells,
    });
    report.timing = Timing {
        wall_seconds: start.elapsed().as_secs_f64(),
        workers,
    };
    Ok(report)
}

/// `a^{1/alpha} L_alpha(a u)` against `L_alpha(u)` on independent paths.
pub fn run_self_similarity(config: &ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    let start = Instant::now();
    let cfg = config.resolve()?;
    let cond = classify_conditions(&cfg.model);
    check_regime(&cfg, &cond)?;
    let alpha = limit_alpha(&cond);
    let u = cfg.u_points[0];
    let a = cfg.scale_factor;
    let n = cfg.limit_samples;
    let base = simulate_limit_samples(alpha, &[u], n, cfg.dy, cfg.seed, Role::LimitPath, workers)?.remove(0);
    let scaled: Vec<f64> = simulate_limit_samples(alpha, &[a * u], n, cfg.dy, cfg.seed, Role::Aux, workers)?
        .remove(0)
        .into_iter()
        .map(|x| a.powf(1.0 / alpha) * x)
        .collect();
    let ks = ks_two_sample(&scaled, &base)?;
    let mut report = ExperimentReport::empty(cfg.clone(), cond);
    report.events.limit_increments =
        n as u64 * ((required_horizon(&[u]) / cfg.dy) as u64 + (required_horizon(&[a * u]) / cfg.dy) as u64);
    report.self_similarity = Some(SelfSimilarityReport {
        alpha,
        a,
        u,
        samples: n,
        ks,
        base,
        scaled,
    });
    report.timing = Timing {
        wall_seconds: start.elapsed().as_secs_f64(),
        workers,
    };
    Ok(report)
}

/// Runs `config` once per seed.
pub fn run_seeds(config: &ExperimentConfig, seeds: &[u64], workers: usize) -> Result<Vec<ExperimentReport>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut c = config.clone();
            c.seed = seed;
            run(&c, workers)
        })
        .collect()
}

/// Median over reports of the KS distance in cell `(t, u)`.
pub fn median_ks(reports: &[ExperimentReport], t: f64, u: f64) -> Option<f64> {
    let ds: Vec<f64> = reports.iter().filter_map(|r| r.cell(t, u)).map(|c| c.ks.d).collect();
    if ds.is_empty() {
        None
    } else {
        Some(stats::median(&ds))
    }
}

/// Trend verdicts on the per-cell median KS distances.
pub fn median_trends(reports: &[ExperimentReport], slack: f64) -> Result<Vec<TrendReport>> {
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for &u in &first.config.u_points {
        let d_values: Vec<f64> = first
            .config
            .t_grid
            .iter()
            .filter_map(|&t| median_ks(reports, t, u))
            .collect();
        out.push(TrendReport {
            u,
            verdict: trend_verdict(&d_values, slack)?,
            d_values,
        });
    }
    Ok(out)
}

/// Median over reports of the martingale-part variance at each grid point.
pub fn median_martingale_variances(reports: &[ExperimentReport]) -> Vec<f64> {
    let Some(first) = reports.first().and_then(|r| r.decomposition.as_ref()) else {
        return Vec::new();
    };
    (0..first.cells.len())
        .map(|k| {
            let v: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.decomposition.as_ref())
                .map(|d| d.martingale_variances[k])
                .collect();
            stats::median(&v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, Dependence, EtaFamily, XiFamily};

    fn expexp() -> ModelSpec {
        make_model(
            XiFamily::Exponential { rate: 1.0 },
            EtaFamily::Exponential { rate: 1.0 },
            Dependence::Independent,
            None,
        )
        .unwrap()
    }

    fn heavy() -> ModelSpec {
        make_model(
            XiFamily::Pareto { alpha: 1.5, x_m: 50.0 },
            EtaFamily::Exponential { rate: 1.0 },
            Dependence::Independent,
            Some(1.45),
        )
        .unwrap()
    }

    fn small(model: ModelSpec, mode: Mode, t_grid: Vec<f64>) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(model, mode);
        c.t_grid = t_grid;
        c.replicas = 100;
        c.limit_samples = 100;
        c.dy = 0.05;
        c
    }

    #[test]
    fn config_validation() {
        let mut c = small(expexp(), Mode::FddBaseline, vec![10.0]);
        c.replicas = 99;
        assert!(c.resolve().is_err());
        let mut c = small(expexp(), Mode::FddBaseline, vec![10.0, 5.0]);
        assert!(c.resolve().is_err());
        c.t_grid = vec![5.0, 10.0];
        let r = c.resolve().unwrap();
        assert!(r.j.is_some());
        let mut c = small(heavy(), Mode::FddMain, vec![100.0]);
        c.j = Some(JFunction::Power { p: 0.3 });
        assert!(c.resolve().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let c = small(expexp(), Mode::FddBaseline, vec![10.0]);
        let mut v = serde_json::to_value(&c).unwrap();
        v["replica"] = serde_json::json!(5);
        let err = serde_json::from_value::<ExperimentConfig>(v).unwrap_err().to_string();
        assert!(err.contains("replica"), "{err}");
        let text = r#"{"model": {"xi": {"kind": "exponential", "rate": 1.0}, "eta": {"kind": "exponential", "rate": 1.0}}, "mode": "fdd_baseline", "t_grid": [10.0]}"#;
        let parsed: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(parsed.replicas, 1000);
        assert_eq!(parsed.u_points, vec![1.0]);
    }

    #[test]
    fn regime_is_checked() {
        let c = small(expexp(), Mode::FddMain, vec![10.0]);
        assert!(matches!(run(&c, 1), Err(Error::Conditions(_))));
        let c = small(heavy(), Mode::FddBaseline, vec![10.0]);
        assert!(matches!(run(&c, 1), Err(Error::Conditions(_))));
    }

    #[test]
    fn report_is_deterministic() {
        let mut c = small(expexp(), Mode::FddBaseline, vec![20.0, 40.0]);
        c.j = Some(JFunction::Fixed { j: 2 });
        c.u_points = vec![0.5, 1.0];
        let a = run(&c, 1).unwrap();
        let b = run(&c, 3).unwrap();
        assert_eq!(a.statistical_json().unwrap(), b.statistical_json().unwrap());
        assert!(!a.statistical_json().unwrap().contains("wall_seconds"));
        assert_eq!(a.cells.len(), 4);
        assert_eq!(a.trends.len(), 2);
        assert_eq!(a.correlations.len(), 2);
        for cell in &a.cells {
            assert_eq!(cell.normalized.len(), 100);
            assert!((0.0..=1.0).contains(&cell.ks.p));
            assert_eq!(cell.centering_source, "exact");
        }
        // the embedded config is the resolved one
        assert_eq!(a.config, c.resolve().unwrap());
    }

    #[test]
    fn exclusions_are_listed() {
        let mut c = small(heavy(), Mode::FddMain, vec![400.0]);
        c.j = Some(JFunction::Fixed { j: 3 });
        c.population_cap = 3;
        c.max_exclusion_fraction = 1.0;
        let r = run(&c, 1).unwrap();
        let excluded: usize = r.exclusions.iter().map(|e| e.replica_ids.len()).sum();
        assert!(excluded > 0);
        assert_eq!(r.cells[0].normalized.len() + excluded, 100);
        assert!(r.cells[0].replica_ids.iter().all(|id| !r.exclusions[0].replica_ids.contains(id)));
        c.max_exclusion_fraction = 0.0;
        assert!(matches!(run(&c, 1), Err(Error::TooManyExclusions { .. })));
    }

    #[test]
    fn decomposition_edge_cases() {
        let mut c = small(heavy(), Mode::Decomposition, vec![300.0, 600.0]);
        c.j = Some(JFunction::Fixed { j: 1 });
        let r = run(&c, 1).unwrap();
        for cell in &r.decomposition.unwrap().cells {
            assert!(cell.martingale_values.iter().all(|&x| x == 0.0));
        }
        let det = make_model(
            XiFamily::Deterministic { value: 1.0 },
            EtaFamily::Deterministic { value: 1.0 },
            Dependence::Independent,
            None,
        )
        .unwrap();
        let mut c = small(det, Mode::Decomposition, vec![6.5, 9.5]);
        c.j = Some(JFunction::Fixed { j: 2 });
        let r = run(&c, 1).unwrap();
        for cell in &r.decomposition.unwrap().cells {
            assert!(cell.martingale_values.iter().chain(&cell.shot_noise_values).all(|&x| x.abs() < 1e-9));
        }
    }

    #[test]
    fn samples_csv_layout() {
        let mut c = small(expexp(), Mode::FddBaseline, vec![20.0]);
        c.j = Some(JFunction::Fixed { j: 1 });
        let r = run(&c, 1).unwrap();
        let mut buf = Vec::new();
        r.write_samples_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,u,replica_id,normalized_value,kind"));
        assert_eq!(text.lines().filter(|l| l.ends_with(",simulated")).count(), 100);
        assert_eq!(text.lines().filter(|l| l.ends_with(",limit")).count(), 100);
    }

    #[test]
    fn self_similarity_report() {
        let mut c = small(heavy(), Mode::SelfSimilarity, vec![]);
        c.limit_samples = 200;
        let r = run(&c, 1).unwrap();
        let s = r.self_similarity.unwrap();
        assert_eq!(s.base.len(), 200);
        assert_eq!(s.alpha, 1.5);
        assert!((0.0..=1.0).contains(&s.ks.p));
    }
}
