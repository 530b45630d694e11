use std::time::Instant;

use anyhow::Context;
use num_complex::Complex64;
use prwlab::experiments::{self, stats::Summary, Mode};
use prwlab::renewal_numerics::estimate_constants_from_tables;
use prwlab::stable_limit::char_function;
use prwlab::*;
use serde::{Deserialize, Serialize};

use crate::output::{read_config, Outputs};
use crate::{Common, Failure};

type CmdResult = std::result::Result<(), Failure>;

fn workers(w: Option<usize>) -> usize {
    w.filter(|&n| n > 0).unwrap_or_else(experiments::default_workers)
}

fn default_replicas() -> usize {
    100
}
fn default_cap() -> usize {
    branching::DEFAULT_POPULATION_CAP
}
fn default_j_max() -> usize {
    3
}
fn default_rows() -> usize {
    1001
}
fn default_samples() -> usize {
    1000
}
fn default_dy() -> f64 {
    0.01
}
fn default_u() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    model: ModelSpec,
    t: f64,
    j_max: usize,
    #[serde(default = "default_replicas")]
    replicas: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_cap")]
    population_cap: usize,
    #[serde(default)]
    aggregate_last_generation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NumericsConfig {
    model: ModelSpec,
    t_max: f64,
    #[serde(default = "default_j_max")]
    j_max: usize,
    #[serde(default)]
    grid_step: Option<f64>,
    /// Evenly spaced rows written to the CSV.
    #[serde(default = "default_rows")]
    rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitConfig {
    alpha: f64,
    #[serde(default = "default_u")]
    u_points: Vec<f64>,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_dy")]
    dy: f64,
    #[serde(default)]
    seed: u64,
}

fn to_json<T: Serialize>(v: &T) -> anyhow::Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

pub fn simulate(c: &Common) -> CmdResult {
    let mut cfg: SimulateConfig = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if cfg.replicas == 0 {
        return Err(anyhow::anyhow!("invalid config: `replicas` must be at least 1").into());
    }
    Outputs::check_targets(&c.out, &["counts.csv", "simulate.json"], c.force)?;
    let opts = SimOptions {
        population_cap: cfg.population_cap,
        aggregate_last_generation: cfg.aggregate_last_generation,
        ..SimOptions::default()
    };
    let start = Instant::now();
    let rows = experiments::par_map(workers(c.workers), cfg.replicas, |r| {
        let s = stream_for(StreamKey::new(cfg.seed, r as u64, Role::Tree));
        simulate_counts(&cfg.model, cfg.t, cfg.j_max, &s, &opts)
    })?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["replica_id", "j", "N_j", "t"]).context("csv")?;
    for (r, res) in rows.into_iter().enumerate() {
        let counts = res.with_context(|| format!("replica {r}"))?;
        for (j, n) in counts.counts.iter().enumerate() {
            w.write_record([r.to_string(), (j + 1).to_string(), n.to_string(), cfg.t.to_string()])
                .context("csv")?;
        }
    }
    let mut out = Outputs::new(&c.out);
    out.add("counts.csv", w.into_inner().context("csv")?);
    out.add("simulate.json", to_json(&serde_json::json!({ "config": cfg }))?);
    finish(out, c, start)
}

pub fn numerics(c: &Common) -> CmdResult {
    let cfg: NumericsConfig = read_config(&c.config)?;
    if cfg.rows < 2 {
        return Err(anyhow::anyhow!("invalid config: `rows` must be at least 2").into());
    }
    Outputs::check_targets(&c.out, &["numerics.csv", "constants.json"], c.force)?;
    let start = Instant::now();
    let tables = MeanTables::compute(&cfg.model, cfg.grid_step, cfg.t_max, cfg.j_max)?;
    let constants = estimate_constants_from_tables(&tables, cfg.model.mean(), cfg.model.gamma())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string(), "U".to_string(), "V".to_string()];
    header.extend((2..=cfg.j_max).map(|j| format!("V_{j}")));
    w.write_record(&header).context("csv")?;
    let end = tables.t_max.min(cfg.t_max);
    for k in 0..cfg.rows {
        let t = end * k as f64 / (cfg.rows - 1) as f64;
        let mut rec = vec![t.to_string(), tables.u.eval(t)?.to_string()];
        for j in 1..=cfg.j_max {
            rec.push(tables.numeric(j, t)?.to_string());
        }
        w.write_record(&rec).context("csv")?;
    }
    let mut out = Outputs::new(&c.out);
    out.add("numerics.csv", w.into_inner().context("csv")?);
    out.add(
        "constants.json",
        to_json(&serde_json::json!({
            "config": cfg,
            "step": tables.step,
            "t_max": tables.t_max,
            "mean": cfg.model.mean(),
            "constants": constants,
        }))?,
    );
    finish(out, c, start)
}

pub fn limit(c: &Common) -> CmdResult {
    let mut cfg: LimitConfig = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if cfg.samples == 0 {
        return Err(anyhow::anyhow!("invalid config: `samples` must be at least 1").into());
    }
    Outputs::check_targets(&c.out, &["limit.csv", "limit.json"], c.force)?;
    let start = Instant::now();
    let values = experiments::simulate_limit_samples(
        cfg.alpha,
        &cfg.u_points,
        cfg.samples,
        cfg.dy,
        cfg.seed,
        Role::LimitPath,
        workers(c.workers),
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "u", "value"]).context("csv")?;
    let mut summaries = Vec::new();
    for (u, column) in cfg.u_points.iter().zip(&values) {
        for (i, v) in column.iter().enumerate() {
            w.write_record([i.to_string(), u.to_string(), v.to_string()]).context("csv")?;
        }
        summaries.push(serde_json::json!({ "u": u, "summary": Summary::of(column)? }));
    }
    let mut out = Outputs::new(&c.out);
    out.add("limit.csv", w.into_inner().context("csv")?);
    out.add("limit.json", to_json(&serde_json::json!({ "config": cfg, "summaries": summaries }))?);
    finish(out, c, start)
}

pub fn fdd(c: &Common) -> CmdResult {
    let mut cfg: ExperimentConfig = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Outputs::check_targets(&c.out, &["report.json", "samples.csv"], c.force)?;
    let start = Instant::now();
    let report = experiments::run(&cfg, workers(c.workers))?;
    let mut samples = Vec::new();
    report.write_samples_csv(&mut samples)?;
    for cell in &report.cells {
        println!("t={} u={} j={} D={:.4} p={:.3e}", cell.t, cell.u, cell.j_u, cell.ks.d, cell.ks.p);
    }
    for tr in &report.trends {
        println!("trend u={} D={:.4?} non-increasing={}", tr.u, tr.d_values, tr.verdict);
    }
    if let Some(d) = &report.decomposition {
        println!(
            "martingale variances {:.4?} decreasing={}; shot-noise IQR ratio {:.3}",
            d.martingale_variances, d.martingale_decreasing, d.shot_noise_iqr_ratio
        );
    }
    if let Some(s) = &report.self_similarity {
        println!("self-similarity a={} u={}: D={:.4} p={:.3e}", s.a, s.u, s.ks.d, s.ks.p);
    }
    let mut json = report.to_json()?;
    json.push('\n');
    let mut out = Outputs::new(&c.out);
    out.add("report.json", json.into_bytes());
    out.add("samples.csv", samples);
    finish(out, c, start)
}

fn finish(out: Outputs, c: &Common, start: Instant) -> CmdResult {
    let paths: Vec<_> = out.paths().collect();
    out.commit()?;
    if c.verbose > 0 {
        eprintln!("finished in {:.2} s", start.elapsed().as_secs_f64());
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check_counts() -> anyhow::Result<Check> {
    let model = make_model(
        XiFamily::Deterministic { value: 1.0 },
        EtaFamily::Deterministic { value: 1.0 },
        Dependence::Independent,
        None,
    )?;
    let mut passed = true;
    let mut seen = Vec::new();
    for seed in 0..5u64 {
        let s = stream_for(StreamKey::new(seed, 0, Role::Tree));
        let c = simulate_counts(&model, 10.5, 3, &s, &SimOptions::default())?;
        passed &= c.counts == [10, 45, 120];
        seen = c.counts;
    }
    Ok(Check {
        name: "deterministic counts at t = 10.5",
        passed,
        detail: format!("N = ({}, {}, {})", seen[0], seen[1], seen[2]),
    })
}

fn check_renewal() -> anyhow::Result<Check> {
    let model = make_model(
        XiFamily::Exponential { rate: 1.0 },
        EtaFamily::Exponential { rate: 1.0 },
        Dependence::Independent,
        None,
    )?;
    let tables = MeanTables::compute(&model, Some(0.01), 5.0, 3)?;
    let mut worst: f64 = 0.0;
    for j in 1..=3usize {
        for t in [2.0f64, 5.0] {
            let exact = t.powi(j as i32) / (1..=j).product::<usize>() as f64;
            worst = worst.max((tables.numeric(j, t)? / exact - 1.0).abs());
        }
    }
    Ok(Check {
        name: "exp/exp V_j(t) = t^j / j!",
        passed: worst <= 0.02,
        detail: format!("max relative error {worst:.2e}"),
    })
}

fn check_char_function(workers: usize) -> anyhow::Result<Check> {
    let alpha = 1.5;
    let x = experiments::simulate_marginal_samples(alpha, 100_000, 3, Role::Aux, workers)?;
    let mut worst: f64 = 0.0;
    for z in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let emp = x.iter().map(|&v| Complex64::new(0.0, z * v).exp()).sum::<Complex64>() / x.len() as f64;
        worst = worst.max((emp - char_function(alpha, z)?).norm());
    }
    Ok(Check {
        name: "stable sampler characteristic function",
        passed: worst <= 0.02,
        detail: format!("alpha = 1.5, sup distance {worst:.4}"),
    })
}

fn check_brownian(workers: usize) -> anyhow::Result<Check> {
    let x = experiments::simulate_limit_samples(2.0, &[1.0], 10_000, 0.01, 4, Role::LimitPath, workers)?.remove(0);
    let var = Summary::of(&x)?.variance;
    Ok(Check {
        name: "Var L_2(1) = 1/2",
        passed: (var / 0.5 - 1.0).abs() <= 0.05,
        detail: format!("{var:.4} from 10^4 paths"),
    })
}

fn check_self_similarity(workers: usize) -> anyhow::Result<Check> {
    let model = make_model(
        XiFamily::Pareto { alpha: 1.5, x_m: 1.0 },
        EtaFamily::Exponential { rate: 1.0 },
        Dependence::Independent,
        None,
    )?;
    let mut c = ExperimentConfig::new(model, Mode::SelfSimilarity);
    c.limit_samples = 2000;
    c.seed = 5;
    let s = experiments::run(&c, workers)?
        .self_similarity
        .context("self-similarity report missing")?;
    Ok(Check {
        name: "self-similarity a = 2",
        passed: s.ks.p >= 1e-3,
        detail: format!("D = {:.4}, p = {:.3e}", s.ks.d, s.ks.p),
    })
}

pub fn selfcheck(quick: bool, w: Option<usize>) -> CmdResult {
    let w = workers(w);
    let mut checks = vec![check_counts()?, check_renewal()?];
    if !quick {
        checks.push(check_char_function(w)?);
        checks.push(check_brownian(w)?);
        checks.push(check_self_similarity(w)?);
    }
    let mut failed = Vec::new();
    for ch in &checks {
        println!("{} {}: {}", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.detail);
        if !ch.passed {
            failed.push(ch.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")))
    }
}
