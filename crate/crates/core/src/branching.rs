//! Generation counts `N_j(t)` of the branching tree built from the perturbed
//! random walk `T_i = S_{i-1} + eta_i`.
//!
//! An individual born at `s` has children at `s + T_1, s + T_2, ...`. The
//! tree is walked one generation at a time, keeping only the birth times of
//! the current generation that do not exceed `t`.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Dependence, EtaFamily, Marginal, ModelSpec};
use crate::renewal_numerics::{ExactMean, GridFunction};
use crate::sampling::{sample_pair, Stream};

pub const DEFAULT_POPULATION_CAP: usize = 10_000_000;

/// Child ordinal reserved for the stream of aggregated draws.
const AGGREGATE_ORDINAL: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Record, for each last-generation individual, the index of its first-generation ancestor.
    pub tag_ancestors: bool,
    pub record_first_generation: bool,
    /// Largest stored generation; the last generation is only counted.
    pub population_cap: usize,
    /// For exponential `xi` and independent exponential `eta`, draw the last
    /// generation from its exact law instead of walking it.
    pub aggregate_last_generation: bool,
    /// `None` stops each offspring walk once `s + S_{i-1} > t`; `Some(n)`
    /// always draws `n` children and filters them.
    pub fixed_offspring: Option<u64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            tag_ancestors: false,
            record_first_generation: false,
            population_cap: DEFAULT_POPULATION_CAP,
            aggregate_last_generation: false,
            fixed_offspring: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationCounts {
    pub t: f64,
    /// `counts[j - 1] = N_j(t)`.
    pub counts: Vec<u64>,
    pub ancestor_tags: Option<Vec<u32>>,
    pub first_gen_births: Option<Vec<f64>>,
    /// Number of `(xi, eta)` draws made.
    pub draws: u64,
}

impl GenerationCounts {
    pub fn n(&self, j: usize) -> u64 {
        self.counts[j - 1]
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    birth: f64,
    base: u64,
    ancestor: u32,
}

/// Rates `(xi, eta)` when the last generation can be aggregated.
pub fn aggregation_rates(model: &ModelSpec) -> Option<(f64, f64)> {
    match (model.xi_law(), model.eta(), model.dependence()) {
        (Marginal::Exponential { rate }, EtaFamily::Exponential { rate: mu }, Dependence::Independent) => {
            Some((rate, mu))
        }
        _ => None,
    }
}

/// Intensity measure of `{S_{i-1} + eta_i : i >= 2}` on `[0, r]` for
/// exponential `xi` (rate `lambda`) and `eta` (rate `mu`): the points
/// `S_1, S_2, ...` are a Poisson process and independent displacements keep
/// it Poisson with mean `lambda r - (lambda / mu)(1 - e^{-mu r})`.
fn displaced_mean(lambda: f64, mu: f64, r: f64) -> f64 {
    lambda * r + (lambda / mu) * (-mu * r).exp_m1()
}

/// Simulates `N_1(t), ..., N_J(t)` for the tree rooted at time 0.
pub fn simulate_counts(
    model: &ModelSpec,
    t: f64,
    j_max: usize,
    stream: &Stream,
    opts: &SimOptions,
) -> Result<GenerationCounts> {
    if j_max == 0 {
        return Err(Error::param("J", "must be at least 1"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be finite and nonnegative, got {t}")));
    }
    // aggregation would hide the first-generation birth times when J = 1
    let aggregate = if opts.aggregate_last_generation && !(j_max == 1 && opts.record_first_generation) {
        aggregation_rates(model)
    } else {
        None
    };
    if aggregate.is_some() && opts.tag_ancestors {
        return Err(Error::param(
            "tag_ancestors",
            "ancestor tags need an explicit last generation; disable aggregation",
        ));
    }

    let xi_law = model.xi_law();
    let eta_sup = model.eta_sup();
    let mut counts = vec![0u64; j_max];
    let mut draws = 0u64;
    let mut first_gen_births = None;
    let mut ancestor_tags = None;
    let mut frontier = vec![Node {
        birth: 0.0,
        base: stream.base(),
        ancestor: 0,
    }];

    for g in 1..=j_max {
        let last = g == j_max;
        if last {
            if let Some((lambda, mu)) = aggregate {
                // N_1(r) is 1{eta_1 <= r} plus an independent Poisson(displaced_mean(r))
                let mut hits = 0u64;
                let mut mean = 0.0;
                for p in &frontier {
                    let r = t - p.birth;
                    let mut s = Stream::from_base(p.base);
                    s.skip(1);
                    let eta = -(1.0 - s.uniform()).ln() / mu;
                    if eta <= r {
                        hits += 1;
                    }
                    mean += displaced_mean(lambda, mu, r);
                }
                draws += frontier.len() as u64;
                let extra = if mean > 0.0 {
                    let mut s = stream.child(AGGREGATE_ORDINAL);
                    Poisson::new(mean)
                        .map_err(|e| Error::param("poisson mean", e.to_string()))?
                        .sample(&mut s) as u64
                } else {
                    0
                };
                counts[g - 1] = hits + extra;
                break;
            }
            if !opts.tag_ancestors && !(g == 1 && opts.record_first_generation) {
                let mut n = 0u64;
                for p in &frontier {
                    n += count_offspring(model, &xi_law, eta_sup, p, t, opts.fixed_offspring, &mut draws);
                }
                counts[g - 1] = n;
                break;
            }
        }

        let mut next = Vec::new();
        for p in &frontier {
            let mut s = Stream::from_base(p.base);
            let mut x = p.birth;
            let mut i = 0u64;
            loop {
                match opts.fixed_offspring {
                    None if x > t => break,
                    Some(n) if i >= n => break,
                    _ => {}
                }
                i += 1;
                let (xi, eta) = sample_pair(model, &mut s);
                draws += 1;
                let birth = x + eta;
                if birth <= t {
                    let ancestor = if g == 1 { next.len() as u32 } else { p.ancestor };
                    next.push(Node {
                        birth,
                        base: s.child_base(i),
                        ancestor,
                    });
                    if next.len() > opts.population_cap && !last {
                        return Err(Error::PopulationCap {
                            generation: g,
                            cap: opts.population_cap,
                        });
                    }
                }
                x += xi;
            }
        }
        counts[g - 1] = next.len() as u64;
        if g == 1 && opts.record_first_generation {
            first_gen_births = Some(next.iter().map(|n| n.birth).collect());
        }
        if last {
            if opts.tag_ancestors {
                ancestor_tags = Some(next.iter().map(|n| n.ancestor).collect());
            }
            break;
        }
        frontier = next;
    }

    Ok(GenerationCounts {
        t,
        counts,
        ancestor_tags,
        first_gen_births,
        draws,
    })
}

/// Number of children of `p` born by `t`, without storing them.
///
/// While `s + S_{i-1} + sup(eta) <= t` the child is certainly born in time,
/// so its `eta` uniform is skipped rather than transformed; the outcome is
/// the same as evaluating it.
fn count_offspring(
    model: &ModelSpec,
    xi_law: &Marginal,
    eta_sup: Option<f64>,
    p: &Node,
    t: f64,
    fixed: Option<u64>,
    draws: &mut u64,
) -> u64 {
    let mut s = Stream::from_base(p.base);
    let mut x = p.birth;
    let mut n = 0u64;
    let mut i = 0u64;
    if fixed.is_none() {
        if let Some(sup) = eta_sup {
            while x + sup <= t {
                let xi = xi_law.quantile(s.uniform());
                s.skip(1);
                i += 1;
                n += 1;
                x += xi;
            }
        }
    }
    loop {
        match fixed {
            None if x > t => break,
            Some(k) if i >= k => break,
            _ => {}
        }
        i += 1;
        let (xi, eta) = sample_pair(model, &mut s);
        if x + eta <= t {
            n += 1;
        }
        x += xi;
    }
    *draws += i;
    n
}

/// A mean function used to center subtrees.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanCurve {
    /// `V_0 = 1`.
    Unit,
    Grid(GridFunction),
    Exact { form: ExactMean, j: usize },
}

impl MeanCurve {
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            MeanCurve::Unit => Ok(1.0),
            MeanCurve::Grid(g) => g.eval(x),
            MeanCurve::Exact { form, j } => Ok(form.eval(*j, x)),
        }
    }
}

/// `N_j(t) - V_j(t)` split at the first generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSample {
    /// `sum_k V_{j-1}(t - T_k) 1{T_k <= t} - V_j(t)`.
    pub shot_noise: f64,
    /// `N_j(t) - V_j(t)` minus the shot noise.
    pub martingale: f64,
}

/// Splits the centered count of generation `j` of an existing simulation;
/// `v_prev` is `V_{j-1}` and must cover `[0, t]`.
pub fn decompose_counts(
    counts: &GenerationCounts,
    j: usize,
    v_prev: &MeanCurve,
    vj_value: f64,
) -> Result<DecompositionSample> {
    if j == 0 || j > counts.counts.len() {
        return Err(Error::param("j", format!("must lie in 1..={}, got {j}", counts.counts.len())));
    }
    let births = counts
        .first_gen_births
        .as_ref()
        .ok_or_else(|| Error::param("counts", "first-generation birth times were not recorded"))?;
    if let MeanCurve::Grid(g) = v_prev {
        if g.t_max() < counts.t * (1.0 - 1e-12) {
            return Err(Error::TableDomain {
                available: g.t_max(),
                requested: counts.t,
            });
        }
    }
    let mut sum = 0.0;
    for &b in births {
        sum += v_prev.eval(counts.t - b)?;
    }
    let centered = counts.n(j) as f64 - vj_value;
    let shot_noise = sum - vj_value;
    Ok(DecompositionSample {
        shot_noise,
        martingale: centered - shot_noise,
    })
}

/// Simulates one tree and splits `N_j(t) - V_j(t)`.
pub fn decompose(
    model: &ModelSpec,
    t: f64,
    j: usize,
    stream: &Stream,
    v_prev: &MeanCurve,
    vj_value: f64,
) -> Result<DecompositionSample> {
    let opts = SimOptions {
        record_first_generation: true,
        ..SimOptions::default()
    };
    let counts = simulate_counts(model, t, j, stream, &opts)?;
    decompose_counts(&counts, j, v_prev, vj_value)
}
