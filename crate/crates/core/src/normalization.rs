//! The norming function `c_alpha` and the log-space prefactors that turn
//! centered counts into statistics with a nondegenerate limit.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::models::SlowlyVarying;

/// Solves `t * l(c) = c^alpha` for `c`.
///
/// For `l = kappa` this is `(kappa t)^(1/alpha)`. For `l = kappa ln` the map
/// `c -> c^alpha / ln c` is not monotone on `(1, inf)`: it decreases to its
/// minimum `e * alpha` at `c = e^(1/alpha)` and increases after that. The
/// larger root is the one that grows like `t^(1/alpha)`, so the bracket
/// starts at the minimizer.
pub fn solve_c_alpha(ell: SlowlyVarying, alpha: f64, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
    }
    match ell {
        SlowlyVarying::Constant { kappa } => Ok((kappa * t).powf(1.0 / alpha)),
        SlowlyVarying::Log { kappa } => {
            // in x = ln c: h(x) = alpha x - ln(t kappa x), increasing for x > 1/alpha
            let h = |x: f64| alpha * x - (t * kappa * x).ln();
            let mut lo = 1.0 / alpha;
            if h(lo) >= 0.0 {
                return Err(Error::NoBracket { t });
            }
            let bracket = t.powf(2.0 / alpha) * (1.0 + ell.eval(t));
            let mut hi = bracket.ln().max(2.0 * lo);
            let mut widen = 0;
            while h(hi) <= 0.0 {
                hi *= 2.0;
                widen += 1;
                if widen > 64 {
                    return Err(Error::NoBracket { t });
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if h(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok((0.5 * (lo + hi)).exp())
        }
    }
}

/// `ln[ (j_u - 1)! m^(j_u + 1/alpha) / (t^(j_u - 1) c) ]`.
pub fn stable_prefactor_log(j_u: usize, m: f64, t: f64, c_value: f64, alpha: f64) -> f64 {
    let j = j_u as f64;
    ln_gamma(j) + (j + 1.0 / alpha) * m.ln() - (j - 1.0) * t.ln() - c_value.ln()
}

/// `ln[ j^(1/2) (j_u - 1)! / (s2 m^(-2 j_u - 1) t^(2 j_u - 1))^(1/2) ]`, the
/// finite-variance normalization.
pub fn baseline_prefactor_log(j: usize, j_u: usize, s2: f64, m: f64, t: f64) -> f64 {
    let ju = j_u as f64;
    0.5 * (j as f64).ln() + ln_gamma(ju)
        - 0.5 * (s2.ln() - (2.0 * ju + 1.0) * m.ln() + (2.0 * ju - 1.0) * t.ln())
}

/// How the generation index grows with `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JFunction {
    /// `j(t) = floor(t^p)`.
    Power { p: f64 },
    Fixed { j: usize },
}

impl JFunction {
    pub fn default_for(gamma: f64) -> Self {
        JFunction::Power { p: default_exponent(gamma) }
    }

    pub fn eval(&self, t: f64) -> usize {
        match *self {
            // the small offset keeps exact integer powers from rounding down
            JFunction::Power { p } => (t.powf(p) * (1.0 + 1e-12)).floor() as usize,
            JFunction::Fixed { j } => j,
        }
    }

    /// Rejects exponents outside `[0, (gamma - 1) / 2)`.
    pub fn validate(&self, gamma: f64) -> Result<()> {
        match *self {
            JFunction::Power { p } => {
                let max = (gamma - 1.0) / 2.0;
                if !(p >= 0.0 && p < max) {
                    return Err(Error::param(
                        "j.p",
                        format!("must lie in [0, {max}) for gamma = {gamma}, got {p}"),
                    ));
                }
                Ok(())
            }
            JFunction::Fixed { j } => {
                if j == 0 {
                    return Err(Error::param("j.j", "must be at least 1"));
                }
                Ok(())
            }
        }
    }
}

pub fn default_exponent(gamma: f64) -> f64 {
    0.8 * (gamma - 1.0) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanCell {
    pub u: f64,
    pub j_u: usize,
    pub log_prefactor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationPlan {
    pub alpha: f64,
    pub m: f64,
    pub gamma: f64,
    pub t: f64,
    pub j_fn: JFunction,
    pub j_t: usize,
    /// `c_alpha(t / j)`; absent for the finite-variance scaling.
    pub c_value: Option<f64>,
    pub cells: Vec<PlanCell>,
}

impl NormalizationPlan {
    fn cells_for(j_t: usize, u_points: &[f64], prefactor: impl Fn(usize) -> f64) -> Result<Vec<PlanCell>> {
        u_points
            .iter()
            .map(|&u| {
                if !(u > 0.0 && u.is_finite()) {
                    return Err(Error::param("u_points", format!("must be positive, got {u}")));
                }
                let j_u = (j_t as f64 * u + 1e-9).floor() as usize;
                if j_u == 0 {
                    return Err(Error::param(
                        "u_points",
                        format!("floor(j(t) u) = 0 for j(t) = {j_t}, u = {u}"),
                    ));
                }
                Ok(PlanCell { u, j_u, log_prefactor: prefactor(j_u) })
            })
            .collect()
    }

    /// Scaling for the stable (or non-normal Gaussian) regime.
    pub fn stable(
        alpha: f64,
        ell: SlowlyVarying,
        m: f64,
        gamma: f64,
        t: f64,
        j_fn: JFunction,
        u_points: &[f64],
    ) -> Result<Self> {
        j_fn.validate(gamma)?;
        let j_t = j_fn.eval(t);
        if j_t == 0 {
            return Err(Error::param("t", format!("j(t) = 0 at t = {t}")));
        }
        let c_value = solve_c_alpha(ell, alpha, t / j_t as f64)?;
        let cells = Self::cells_for(j_t, u_points, |j_u| stable_prefactor_log(j_u, m, t, c_value, alpha))?;
        Ok(NormalizationPlan {
            alpha,
            m,
            gamma,
            t,
            j_fn,
            j_t,
            c_value: Some(c_value),
            cells,
        })
    }

    /// Scaling for increments with finite variance `s2`.
    pub fn finite_variance(s2: f64, m: f64, gamma: f64, t: f64, j_fn: JFunction, u_points: &[f64]) -> Result<Self> {
        if !(s2 > 0.0 && s2.is_finite()) {
            return Err(Error::param("s2", format!("must be finite and positive, got {s2}")));
        }
        if let JFunction::Fixed { j: 0 } = j_fn {
            return Err(Error::param("j.j", "must be at least 1"));
        }
        let j_t = j_fn.eval(t);
        if j_t == 0 {
            return Err(Error::param("t", format!("j(t) = 0 at t = {t}")));
        }
        let cells = Self::cells_for(j_t, u_points, |j_u| baseline_prefactor_log(j_t, j_u, s2, m, t))?;
        Ok(NormalizationPlan {
            alpha: 2.0,
            m,
            gamma,
            t,
            j_fn,
            j_t,
            c_value: None,
            cells,
        })
    }

    pub fn max_j(&self) -> usize {
        self.cells.iter().map(|c| c.j_u).max().unwrap_or(1)
    }
}
