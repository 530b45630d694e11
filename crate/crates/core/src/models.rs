//! Laws of the pair `(xi, eta)` that generates the perturbed random walk
//! `T_i = xi_1 + ... + xi_{i-1} + eta_i`, and the classification of a law
//! into the regimes covered by the limit theorems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Law of the random walk increment `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XiFamily {
    /// Survival `(x / x_m)^(-alpha)` for `x >= x_m`, `alpha > 1`.
    Pareto { alpha: f64, x_m: f64 },
    /// Pareto with tail index exactly 2: infinite variance, normal domain
    /// of attraction with a logarithmic truncated second moment.
    ParetoAlpha2 { x_m: f64 },
    Exponential { rate: f64 },
    Deterministic { value: f64 },
}

/// Law of the perturbation `eta` when it is sampled independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EtaFamily {
    Exponential { rate: f64 },
    /// Survival `(x / x_m)^(-alpha)`; here `alpha > 0` may be below one.
    Pareto { alpha: f64, x_m: f64 },
    Deterministic { value: f64 },
}

/// How `eta` is coupled to `xi` within one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    #[default]
    Independent,
    /// `eta = c * xi^theta`; the `eta` family is ignored.
    Comonotone { theta: f64, c: f64 },
    /// `eta = xi`; the `eta` family is ignored.
    Equal,
}

/// A one-dimensional positive law with closed-form cdf and quantile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Pareto { alpha: f64, x_m: f64 },
    Exponential { rate: f64 },
    Deterministic { value: f64 },
    /// Law of `c * X^theta` for `X` distributed as `base`.
    PowerOf { base: XiFamily, c: f64, theta: f64 },
}

/// Largest uniform produced by [`crate::sampling::Stream::uniform`].
pub const UNIFORM_MAX: f64 = 1.0 - 1.0 / 9_007_199_254_740_992.0;

impl From<XiFamily> for Marginal {
    fn from(xi: XiFamily) -> Self {
        match xi {
            XiFamily::Pareto { alpha, x_m } => Marginal::Pareto { alpha, x_m },
            XiFamily::ParetoAlpha2 { x_m } => Marginal::Pareto { alpha: 2.0, x_m },
            XiFamily::Exponential { rate } => Marginal::Exponential { rate },
            XiFamily::Deterministic { value } => Marginal::Deterministic { value },
        }
    }
}

impl From<EtaFamily> for Marginal {
    fn from(eta: EtaFamily) -> Self {
        match eta {
            EtaFamily::Pareto { alpha, x_m } => Marginal::Pareto { alpha, x_m },
            EtaFamily::Exponential { rate } => Marginal::Exponential { rate },
            EtaFamily::Deterministic { value } => Marginal::Deterministic { value },
        }
    }
}

impl Marginal {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Pareto { alpha, x_m } => {
                if x < x_m {
                    0.0
                } else {
                    1.0 - (x / x_m).powf(-alpha)
                }
            }
            Marginal::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Marginal::Deterministic { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            Marginal::PowerOf { base, c, theta } => {
                if x <= 0.0 {
                    0.0
                } else {
                    Marginal::from(base).cdf((x / c).powf(1.0 / theta))
                }
            }
        }
    }

    /// Inverse cdf evaluated at `u` in `(0, 1)`.
    #[inline]
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Marginal::Pareto { alpha, x_m } => x_m * (-(1.0 - u).ln() / alpha).exp(),
            Marginal::Exponential { rate } => -(1.0 - u).ln() / rate,
            Marginal::Deterministic { value } => value,
            Marginal::PowerOf { base, c, theta } => {
                c * Marginal::from(base).quantile(u).powf(theta)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Pareto { alpha, x_m } => {
                if alpha > 1.0 {
                    alpha * x_m / (alpha - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            Marginal::Exponential { rate } => 1.0 / rate,
            Marginal::Deterministic { value } => value,
            Marginal::PowerOf { base, c, theta } => match base {
                XiFamily::Exponential { rate } => c * statrs::function::gamma::gamma(1.0 + theta) / rate.powf(theta),
                XiFamily::Deterministic { value } => c * value.powf(theta),
                XiFamily::Pareto { alpha, x_m } => power_pareto_mean(alpha, x_m, c, theta),
                XiFamily::ParetoAlpha2 { x_m } => power_pareto_mean(2.0, x_m, c, theta),
            },
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Marginal::Pareto { alpha, x_m } => {
                if alpha > 2.0 {
                    x_m * x_m * alpha / ((alpha - 1.0).powi(2) * (alpha - 2.0))
                } else {
                    f64::INFINITY
                }
            }
            Marginal::Exponential { rate } => 1.0 / (rate * rate),
            Marginal::Deterministic { .. } => 0.0,
            Marginal::PowerOf { .. } => f64::NAN,
        }
    }

    /// `int_{[a, b)} x dF(x)`, the first moment restricted to a cell.
    ///
    /// Only needed for the random-walk increment, so `PowerOf` is not
    /// supported and yields NaN.
    pub fn cell_moment(&self, a: f64, b: f64) -> f64 {
        match *self {
            Marginal::Pareto { alpha, x_m } => {
                let a = a.max(x_m);
                if b <= a {
                    return 0.0;
                }
                let scale = alpha * x_m.powf(alpha) / (alpha - 1.0);
                let upper = if b.is_finite() { b.powf(1.0 - alpha) } else { 0.0 };
                scale * (a.powf(1.0 - alpha) - upper)
            }
            Marginal::Exponential { rate } => {
                let a = a.max(0.0);
                if b <= a {
                    return 0.0;
                }
                // int x rate e^{-rate x} dx = -(x + 1/rate) e^{-rate x}
                let prim = |x: f64| {
                    if x.is_finite() {
                        -(x + 1.0 / rate) * (-rate * x).exp()
                    } else {
                        0.0
                    }
                };
                prim(b) - prim(a)
            }
            Marginal::Deterministic { value } => {
                if value >= a && value < b {
                    value
                } else {
                    0.0
                }
            }
            Marginal::PowerOf { .. } => f64::NAN,
        }
    }

    /// Tail index of the law: `P{X > x} ~ x^(-index)`; infinite for light tails.
    pub fn tail_index(&self) -> f64 {
        match *self {
            Marginal::Pareto { alpha, .. } => alpha,
            Marginal::Exponential { .. } | Marginal::Deterministic { .. } => f64::INFINITY,
            Marginal::PowerOf { base, theta, .. } => Marginal::from(base).tail_index() / theta,
        }
    }

    /// Natural length scale, used to size numeric grids.
    pub fn scale(&self) -> f64 {
        match *self {
            Marginal::Pareto { x_m, .. } => x_m,
            Marginal::Exponential { rate } => 1.0 / rate,
            Marginal::Deterministic { value } => value,
            Marginal::PowerOf { base, c, theta } => c * Marginal::from(base).scale().powf(theta),
        }
    }

    pub fn is_atom(&self) -> bool {
        match *self {
            Marginal::Deterministic { .. } => true,
            Marginal::PowerOf { base, .. } => matches!(base, XiFamily::Deterministic { .. }),
            _ => false,
        }
    }
}

fn power_pareto_mean(alpha: f64, x_m: f64, c: f64, theta: f64) -> f64 {
    if alpha > theta {
        c * alpha * x_m.powf(theta) / (alpha - theta)
    } else {
        f64::INFINITY
    }
}

/// Slowly varying function entering the tail or truncated-moment condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlowlyVarying {
    /// `l(x) = kappa`.
    Constant { kappa: f64 },
    /// `l(x) = kappa * ln x`.
    Log { kappa: f64 },
}

impl SlowlyVarying {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SlowlyVarying::Constant { kappa } => kappa,
            SlowlyVarying::Log { kappa } => kappa * x.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "RW_I")]
    RwI,
    #[serde(rename = "RW_II")]
    RwII,
    #[serde(rename = "finite_variance_baseline")]
    FiniteVarianceBaseline,
    #[serde(rename = "inapplicable")]
    Inapplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub regime: Regime,
    pub alpha: f64,
    pub gamma: f64,
    pub ell: SlowlyVarying,
    pub pert_satisfied: bool,
    pub notes: String,
}

impl ConditionReport {
    /// Regimes covered by the stable-fluctuation theorem.
    pub fn is_heavy_tailed(&self) -> bool {
        matches!(self.regime, Regime::RwI | Regime::RwII)
    }
}

/// Raw configuration as read from JSON; `gamma` may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub xi: XiFamily,
    pub eta: EtaFamily,
    #[serde(default)]
    pub dependence: Dependence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

/// A validated law of `(xi, eta)` with its derived constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelConfig", into = "ModelConfig")]
pub struct ModelSpec {
    xi: XiFamily,
    eta: EtaFamily,
    dependence: Dependence,
    gamma: f64,
    mean: f64,
}

impl TryFrom<ModelConfig> for ModelSpec {
    type Error = Error;

    fn try_from(cfg: ModelConfig) -> Result<Self> {
        make_model(cfg.xi, cfg.eta, cfg.dependence, cfg.gamma)
    }
}

impl From<ModelSpec> for ModelConfig {
    fn from(m: ModelSpec) -> Self {
        ModelConfig {
            xi: m.xi,
            eta: m.eta,
            dependence: m.dependence,
            gamma: Some(m.gamma),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be finite and positive, got {v}")))
    }
}

/// Admissible open interval for gamma when xi is in the normal or stable
/// domain of attraction with an infinite alpha-moment.
pub fn gamma_window(alpha: f64) -> (f64, f64) {
    (2.0 - 1.0 / alpha, alpha)
}

/// Validates parameters and builds a [`ModelSpec`]. When `gamma` is `None`
/// a regime-dependent default is used.
pub fn make_model(
    xi: XiFamily,
    eta: EtaFamily,
    dependence: Dependence,
    gamma: Option<f64>,
) -> Result<ModelSpec> {
    match xi {
        XiFamily::Pareto { alpha, x_m } => {
            positive("xi.x_m", x_m)?;
            if !(alpha.is_finite() && alpha > 1.0) {
                return Err(Error::param("xi.alpha", format!("must exceed 1, got {alpha}")));
            }
            if alpha == 2.0 {
                return Err(Error::param("xi.alpha", "alpha = 2 is served by kind `pareto_alpha2`"));
            }
        }
        XiFamily::ParetoAlpha2 { x_m } => positive("xi.x_m", x_m)?,
        XiFamily::Exponential { rate } => positive("xi.rate", rate)?,
        XiFamily::Deterministic { value } => positive("xi.value", value)?,
    }
    match eta {
        EtaFamily::Pareto { alpha, x_m } => {
            positive("eta.alpha", alpha)?;
            positive("eta.x_m", x_m)?;
        }
        EtaFamily::Exponential { rate } => positive("eta.rate", rate)?,
        EtaFamily::Deterministic { value } => positive("eta.value", value)?,
    }
    if let Dependence::Comonotone { theta, c } = dependence {
        positive("dependence.comonotone.theta", theta)?;
        positive("dependence.comonotone.c", c)?;
    }

    let mean = Marginal::from(xi).mean();
    let gamma = match gamma {
        Some(g) => {
            if !(g.is_finite() && g > 1.0 && g <= 2.0) {
                return Err(Error::param("gamma", format!("must lie in (1, 2], got {g}")));
            }
            if let XiFamily::Pareto { alpha, .. } = xi {
                if alpha < 2.0 {
                    let (lo, hi) = gamma_window(alpha);
                    if !(g > lo && g < hi) {
                        return Err(Error::param(
                            "gamma",
                            format!("must lie in ({lo}, {hi}) for a Pareto tail with alpha = {alpha}, got {g}"),
                        ));
                    }
                }
            }
            g
        }
        None => default_gamma(&xi),
    };

    Ok(ModelSpec {
        xi,
        eta,
        dependence,
        gamma,
        mean,
    })
}

fn default_gamma(xi: &XiFamily) -> f64 {
    match *xi {
        XiFamily::Pareto { alpha, .. } if alpha < 2.0 => {
            let (lo, hi) = gamma_window(alpha);
            let g = alpha - 0.05;
            if g > lo {
                g
            } else {
                0.5 * (lo + hi)
            }
        }
        XiFamily::ParetoAlpha2 { .. } => 1.5,
        _ => 2.0,
    }
}

impl ModelSpec {
    pub fn xi(&self) -> XiFamily {
        self.xi
    }

    pub fn eta(&self) -> EtaFamily {
        self.eta
    }

    pub fn dependence(&self) -> Dependence {
        self.dependence
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `m = E xi`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn xi_law(&self) -> Marginal {
        Marginal::from(self.xi)
    }

    /// Marginal law of `eta`, taking the dependence mode into account.
    pub fn eta_law(&self) -> Marginal {
        match self.dependence {
            Dependence::Independent => Marginal::from(self.eta),
            Dependence::Comonotone { theta, c } => Marginal::PowerOf { base: self.xi, c, theta },
            Dependence::Equal => Marginal::from(self.xi),
        }
    }

    /// `Var xi` (infinite for the heavy-tailed families).
    pub fn xi_variance(&self) -> f64 {
        self.xi_law().variance()
    }

    /// `sup eta` over all uniforms the streams can produce, when `eta` is
    /// drawn from its own uniform.
    pub fn eta_sup(&self) -> Option<f64> {
        match self.dependence {
            Dependence::Independent => Some(Marginal::from(self.eta).quantile(UNIFORM_MAX)),
            _ => None,
        }
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<ModelSpec> {
        make_model(self.xi, self.eta, self.dependence, Some(gamma))
    }
}

/// Pert(gamma): `E(eta ^ t) = O(t^(2 - gamma))`, decided from the tail index of `eta`.
fn pert_holds(eta_tail: f64, gamma: f64) -> bool {
    if eta_tail > 1.0 {
        true
    } else if eta_tail == 1.0 {
        // E(eta ^ t) grows like ln t
        gamma < 2.0
    } else {
        1.0 - eta_tail <= 2.0 - gamma
    }
}

/// Decides which limit regime the law of `xi` belongs to and whether the
/// perturbation condition holds for the configured gamma.
pub fn classify_conditions(model: &ModelSpec) -> ConditionReport {
    let gamma = model.gamma;
    let eta_tail = model.eta_law().tail_index();
    let pert_satisfied = pert_holds(eta_tail, gamma);
    let mut notes = Vec::new();

    let (regime, alpha, ell) = match model.xi {
        XiFamily::Pareto { alpha, x_m } if alpha < 2.0 => {
            notes.push(format!(
                "P{{xi > t}} = t^-{alpha} * {:.6}: stable domain of attraction, E xi^alpha = infinity",
                x_m.powf(alpha)
            ));
            (Regime::RwII, alpha, SlowlyVarying::Constant { kappa: x_m.powf(alpha) })
        }
        XiFamily::ParetoAlpha2 { x_m } => {
            notes.push("E(xi^2 1{xi <= t}) ~ 2 x_m^2 ln t: non-normal domain of attraction of the normal law".into());
            (Regime::RwI, 2.0, SlowlyVarying::Log { kappa: 2.0 * x_m * x_m })
        }
        XiFamily::Deterministic { .. } => {
            notes.push("Var xi = 0: no fluctuation limit applies".into());
            (Regime::Inapplicable, 2.0, SlowlyVarying::Constant { kappa: 0.0 })
        }
        _ => {
            let s2 = model.xi_variance();
            notes.push(format!("Var xi = {s2}: finite-variance baseline"));
            (Regime::FiniteVarianceBaseline, 2.0, SlowlyVarying::Constant { kappa: s2 })
        }
    };

    if matches!(regime, Regime::RwI | Regime::RwII) {
        let (lo, hi) = gamma_window(alpha);
        if !(gamma > lo && gamma < hi) {
            notes.push(format!("gamma = {gamma} lies outside the admissible window ({lo}, {hi})"));
        }
    }
    if !pert_satisfied {
        notes.push(format!("E(eta ^ t) is not O(t^(2 - {gamma})): eta has tail index {eta_tail}"));
    }

    ConditionReport {
        regime,
        alpha,
        gamma,
        ell,
        pert_satisfied,
        notes: notes.join("; "),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exp1() -> EtaFamily {
        EtaFamily::Exponential { rate: 1.0 }
    }

    #[test]
    fn pareto_mean_is_closed_form() {
        let m = make_model(XiFamily::Pareto { alpha: 1.5, x_m: 1.0 }, exp1(), Dependence::Independent, Some(1.45)).unwrap();
        assert_relative_eq!(m.mean(), 3.0, max_relative = 1e-15);
    }

    #[test]
    fn deterministic_mean() {
        let m = make_model(
            XiFamily::Deterministic { value: 1.0 },
            EtaFamily::Deterministic { value: 1.0 },
            Dependence::Independent,
            Some(2.0),
        )
        .unwrap();
        assert_eq!(m.mean(), 1.0);
    }

    #[test]
    fn pareto_alpha2_mean() {
        let m = make_model(XiFamily::ParetoAlpha2 { x_m: 1.0 }, exp1(), Dependence::Independent, Some(1.5)).unwrap();
        assert_relative_eq!(m.mean(), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_ranges() {
        let bad = [
            make_model(XiFamily::Pareto { alpha: 1.5, x_m: 0.0 }, exp1(), Dependence::Independent, None),
            make_model(XiFamily::Pareto { alpha: 0.9, x_m: 1.0 }, exp1(), Dependence::Independent, None),
            make_model(XiFamily::Exponential { rate: -1.0 }, exp1(), Dependence::Independent, None),
            make_model(XiFamily::Exponential { rate: 1.0 }, EtaFamily::Exponential { rate: 0.0 }, Dependence::Independent, None),
            make_model(XiFamily::Pareto { alpha: 1.5, x_m: 1.0 }, exp1(), Dependence::Independent, Some(1.2)),
            make_model(XiFamily::Pareto { alpha: 1.5, x_m: 1.0 }, exp1(), Dependence::Independent, Some(1.5)),
            make_model(XiFamily::Exponential { rate: 1.0 }, exp1(), Dependence::Independent, Some(2.5)),
            make_model(
                XiFamily::Exponential { rate: 1.0 },
                exp1(),
                Dependence::Comonotone { theta: 0.0, c: 1.0 },
                None,
            ),
        ];
        for r in bad {
            assert!(matches!(r, Err(Error::InvalidParameter { .. })), "{r:?}");
        }
    }

    #[test]
    fn default_gamma_per_regime() {
        let m = make_model(XiFamily::Pareto { alpha: 1.5, x_m: 1.0 }, exp1(), Dependence::Independent, None).unwrap();
        assert_relative_eq!(m.gamma(), 1.45);
        let m = make_model(XiFamily::ParetoAlpha2 { x_m: 1.0 }, exp1(), Dependence::Independent, None).unwrap();
        assert_eq!(m.gamma(), 1.5);
        // alpha - 0.05 falls below 2 - 1/alpha here, so the window midpoint is used
        let m = make_model(XiFamily::Pareto { alpha: 1.2, x_m: 1.0 }, exp1(), Dependence::Independent, None).unwrap();
        let (lo, hi) = gamma_window(1.2);
        assert!(m.gamma() > lo && m.gamma() < hi);
    }

    #[test]
    fn classify_rw2() {
        let m = make_model(XiFamily::Pareto { alpha: 1.5, x_m: 1.0 }, exp1(), Dependence::Independent, Some(1.45)).unwrap();
        let r = classify_conditions(&m);
        assert_eq!(r.regime, Regime::RwII);
        assert_eq!(r.alpha, 1.5);
        assert_eq!(r.ell, SlowlyVarying::Constant { kappa: 1.0 });
        assert!(r.pert_satisfied);
    }

    #[test]
    fn classify_rw1() {
        let m = make_model(XiFamily::ParetoAlpha2 { x_m: 1.0 }, exp1(), Dependence::Independent, Some(1.5)).unwrap();
        let r = classify_conditions(&m);
        assert_eq!(r.regime, Regime::RwI);
        assert_eq!(r.alpha, 2.0);
        assert_eq!(r.ell, SlowlyVarying::Log { kappa: 2.0 });
        assert!(r.pert_satisfied);
        assert_relative_eq!(r.ell.eval(std::f64::consts::E), 2.0);
    }

    #[test]
    fn classify_baseline_and_inapplicable() {
        let m = make_model(XiFamily::Exponential { rate: 1.0 }, exp1(), Dependence::Independent, None).unwrap();
        let r = classify_conditions(&m);
        assert_eq!(r.regime, Regime::FiniteVarianceBaseline);
        assert_eq!(r.ell, SlowlyVarying::Constant { kappa: 1.0 });
        let m = make_model(
            XiFamily::Deterministic { value: 1.0 },
            EtaFamily::Deterministic { value: 1.0 },
            Dependence::Independent,
            None,
        )
        .unwrap();
        assert_eq!(classify_conditions(&m).regime, Regime::Inapplicable);
    }

    #[test]
    fn pert_with_heavy_eta() {
        // tail index 0.6: E(eta ^ t) ~ t^0.4, needs 0.4 <= 2 - gamma
        let heavy = EtaFamily::Pareto { alpha: 0.6, x_m: 1.0 };
        let ok = make_model(XiFamily::Pareto { alpha: 1.7, x_m: 1.0 }, heavy, Dependence::Independent, Some(1.5)).unwrap();
        assert!(classify_conditions(&ok).pert_satisfied);
        let bad = ok.with_gamma(1.65).unwrap();
        assert!(!classify_conditions(&bad).pert_satisfied);
        // comonotone eta = xi^2 with alpha = 1.5 has tail index 0.75, xi^4 has 0.375
        let co = |theta| {
            make_model(
                XiFamily::Pareto { alpha: 1.5, x_m: 1.0 },
                exp1(),
                Dependence::Comonotone { theta, c: 1.0 },
                Some(1.45),
            )
            .unwrap()
        };
        assert!(classify_conditions(&co(2.0)).pert_satisfied);
        assert!(!classify_conditions(&co(4.0)).pert_satisfied);
    }

    #[test]
    fn classify_is_pure() {
        let m = make_model(XiFamily::Pareto { alpha: 1.5, x_m: 50.0 }, exp1(), Dependence::Independent, Some(1.45)).unwrap();
        assert_eq!(classify_conditions(&m), classify_conditions(&m));
    }

    #[test]
    fn json_round_trip_fills_gamma() {
        let text = r#"{"xi": {"kind": "pareto", "alpha": 1.5, "x_m": 1}, "eta": {"kind": "exponential", "rate": 1}, "dependence": "independent"}"#;
        let m: ModelSpec = serde_json::from_str(text).unwrap();
        assert_relative_eq!(m.gamma(), 1.45);
        let back = serde_json::to_value(&m).unwrap();
        assert_eq!(back["gamma"].as_f64().unwrap(), m.gamma());
        assert_eq!(back["xi"]["kind"], "pareto");
        let co = r#"{"xi": {"kind": "exponential", "rate": 2}, "eta": {"kind": "exponential", "rate": 1}, "dependence": {"comonotone": {"theta": 1.0, "c": 0.5}}}"#;
        let m: ModelSpec = serde_json::from_str(co).unwrap();
        assert_eq!(m.dependence(), Dependence::Comonotone { theta: 1.0, c: 0.5 });
    }

    #[test]
    fn cell_moments_sum_to_mean() {
        for law in [
            Marginal::Pareto { alpha: 1.5, x_m: 1.0 },
            Marginal::Pareto { alpha: 2.0, x_m: 0.5 },
            Marginal::Exponential { rate: 2.0 },
        ] {
            let h = 0.37;
            let total: f64 = (0..200_000).map(|k| law.cell_moment(k as f64 * h, (k + 1) as f64 * h)).sum::<f64>()
                + law.cell_moment(200_000.0 * h, f64::INFINITY);
            assert_relative_eq!(total, law.mean(), max_relative = 1e-9);
        }
    }
}
