//! The spectrally negative alpha-stable Levy process `S_alpha` with
//!
//! ```text
//! E exp(i z S_alpha(1)) = exp{-|z|^alpha Gamma(1 - alpha) (cos(pi alpha / 2) + i sgn(z) sin(pi alpha / 2))}
//! ```
//!
//! for `alpha` in `(1, 2)`, standard Brownian motion for `alpha = 2`, and the
//! limit functional `L_alpha(u) = u int_0^inf e^{-u y} S_alpha(y) dy`.
//!
//! In the `S(sigma, beta, mu)` parametrization the law of `S_alpha(1)` is
//! `S(sigma, -1, 0)` with `sigma^alpha = Gamma(1 - alpha) cos(pi alpha / 2)`,
//! which is what the Chambers-Mallows-Stuck sampler below produces.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::sampling::Stream;

/// Truncation horizon factor: paths must reach `TRUNCATION / u_min`.
pub const TRUNCATION: f64 = 40.0;

/// Cap on simulated path length (number of grid points).
pub const MAX_PATH_POINTS: usize = 1 << 27;

/// `Gamma(1 - alpha)` for `alpha` in `(1, 2)`, via `Gamma(2 - alpha) / (1 - alpha)`.
pub fn gamma_one_minus(alpha: f64) -> f64 {
    -ln_gamma(2.0 - alpha).exp() / (alpha - 1.0)
}

pub fn char_function(alpha: f64, z: f64) -> Result<Complex64> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::param(
            "alpha",
            format!("must lie in (1, 2), got {alpha}; use brownian_char_function for alpha = 2"),
        ));
    }
    if z == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let g = gamma_one_minus(alpha);
    let half = FRAC_PI_2 * alpha;
    let modulus = z.abs().powf(alpha) * g;
    let exponent = Complex64::new(-modulus * half.cos(), -modulus * z.signum() * half.sin());
    Ok(exponent.exp())
}

pub fn brownian_char_function(z: f64) -> Complex64 {
    Complex64::new((-0.5 * z * z).exp(), 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableSpec {
    pub alpha: f64,
    /// Scale in the `S(sigma, -1, 0)` form; `1/sqrt(2)` for the Brownian case.
    pub sigma: f64,
    #[serde(skip)]
    cms: CmsConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct CmsConstants {
    shift: f64,
    factor: f64,
    inv_alpha: f64,
    exponent: f64,
}

impl StableSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha <= 2.0) {
            return Err(Error::param("alpha", format!("must lie in (1, 2], got {alpha}")));
        }
        if alpha == 2.0 {
            return Ok(StableSpec {
                alpha,
                sigma: std::f64::consts::FRAC_1_SQRT_2,
                cms: CmsConstants::default(),
            });
        }
        let sigma = (gamma_one_minus(alpha) * (FRAC_PI_2 * alpha).cos()).powf(1.0 / alpha);
        let beta = -1.0;
        let tan = (FRAC_PI_2 * alpha).tan();
        let cms = CmsConstants {
            shift: (beta * tan).atan() / alpha,
            factor: (1.0 + beta * beta * tan * tan).powf(0.5 / alpha),
            inv_alpha: 1.0 / alpha,
            exponent: (1.0 - alpha) / alpha,
        };
        Ok(StableSpec { alpha, sigma, cms })
    }

    pub fn is_brownian(&self) -> bool {
        self.alpha == 2.0
    }

    /// One draw of `S_alpha(1)`.
    #[inline]
    pub fn sample_unit(&self, s: &mut Stream) -> f64 {
        if self.is_brownian() {
            return StandardNormal.sample(s);
        }
        let c = &self.cms;
        let v = PI * (s.uniform() - 0.5);
        let w = -s.uniform().ln();
        let a = self.alpha * (v + c.shift);
        let x = c.factor * a.sin() / v.cos().powf(c.inv_alpha) * ((v - a).cos() / w).powf(c.exponent);
        self.sigma * x
    }
}

/// `S_alpha(t + dt) - S_alpha(t)`, distributed as `dt^(1/alpha) S_alpha(1)`.
pub fn stable_increment(spec: &StableSpec, dt: f64, s: &mut Stream) -> f64 {
    dt.powf(1.0 / spec.alpha) * spec.sample_unit(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StablePath {
    pub dy: f64,
    pub values: Vec<f64>,
}

impl StablePath {
    pub fn horizon(&self) -> f64 {
        self.dy * (self.values.len().saturating_sub(1)) as f64
    }

    /// Every `factor`-th grid value, i.e. the same realization on a coarser grid.
    pub fn coarsen(&self, factor: usize) -> StablePath {
        StablePath {
            dy: self.dy * factor as f64,
            values: self.values.iter().step_by(factor).copied().collect(),
        }
    }
}

fn grid_points(dy: f64, horizon: f64) -> Result<usize> {
    if !(dy > 0.0 && dy.is_finite()) {
        return Err(Error::param("dy", format!("must be positive, got {dy}")));
    }
    if !(horizon >= dy) {
        return Err(Error::param("horizon", format!("must be at least dy = {dy}, got {horizon}")));
    }
    let steps = (horizon / dy + 1e-9).floor();
    if steps + 1.0 > MAX_PATH_POINTS as f64 {
        return Err(Error::GridTooLarge {
            requested: steps as usize + 1,
            cap: MAX_PATH_POINTS,
        });
    }
    Ok(steps as usize)
}

pub fn simulate_path(spec: &StableSpec, dy: f64, horizon: f64, s: &mut Stream) -> Result<StablePath> {
    let steps = grid_points(dy, horizon)?;
    let scale = dy.powf(1.0 / spec.alpha);
    let mut values = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    values.push(acc);
    for _ in 0..steps {
        acc += scale * spec.sample_unit(s);
        values.push(acc);
    }
    Ok(StablePath { dy, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSample {
    pub u_points: Vec<f64>,
    pub values: Vec<f64>,
}

/// Smallest path horizon accepted by [`limit_functional`] for these `u`.
pub fn required_horizon(u_points: &[f64]) -> f64 {
    let u_min = u_points.iter().copied().fold(f64::INFINITY, f64::min);
    TRUNCATION / u_min
}

/// Trapezoidal quadrature of `u int_0^Y e^{-u y} S(y) dy` on the path grid.
///
/// The neglected tail `u int_Y^inf e^{-u y} S(y) dy` has absolute value at
/// most `sup_{y >= Y} |S(y)| e^{-u Y}`, and `|S(y)|` grows like `y^(1/alpha)`,
/// so `Y = 40 / u` keeps the truncation near `e^{-40}`.
pub fn limit_functional(path: &StablePath, u_points: &[f64]) -> Result<LimitSample> {
    if u_points.is_empty() {
        return Err(Error::param("u_points", "must not be empty"));
    }
    for &u in u_points {
        if !(u > 0.0 && u.is_finite()) {
            return Err(Error::param("u_points", format!("must be positive, got {u}")));
        }
        let required = TRUNCATION / u;
        if path.horizon() < required * (1.0 - 1e-9) {
            return Err(Error::HorizonTooShort {
                horizon: path.horizon(),
                u,
                required,
            });
        }
    }
    let values = u_points.iter().map(|&u| trapezoid(path, u)).collect();
    Ok(LimitSample {
        u_points: u_points.to_vec(),
        values,
    })
}

fn trapezoid(path: &StablePath, u: f64) -> f64 {
    let n = path.values.len();
    if n < 2 {
        return 0.0;
    }
    // e^{-u k dy} by repeated multiplication, renormalized every 256 steps
    let ratio = (-u * path.dy).exp();
    let mut weight = 1.0;
    let mut sum = 0.5 * path.values[0];
    for (k, &v) in path.values.iter().enumerate().skip(1) {
        if k % 256 == 0 {
            weight = (-u * path.dy * k as f64).exp();
        } else {
            weight *= ratio;
        }
        let w = if k == n - 1 { 0.5 * weight } else { weight };
        sum += w * v;
    }
    u * path.dy * sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{stream_for, Role, StreamKey};
    use approx::assert_relative_eq;

    #[test]
    fn char_function_at_zero_and_one() {
        let one = char_function(1.5, 0.0).unwrap();
        assert_eq!(one, Complex64::new(1.0, 0.0));
        // Gamma(-0.5) = -2 sqrt(pi), cos(3 pi / 4) = -1/sqrt(2)
        let expected_modulus = (-2.0 * PI.sqrt() * std::f64::consts::FRAC_1_SQRT_2).exp();
        let v = char_function(1.5, 1.0).unwrap();
        assert_relative_eq!(v.norm(), expected_modulus, max_relative = 1e-12);
        assert_relative_eq!(v.norm(), 0.0815, epsilon = 1e-4);
    }

    #[test]
    fn char_function_hermitian() {
        for alpha in [1.1, 1.5, 1.9] {
            for z in [0.1, 0.7, 1.0, 3.3] {
                let a = char_function(alpha, z).unwrap();
                let b = char_function(alpha, -z).unwrap();
                assert_relative_eq!(a.re, b.re, max_relative = 1e-14);
                assert_relative_eq!(a.im, -b.im, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn char_function_rejects_brownian() {
        assert!(char_function(2.0, 1.0).is_err());
        assert!(char_function(1.0, 1.0).is_err());
    }

    #[test]
    fn gamma_one_minus_matches_reference() {
        assert_relative_eq!(gamma_one_minus(1.5), -2.0 * PI.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn short_path() {
        let spec = StableSpec::new(1.5).unwrap();
        let mut s = stream_for(StreamKey::new(1, 0, Role::LimitPath));
        let p = simulate_path(&spec, 0.5, 0.5, &mut s).unwrap();
        assert_eq!(p.values.len(), 2);
        assert_eq!(p.values[0], 0.0);
    }

    #[test]
    fn path_length_cap() {
        let spec = StableSpec::new(2.0).unwrap();
        let mut s = stream_for(StreamKey::new(1, 0, Role::LimitPath));
        assert!(matches!(
            simulate_path(&spec, 1e-9, 1.0, &mut s),
            Err(Error::GridTooLarge { .. })
        ));
        assert!(simulate_path(&spec, 1.0, 0.5, &mut s).is_err());
    }

    #[test]
    fn zero_path_functional() {
        let path = StablePath { dy: 0.01, values: vec![0.0; 4001] };
        let l = limit_functional(&path, &[1.0, 2.5]).unwrap();
        assert_eq!(l.values, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_path_functional() {
        // u int y e^{-u y} dy = 1/u
        let dy = 0.001;
        let n = (20.0 / dy) as usize;
        let path = StablePath {
            dy,
            values: (0..=n).map(|k| k as f64 * dy).collect(),
        };
        let l = limit_functional(&path, &[2.0]).unwrap();
        assert!((l.values[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn horizon_rule() {
        let path = StablePath { dy: 0.01, values: vec![0.0; 3001] };
        assert!(matches!(
            limit_functional(&path, &[1.0]),
            Err(Error::HorizonTooShort { .. })
        ));
        assert!(limit_functional(&path, &[2.0]).is_ok());
    }

    #[test]
    fn quadrature_refinement_on_fixed_path() {
        for (alpha, seed) in [(2.0, 11u64), (1.5, 12)] {
            let spec = StableSpec::new(alpha).unwrap();
            let mut s = stream_for(StreamKey::new(seed, 0, Role::LimitPath));
            let fine = simulate_path(&spec, 0.0005, 40.0, &mut s).unwrap();
            let coarse = fine.coarsen(2);
            let a = limit_functional(&fine, &[1.0]).unwrap().values[0];
            let b = limit_functional(&coarse, &[1.0]).unwrap().values[0];
            assert!((a - b).abs() <= 1e-3 * a.abs().max(b.abs()), "alpha {alpha}: {a} vs {b}");
        }
    }

    #[test]
    fn strict_stability_of_increments() {
        use crate::experiments::stats::ks_two_sample;
        let spec = StableSpec::new(1.5).unwrap();
        let mut s = stream_for(StreamKey::new(21, 0, Role::Aux));
        for a in [2usize, 4] {
            let scaled: Vec<f64> = (0..10_000)
                .map(|_| (a as f64).powf(1.0 / 1.5) * spec.sample_unit(&mut s))
                .collect();
            let sums: Vec<f64> = (0..10_000)
                .map(|_| (0..a).map(|_| spec.sample_unit(&mut s)).sum())
                .collect();
            let r = ks_two_sample(&scaled, &sums).unwrap();
            assert!(r.p >= 1e-3, "a = {a}: {r:?}");
        }
    }

    #[test]
    fn spectrally_negative_skew() {
        for alpha in [1.2, 1.5, 1.8] {
            let spec = StableSpec::new(alpha).unwrap();
            let mut s = stream_for(StreamKey::new(22, 0, Role::Aux));
            let x: Vec<f64> = (0..100_000).map(|_| spec.sample_unit(&mut s)).collect();
            let sk = crate::experiments::stats::Summary::of(&x).unwrap().skewness;
            assert!(sk < 0.0, "alpha {alpha}: skewness {sk}");
        }
    }

    #[test]
    fn brownian_limit_variance() {
        // Var L_2(u) = 1/(2u)
        let spec = StableSpec::new(2.0).unwrap();
        let n = 4000;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = stream_for(StreamKey::new(23, i, Role::LimitPath));
                let p = simulate_path(&spec, 0.01, 20.0, &mut s).unwrap();
                limit_functional(&p, &[2.0]).unwrap().values[0]
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // sd of a normal sample variance is var * sqrt(2 / n), about 2.2% here
        assert!((var / 0.25 - 1.0).abs() <= 0.09, "{var}");
    }

    proptest::proptest! {
        #[test]
        fn char_function_is_bounded(alpha in 1.01f64..1.99, z in -50.0f64..50.0) {
            let c = char_function(alpha, z).unwrap();
            proptest::prop_assert!(c.norm() <= 1.0 + 1e-12);
            let d = char_function(alpha, -z).unwrap();
            proptest::prop_assert!((d - c.conj()).norm() <= 1e-12);
        }

        #[test]
        fn functional_is_linear(scale in -5.0f64..5.0, seed: u64) {
            let spec = StableSpec::new(1.5).unwrap();
            let mut s = stream_for(StreamKey::new(seed, 0, Role::LimitPath));
            let p = simulate_path(&spec, 0.05, 40.0, &mut s).unwrap();
            let q = StablePath { dy: p.dy, values: p.values.iter().map(|v| v * scale).collect() };
            let a = limit_functional(&p, &[1.0]).unwrap().values[0];
            let b = limit_functional(&q, &[1.0]).unwrap().values[0];
            proptest::prop_assert!((b - scale * a).abs() <= 1e-9 * (1.0 + a.abs() * scale.abs()));
        }
    }
}
