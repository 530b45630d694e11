//! Grid numerics for the renewal function `U`, the first-generation mean
//! `V = U * G` and its convolution powers `V_j`.
//!
//! Every function on the grid `{k h}` is backed by a lattice measure with two
//! parts: exact atoms sitting on grid points and a smooth part whose cell
//! masses are split evenly between the two cell endpoints. Convolution of the
//! smooth parts is then second-order accurate and the value at `k h` is read
//! back as the cumulative mass minus half of the smooth mass at `k`. A law
//! without a smooth part (a point mass on the lattice) is handled exactly.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::models::{Dependence, Marginal, ModelSpec, XiFamily};

/// Largest number of grid points any table may have.
pub const MAX_GRID_POINTS: usize = 1 << 24;

/// Below this many multiply-adds a convolution is done directly.
const DIRECT_WORK: usize = 1 << 24;

/// Largest dense renewal sequence solved by the quadratic recurrence.
const DIRECT_RENEWAL: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    /// Right-continuous step function, constant between grid points.
    Step,
    Linear,
}

/// Values of a nondecreasing function at `k * step`, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub step: f64,
    pub values: Vec<f64>,
    pub interp: Interp,
    /// Probability mass of the underlying law beyond the grid end.
    pub dropped_mass: f64,
}

fn grid_len(h: f64, t_max: f64) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("h", format!("must be positive, got {h}")));
    }
    if !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(Error::param("t_max", format!("must be nonnegative, got {t_max}")));
    }
    let k = (t_max / h + 1e-9).floor();
    if k + 1.0 > MAX_GRID_POINTS as f64 {
        return Err(Error::GridTooLarge {
            requested: k as usize + 1,
            cap: MAX_GRID_POINTS,
        });
    }
    Ok(k as usize + 1)
}

impl GridFunction {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn t_max(&self) -> f64 {
        self.step * (self.values.len().saturating_sub(1)) as f64
    }

    pub fn abscissa(&self, k: usize) -> f64 {
        self.step * k as f64
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let t_max = self.t_max();
        if !(x >= 0.0) {
            return Ok(0.0);
        }
        if x > t_max * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::TableDomain {
                available: t_max,
                requested: x,
            });
        }
        let pos = x / self.step;
        let last = self.values.len() - 1;
        match self.interp {
            Interp::Step => {
                let k = ((pos + 1e-9).floor() as usize).min(last);
                Ok(self.values[k])
            }
            Interp::Linear => {
                let k = (pos.floor() as usize).min(last);
                if k == last {
                    return Ok(self.values[last]);
                }
                let w = pos - k as f64;
                Ok(self.values[k] + w * (self.values[k + 1] - self.values[k]))
            }
        }
    }

    fn check_monotone(&self) -> Result<()> {
        for k in 1..self.values.len() {
            if self.values[k] < self.values[k - 1] - 1e-12 * self.values[k - 1].abs().max(1.0) {
                return Err(Error::NonMonotone { index: k });
            }
        }
        Ok(())
    }
}

/// True when `value` is an integer multiple of `h` up to rounding.
fn on_lattice(value: f64, h: f64) -> bool {
    let r = value / h;
    (r - r.round()).abs() < 1e-9 * r.abs().max(1.0)
}

/// `F(k h)` for `k = 0..=K`; a point mass on the lattice yields a step function.
pub fn cdf_grid(law: &Marginal, h: f64, t_max: f64) -> Result<GridFunction> {
    let n = grid_len(h, t_max)?;
    let interp = match law {
        Marginal::Deterministic { value } if on_lattice(*value, h) => Interp::Step,
        Marginal::PowerOf {
            base: XiFamily::Deterministic { value },
            c,
            theta,
        } if on_lattice(c * value.powf(*theta), h) => Interp::Step,
        _ => Interp::Linear,
    };
    let values: Vec<f64> = (0..n)
        .map(|k| {
            let x = h * k as f64;
            if interp == Interp::Step {
                // nudge upwards so an atom on a grid point is counted there
                law.cdf(x + 1e-9 * h)
            } else {
                law.cdf(x)
            }
        })
        .collect();
    let dropped_mass = 1.0 - values[n - 1];
    Ok(GridFunction {
        step: h,
        values,
        interp,
        dropped_mass,
    })
}

/// Lattice measure split into exact atoms and a smoothed continuous part.
#[derive(Debug, Clone)]
struct Measure {
    atoms: Vec<f64>,
    cont: Vec<f64>,
}

impl Measure {
    fn len(&self) -> usize {
        self.atoms.len()
    }

    fn has_cont(&self) -> bool {
        self.cont.iter().any(|&x| x != 0.0)
    }

    fn from_grid(g: &GridFunction, n: usize) -> Measure {
        let v = &g.values;
        let mut atoms = vec![0.0; n];
        let mut cont = vec![0.0; n];
        match g.interp {
            Interp::Step => {
                atoms[0] = v[0];
                for k in 1..n {
                    atoms[k] = v[k] - v[k - 1];
                }
            }
            Interp::Linear => {
                atoms[0] = v[0];
                for k in 1..n {
                    let c = v[k] - v[k - 1];
                    cont[k - 1] += 0.5 * c;
                    cont[k] += 0.5 * c;
                }
                // upper half of the last cell: from the next grid value if the
                // function extends that far, else the previous cell's mass
                let upper = if v.len() > n {
                    v[n] - v[n - 1]
                } else if n >= 2 {
                    v[n - 1] - v[n - 2]
                } else {
                    0.0
                };
                cont[n - 1] += 0.5 * upper;
            }
        }
        Measure { atoms, cont }
    }

    /// Splits each cell's mass between its endpoints so that the cell's mean
    /// is kept. `None` for laws without closed-form cell moments.
    fn from_law(law: &Marginal, h: f64, n: usize) -> Option<Measure> {
        let mut cont = vec![0.0; n];
        for k in 0..n {
            let a = k as f64 * h;
            let (p, off) = cell_mass_offset(law, a, a + h)?;
            if p == 0.0 {
                continue;
            }
            let right = p * (off / h).clamp(0.0, 1.0);
            cont[k] += p - right;
            if k + 1 < n {
                cont[k + 1] += right;
            }
        }
        let mut atoms = vec![0.0; n];
        // a single node carries its mass as an atom
        if n == 1 {
            atoms[0] = cont[0];
            cont[0] = 0.0;
        }
        Some(Measure { atoms, cont })
    }

    fn to_grid(&self, step: f64, dropped_mass: f64) -> GridFunction {
        let n = self.len();
        let smooth = self.has_cont();
        let mut values = Vec::with_capacity(n);
        let (mut ca, mut cc) = (0.0, 0.0);
        for k in 0..n {
            ca += self.atoms[k];
            cc += self.cont[k];
            // the smooth part has no mass at the origin itself
            if smooth && k > 0 {
                values.push(ca + cc - 0.5 * self.cont[k]);
            } else {
                values.push(ca);
            }
        }
        GridFunction {
            step,
            values,
            interp: if smooth { Interp::Linear } else { Interp::Step },
            dropped_mass,
        }
    }

    fn convolve(&self, other: &Measure, fft: &mut Convolver) -> Measure {
        let n = self.len().min(other.len());
        let atoms = fft.conv(&self.atoms, &other.atoms, n);
        let mut cont = fft.conv(&self.atoms, &other.cont, n);
        for (c, x) in cont.iter_mut().zip(fft.conv(&self.cont, &other.atoms, n)) {
            *c += x;
        }
        for (c, x) in cont.iter_mut().zip(fft.conv(&self.cont, &other.cont, n)) {
            *c += x;
        }
        Measure { atoms, cont }
    }
}

/// Mass of `(a, b]` and the conditional mean of the law there, minus `a`.
fn cell_mass_offset(law: &Marginal, a: f64, b: f64) -> Option<(f64, f64)> {
    match *law {
        Marginal::Pareto { alpha, x_m } => {
            let lo = a.max(x_m);
            if b <= lo {
                return Some((0.0, 0.0));
            }
            let r = ((b - lo) / lo).ln_1p();
            let mass = (x_m / lo).powf(alpha) * -(-alpha * r).exp_m1();
            let moment = alpha * x_m.powf(alpha) / (alpha - 1.0) * lo.powf(1.0 - alpha) * -(-(alpha - 1.0) * r).exp_m1();
            Some((mass, moment / mass - a))
        }
        Marginal::Exponential { rate } => {
            let lo = a.max(0.0);
            if b <= lo {
                return Some((0.0, 0.0));
            }
            let w = b - lo;
            let mass = (-rate * lo).exp() * -(-rate * w).exp_m1();
            Some((mass, lo - a + 1.0 / rate - w / (rate * w).exp_m1()))
        }
        _ => None,
    }
}

fn nonzero_indices(a: &[f64]) -> Vec<usize> {
    a.iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Truncated linear convolution, direct for sparse or small inputs and by FFT otherwise.
struct Convolver {
    planner: FftPlanner<f64>,
}

impl Convolver {
    fn new() -> Self {
        Convolver {
            planner: FftPlanner::new(),
        }
    }

    fn conv(&mut self, a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let a = &a[..a.len().min(n)];
        let b = &b[..b.len().min(n)];
        let na = nonzero_indices(a);
        let nb = nonzero_indices(b);
        let mut out = vec![0.0; n];
        if na.is_empty() || nb.is_empty() {
            return out;
        }
        let (sparse, dense, idx) = if na.len() <= nb.len() { (a, b, &na) } else { (b, a, &nb) };
        if idx.len().saturating_mul(n) <= DIRECT_WORK {
            for &i in idx {
                let w = sparse[i];
                for (o, &d) in out[i..].iter_mut().zip(dense) {
                    *o += w * d;
                }
            }
            return out;
        }
        self.fft_conv(a, b, n)
    }

    fn fft_conv(&mut self, a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let size = (a.len() + b.len()).max(2).next_power_of_two();
        let fwd: Arc<dyn Fft<f64>> = self.planner.plan_fft_forward(size);
        let inv: Arc<dyn Fft<f64>> = self.planner.plan_fft_inverse(size);
        // both real inputs in one complex transform
        let mut buf: Vec<Complex64> = (0..size)
            .map(|k| Complex64::new(a.get(k).copied().unwrap_or(0.0), b.get(k).copied().unwrap_or(0.0)))
            .collect();
        fwd.process(&mut buf);
        let mut prod = vec![Complex64::new(0.0, 0.0); size];
        for k in 0..size {
            let z = buf[k];
            let zc = buf[(size - k) % size].conj();
            let fa = 0.5 * (z + zc);
            let fb = Complex64::new(0.0, -0.5) * (z - zc);
            prod[k] = fa * fb;
        }
        inv.process(&mut prod);
        let scale = 1.0 / size as f64;
        prod.iter().take(n).map(|z| z.re * scale).collect()
    }

    /// First `n` terms of `(delta - f)^{-1}`, i.e. the renewal sequence of `f`.
    fn renewal(&mut self, f: &[f64], n: usize) -> Vec<f64> {
        let f0 = f.first().copied().unwrap_or(0.0);
        let denom = 1.0 - f0;
        let tail: Vec<usize> = nonzero_indices(&f[..f.len().min(n)]).into_iter().filter(|&i| i > 0).collect();
        if tail.len().saturating_mul(n) <= DIRECT_WORK || n <= DIRECT_RENEWAL {
            let mut u = vec![0.0; n];
            u[0] = 1.0 / denom;
            for k in 1..n {
                let mut s = 0.0;
                for &i in &tail {
                    if i > k {
                        break;
                    }
                    s += f[i] * u[k - i];
                }
                u[k] = s / denom;
            }
            return u;
        }
        // Newton iteration g <- g - g (a g - delta) on a = delta - f
        let a: Vec<f64> = (0..n).map(|k| if k == 0 { denom } else { -f.get(k).copied().unwrap_or(0.0) }).collect();
        let mut g = vec![1.0 / denom];
        let mut len = 1;
        while len < n {
            let next = (2 * len).min(n);
            let mut e = self.fft_conv(&a[..next], &g, next);
            e[0] -= 1.0;
            let corr = self.fft_conv(&g, &e, next);
            g.resize(next, 0.0);
            for k in 0..next {
                g[k] -= corr[k];
            }
            len = next;
        }
        g
    }
}

fn renewal_measure(f: &Measure, fft: &mut Convolver) -> Measure {
    let n = f.len();
    let total: Vec<f64> = f.atoms.iter().zip(&f.cont).map(|(a, c)| a + c).collect();
    let u_total = fft.renewal(&total, n);
    let u_atoms = fft.renewal(&f.atoms, n);
    let cont = if f.has_cont() {
        u_total.iter().zip(&u_atoms).map(|(t, a)| t - a).collect()
    } else {
        vec![0.0; n]
    };
    Measure { atoms: u_atoms, cont }
}

/// Renewal function `U = sum_n F^{*n}` on `[0, t_max]` from the cdf grid of `xi`.
pub fn renewal_grid(f: &GridFunction, h: f64, t_max: f64) -> Result<GridFunction> {
    let n = grid_len(h, t_max)?;
    if (f.step - h).abs() > 1e-12 * h {
        return Err(Error::GridMismatch { left: f.step, right: h });
    }
    if f.len() < n {
        return Err(Error::TableDomain {
            available: f.t_max(),
            requested: t_max,
        });
    }
    f.check_monotone()?;
    if f.values[0] >= 1.0 {
        return Err(Error::param("F", "F(0) must be below 1"));
    }
    let mut fft = Convolver::new();
    let fm = Measure::from_grid(f, n);
    Ok(renewal_measure(&fm, &mut fft).to_grid(h, f.dropped_mass))
}

/// `V = U * G`, the Stieltjes convolution of the renewal function with the cdf of `eta`.
pub fn v_grid(u: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    if (u.step - g.step).abs() > 1e-12 * u.step {
        return Err(Error::GridMismatch {
            left: u.step,
            right: g.step,
        });
    }
    let n = u.len().min(g.len());
    let mut fft = Convolver::new();
    let um = Measure::from_grid(u, n);
    let gm = Measure::from_grid(g, n);
    Ok(um.convolve(&gm, &mut fft).to_grid(u.step, g.dropped_mass))
}

fn powers(v: &Measure, j_max: usize, fft: &mut Convolver) -> Vec<Measure> {
    let mut out = Vec::with_capacity(j_max);
    out.push(v.clone());
    for _ in 1..j_max {
        let next = out.last().unwrap().convolve(v, fft);
        out.push(next);
    }
    out
}

/// `V^{*j}` on the grid of `v`.
pub fn vj_grid(v: &GridFunction, j: usize) -> Result<GridFunction> {
    if j == 0 {
        return Err(Error::param("j", "must be at least 1"));
    }
    if j == 1 {
        return Ok(v.clone());
    }
    let mut fft = Convolver::new();
    let vm = Measure::from_grid(v, v.len());
    let p = powers(&vm, j, &mut fft);
    Ok(p[j - 1].to_grid(v.step, v.dropped_mass))
}

/// `ln(t^j / (j! m^j))`.
pub fn leading_term_log(j: usize, m: f64, t: f64) -> f64 {
    j as f64 * (t / m).ln() - ln_gamma(j as f64 + 1.0)
}

fn ln_binom(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Logarithm of `sum_{i<j} binom(j, i) C^{j-i} (t+1)^{(2-gamma)(j-i)+i} / (i! m^i)`.
pub fn bound_rhs_log(j: usize, t: f64, c: f64, gamma: f64, m: f64) -> f64 {
    let lt = (t + 1.0).ln();
    let terms: Vec<f64> = (0..j)
        .map(|i| {
            let (jf, fi) = (j as f64, i as f64);
            ln_binom(j, i) + (jf - fi) * c.ln() + ((2.0 - gamma) * (jf - fi) + fi) * lt
                - ln_gamma(fi + 1.0)
                - fi * m.ln()
        })
        .collect();
    log_sum_exp(&terms)
}

pub fn bound_rhs(j: usize, t: f64, c: f64, gamma: f64, m: f64) -> Result<f64> {
    if j == 0 {
        return Err(Error::param("j", "must be at least 1"));
    }
    let l = bound_rhs_log(j, t, c, gamma, m);
    let v = l.exp();
    if !v.is_finite() {
        return Err(Error::Overflow(format!("bound for j = {j}, t = {t} has log {l}")));
    }
    Ok(v)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c_hat: f64,
    #[serde(rename = "C_hat")]
    pub big_c_hat: f64,
    pub gamma: f64,
    pub j_max: usize,
    pub grid_points: usize,
}

fn c_hat_of(v: &GridFunction, m: f64, gamma: f64) -> f64 {
    v.values
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let t = v.abscissa(k);
            (x - t / m).abs() / (t + 1.0).powf(2.0 - gamma)
        })
        .fold(0.0, f64::max)
}

/// Estimates `c` in `|V(t) - t/m| <= c (t+1)^{2-gamma}` and the smallest
/// `C >= 1` for which the bound on `|V_j(t) - t^j/(j! m^j)|` holds at every
/// grid point for `j <= j_max`.
pub fn estimate_constants(v: &GridFunction, m: f64, gamma: f64, j_max: usize) -> Result<BoundConstants> {
    if j_max == 0 {
        return Err(Error::param("j_max", "must be at least 1"));
    }
    let mut fft = Convolver::new();
    let vm = Measure::from_grid(v, v.len());
    let tables: Vec<GridFunction> = powers(&vm, j_max, &mut fft)
        .iter()
        .map(|p| p.to_grid(v.step, v.dropped_mass))
        .collect();
    Ok(BoundConstants {
        c_hat: c_hat_of(v, m, gamma),
        big_c_hat: minimal_bound_constant(&tables, m, gamma)?,
        gamma,
        j_max,
        grid_points: v.len(),
    })
}

/// As [`estimate_constants`], on the `V_j` of precomputed tables.
pub fn estimate_constants_from_tables(tables: &MeanTables, m: f64, gamma: f64) -> Result<BoundConstants> {
    let v = &tables.v[0];
    Ok(BoundConstants {
        c_hat: c_hat_of(v, m, gamma),
        big_c_hat: minimal_bound_constant(&tables.v, m, gamma)?,
        gamma,
        j_max: tables.j_max(),
        grid_points: v.len(),
    })
}

/// Smallest `C >= 1` with `|V_j - t^j/(j! m^j)| <= rhs(j, t, C)` on every
/// grid point of `tables[j - 1]`.
fn minimal_bound_constant(tables: &[GridFunction], m: f64, gamma: f64) -> Result<f64> {
    // (j, t, ln |V_j - leading|) for points violating the bound at C = 1
    let mut hard = Vec::new();
    for (ji, table) in tables.iter().enumerate() {
        let j = ji + 1;
        for (k, &x) in table.values.iter().enumerate() {
            let t = table.abscissa(k);
            let lead = if t > 0.0 { leading_term_log(j, m, t).exp() } else { 0.0 };
            let gap = (x - lead).abs();
            if gap == 0.0 {
                continue;
            }
            let lg = gap.ln();
            if lg > bound_rhs_log(j, t, 1.0, gamma, m) {
                hard.push((j, t, lg));
            }
        }
    }
    let holds = |c: f64| hard.iter().all(|&(j, t, lg)| lg <= bound_rhs_log(j, t, c, gamma, m));
    let big_c_hat = if hard.is_empty() {
        1.0
    } else {
        let (mut lo, mut hi) = (1.0f64, 2.0f64);
        while !holds(hi) {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::Overflow("no finite C satisfies the bound".into()));
            }
        }
        for _ in 0..60 {
            let mid = (lo * hi).sqrt();
            if holds(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi / lo < 1.0 + 1e-10 {
                break;
            }
        }
        hi
    };
    Ok(big_c_hat)
}

/// Closed forms for `V_j` where they exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExactMean {
    /// `xi = a`, `eta = b`: `V_j(t) = binom(floor((t - j b)/a) + j, j)` for `t >= j b`.
    Lattice { a: f64, b: f64 },
    /// Exponential `xi` and `eta` with a common rate: `V_j(t) = (rate t)^j / j!`.
    Exponential { rate: f64 },
}

impl ExactMean {
    pub fn for_model(model: &ModelSpec) -> Option<ExactMean> {
        let xi = model.xi_law();
        let eta = model.eta_law();
        match (xi, eta) {
            (Marginal::Deterministic { value: a }, Marginal::Deterministic { value: b }) => {
                Some(ExactMean::Lattice { a, b })
            }
            (Marginal::Deterministic { value: a }, Marginal::PowerOf { c, theta, .. }) => {
                Some(ExactMean::Lattice { a, b: c * a.powf(theta) })
            }
            (Marginal::Exponential { rate }, Marginal::Exponential { rate: r2 }) if rate == r2 => {
                Some(ExactMean::Exponential { rate })
            }
            (Marginal::Exponential { rate }, Marginal::PowerOf { c, theta, .. })
                if c == 1.0 && theta == 1.0 && matches!(model.dependence(), Dependence::Comonotone { .. }) =>
            {
                Some(ExactMean::Exponential { rate })
            }
            _ => None,
        }
    }

    pub fn eval(&self, j: usize, t: f64) -> f64 {
        if j == 0 {
            return 1.0;
        }
        match *self {
            ExactMean::Lattice { a, b } => {
                let rest = t - j as f64 * b;
                if rest < -1e-12 * t.abs().max(1.0) {
                    return 0.0;
                }
                let n = ((rest / a) + 1e-9).floor().max(0.0);
                (ln_binom_f(n + j as f64, j as f64)).exp().round()
            }
            ExactMean::Exponential { rate } => {
                if t <= 0.0 {
                    0.0
                } else {
                    (j as f64 * (rate * t).ln() - ln_gamma(j as f64 + 1.0)).exp()
                }
            }
        }
    }
}

fn ln_binom_f(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Picks a grid step near `target` that puts point masses and Pareto scale
/// parameters on the lattice.
fn aligned_step(model: &ModelSpec, target: f64) -> f64 {
    let anchors: Vec<f64> = [model.xi_law(), model.eta_law()]
        .iter()
        .filter_map(|law| match *law {
            Marginal::Deterministic { value } => Some(value),
            Marginal::Pareto { x_m, .. } => Some(x_m),
            Marginal::PowerOf {
                base: XiFamily::Deterministic { value },
                c,
                theta,
            } => Some(c * value.powf(theta)),
            _ => None,
        })
        .collect();
    let Some(&first) = anchors.first() else {
        return target;
    };
    let base = (first / target).ceil().max(1.0);
    for mult in 0..1000 {
        let h = first / (base + mult as f64);
        if anchors.iter().all(|&a| on_lattice(a, h)) {
            return h;
        }
    }
    first / base
}

/// Default grid step for a model and horizon.
pub fn default_step(model: &ModelSpec, t_max: f64) -> f64 {
    let scale = model.xi_law().scale().min(model.eta_law().scale());
    let target = (scale / 100.0).max(t_max / (1u64 << 20) as f64);
    aligned_step(model, target)
}

/// `U`, `V` and `V_1..V_{j_max}` on a common grid, plus the closed form when one exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanTables {
    pub step: f64,
    pub t_max: f64,
    pub u: GridFunction,
    pub v: Vec<GridFunction>,
    pub exact: Option<ExactMean>,
}

impl MeanTables {
    pub fn compute(model: &ModelSpec, h: Option<f64>, t_max: f64, j_max: usize) -> Result<MeanTables> {
        if j_max == 0 {
            return Err(Error::param("j_max", "must be at least 1"));
        }
        let h = match h {
            Some(h) => h,
            None => default_step(model, t_max),
        };
        let n = grid_len(h, t_max)?;
        let f = cdf_grid(&model.xi_law(), h, t_max + h)?;
        let g = cdf_grid(&model.eta_law(), h, t_max + h)?;
        let mut fft = Convolver::new();
        let xi = model.xi_law();
        let eta = model.eta_law();
        let fm = Measure::from_law(&xi, h, n).unwrap_or_else(|| Measure::from_grid(&f, n));
        let gm = Measure::from_law(&eta, h, n).unwrap_or_else(|| Measure::from_grid(&g, n));
        let um = renewal_measure(&fm, &mut fft);
        let vm = um.convolve(&gm, &mut fft);
        let v = powers(&vm, j_max, &mut fft)
            .iter()
            .map(|p| p.to_grid(h, g.dropped_mass))
            .collect();
        Ok(MeanTables {
            step: h,
            t_max: h * (n - 1) as f64,
            u: um.to_grid(h, f.dropped_mass),
            v,
            exact: ExactMean::for_model(model),
        })
    }

    pub fn j_max(&self) -> usize {
        self.v.len()
    }

    /// Numeric `V_j(t)`, with `V_0 = 1`.
    pub fn numeric(&self, j: usize, t: f64) -> Result<f64> {
        if j == 0 {
            return Ok(1.0);
        }
        let table = self.v.get(j - 1).ok_or_else(|| {
            Error::param("j", format!("tables hold j <= {}, got {j}", self.v.len()))
        })?;
        table.eval(t)
    }

    /// `V_j(t)`, from the closed form when available.
    pub fn eval(&self, j: usize, t: f64) -> Result<f64> {
        match self.exact {
            Some(e) => Ok(e.eval(j, t)),
            None => self.numeric(j, t),
        }
    }
}
