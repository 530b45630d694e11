//! Counter-based random streams.
//!
//! A [`Stream`] is a 64-bit base plus a counter; draw `n` is a SplitMix64
//! finalizer applied to `base + (n + 1) * GOLDEN`. Streams are therefore
//! addressable: the `n`-th draw never depends on how earlier draws were
//! consumed, and child streams are obtained by hashing `(base, ordinal)`.

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::models::{Dependence, ModelSpec};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const ROLE_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const CHILD_SALT: u64 = 0x8CB9_2BA7_2F3D_8DD7;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Tree,
    LimitPath,
    Aux,
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Tree => 1,
            Role::LimitPath => 2,
            Role::Aux => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub replica_id: u64,
    pub role: Role,
}

impl StreamKey {
    pub fn new(seed: u64, replica_id: u64, role: Role) -> Self {
        StreamKey { seed, replica_id, role }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    base: u64,
    counter: u64,
}

pub fn stream_for(key: StreamKey) -> Stream {
    let a = mix64(key.seed ^ GOLDEN);
    let b = mix64(a ^ key.replica_id.wrapping_mul(GOLDEN).wrapping_add(1));
    let base = mix64(b ^ key.role.tag().wrapping_mul(ROLE_SALT));
    Stream::from_base(base)
}

impl Stream {
    #[inline]
    pub fn from_base(base: u64) -> Self {
        Stream { base, counter: 0 }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Base of the `ordinal`-th child stream; independent of this stream's position.
    #[inline]
    pub fn child_base(&self, ordinal: u64) -> u64 {
        mix64(self.base ^ mix64(ordinal.wrapping_add(CHILD_SALT)))
    }

    #[inline]
    pub fn child(&self, ordinal: u64) -> Stream {
        Stream::from_base(self.child_base(ordinal))
    }

    /// Moves the counter forward without producing output.
    #[inline]
    pub fn skip(&mut self, n: u64) {
        self.counter = self.counter.wrapping_add(n);
    }

    #[inline]
    pub fn next_raw(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.base.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on the open interval `(0, 1)`: the midpoints of a 2^-52 grid,
    /// so the smallest value is 2^-53 and the largest `1 - 2^-53`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_raw() >> 12) as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0)
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        (self.next_raw() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_raw()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_raw().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

pub fn sample_uniform(s: &mut Stream) -> f64 {
    s.uniform()
}

/// One draw of `(xi, eta)`. Always consumes exactly two counter slots:
/// the first uniform drives `xi`, the second drives an independent `eta`.
#[inline]
pub fn sample_pair(model: &ModelSpec, s: &mut Stream) -> (f64, f64) {
    let xi = model.xi_law().quantile(s.uniform());
    let u_eta = s.uniform();
    let eta = match model.dependence() {
        Dependence::Independent => model.eta_law().quantile(u_eta),
        Dependence::Comonotone { theta, c } => c * xi.powf(theta),
        Dependence::Equal => xi,
    };
    (xi, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_model, EtaFamily, Marginal, XiFamily};
    use approx::assert_relative_eq;

    fn draws(key: StreamKey) -> Vec<u64> {
        let mut s = stream_for(key);
        (0..1000).map(|_| s.next_raw()).collect()
    }

    #[test]
    fn same_key_same_sequence() {
        let k = StreamKey::new(7, 3, Role::Tree);
        assert_eq!(draws(k), draws(k));
    }

    #[test]
    fn replica_and_role_change_sequence() {
        let a = draws(StreamKey::new(7, 3, Role::Tree));
        let b = draws(StreamKey::new(7, 4, Role::Tree));
        let c = draws(StreamKey::new(7, 3, Role::LimitPath));
        assert!(a.iter().zip(&b).all(|(x, y)| x != y));
        assert!(a.iter().zip(&c).all(|(x, y)| x != y));
    }

    #[test]
    fn uniform_range_and_mean() {
        let mut s = stream_for(StreamKey::new(1, 0, Role::Aux));
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = s.uniform();
            assert!(u > 0.0 && u < 1.0);
            sum += u;
        }
        // 4 sd of the mean of n uniforms
        assert!((sum / n as f64 - 0.5).abs() <= 0.002);
        let mut again = stream_for(StreamKey::new(1, 0, Role::Aux));
        let mut first = stream_for(StreamKey::new(1, 0, Role::Aux));
        assert_eq!(again.uniform(), first.uniform());
    }

    #[test]
    fn uniform_extremes_are_open() {
        let lo = (0.5f64) * (1.0 / 4_503_599_627_370_496.0);
        let hi = ((u64::MAX >> 12) as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0);
        assert!(lo > 0.0);
        assert!(hi < 1.0);
        assert_eq!(hi, crate::models::UNIFORM_MAX);
    }

    #[test]
    fn inverse_cdf_values() {
        let pareto = Marginal::Pareto { alpha: 1.5, x_m: 1.0 };
        assert_relative_eq!(pareto.quantile(0.875), 4.0, max_relative = 1e-12);
        let exp = Marginal::Exponential { rate: 1.0 };
        assert_relative_eq!(exp.quantile(0.5), std::f64::consts::LN_2, max_relative = 1e-12);
    }

    #[test]
    fn deterministic_pair() {
        let m = make_model(
            XiFamily::Deterministic { value: 1.0 },
            EtaFamily::Deterministic { value: 1.0 },
            Dependence::Independent,
            None,
        )
        .unwrap();
        let mut s = stream_for(StreamKey::new(0, 0, Role::Tree));
        assert_eq!(sample_pair(&m, &mut s), (1.0, 1.0));
        assert_eq!(s.position(), 2);
    }

    #[test]
    fn comonotone_is_functional() {
        let m = make_model(
            XiFamily::Pareto { alpha: 1.5, x_m: 1.0 },
            EtaFamily::Exponential { rate: 1.0 },
            Dependence::Comonotone { theta: 0.5, c: 2.0 },
            None,
        )
        .unwrap();
        let mut s = stream_for(StreamKey::new(5, 1, Role::Tree));
        for _ in 0..10_000 {
            let (xi, eta) = sample_pair(&m, &mut s);
            // black_box keeps a constant exponent from being lowered to sqrt
            assert_eq!(eta.to_bits(), (2.0 * xi.powf(std::hint::black_box(0.5))).to_bits());
        }
    }

    #[test]
    fn child_streams_are_distinct() {
        let s = stream_for(StreamKey::new(9, 0, Role::Tree));
        let mut a = s.child(1);
        let mut b = s.child(2);
        let mut c = s.child(1);
        let xa: Vec<u64> = (0..100).map(|_| a.next_raw()).collect();
        let xb: Vec<u64> = (0..100).map(|_| b.next_raw()).collect();
        let xc: Vec<u64> = (0..100).map(|_| c.next_raw()).collect();
        assert_eq!(xa, xc);
        assert!(xa.iter().zip(&xb).all(|(x, y)| x != y));
    }

    fn models() -> Vec<ModelSpec> {
        let exp1 = EtaFamily::Exponential { rate: 1.0 };
        vec![
            make_model(XiFamily::Pareto { alpha: 1.5, x_m: 1.0 }, exp1, Dependence::Independent, None).unwrap(),
            make_model(XiFamily::ParetoAlpha2 { x_m: 0.5 }, EtaFamily::Pareto { alpha: 0.8, x_m: 1.0 }, Dependence::Independent, None)
                .unwrap(),
            make_model(XiFamily::Exponential { rate: 2.0 }, exp1, Dependence::Equal, None).unwrap(),
            make_model(XiFamily::Pareto { alpha: 1.8, x_m: 3.0 }, exp1, Dependence::Comonotone { theta: 0.5, c: 1.0 }, None)
                .unwrap(),
        ]
    }

    #[test]
    fn pairs_are_positive() {
        for (i, m) in models().iter().enumerate() {
            let mut s = stream_for(StreamKey::new(11, i as u64, Role::Aux));
            for _ in 0..1_000_000 {
                let (xi, eta) = sample_pair(m, &mut s);
                assert!(xi > 0.0 && eta > 0.0);
            }
        }
    }

    #[test]
    fn inverse_cdf_passes_ks() {
        let laws = [
            Marginal::Pareto { alpha: 1.5, x_m: 1.0 },
            Marginal::Pareto { alpha: 2.0, x_m: 0.5 },
            Marginal::Exponential { rate: 3.0 },
        ];
        for (i, law) in laws.iter().enumerate() {
            let mut s = stream_for(StreamKey::new(12, i as u64, Role::Aux));
            let x: Vec<f64> = (0..100_000).map(|_| law.quantile(s.uniform())).collect();
            let r = crate::experiments::stats::ks_one_sample(&x, |v| law.cdf(v)).unwrap();
            assert!(r.p >= 1e-3, "{law:?}: {r:?}");
        }
    }

    #[test]
    fn sample_means_approach_m() {
        let mut s = stream_for(StreamKey::new(13, 0, Role::Aux));
        let exp = make_model(
            XiFamily::Exponential { rate: 0.5 },
            EtaFamily::Exponential { rate: 1.0 },
            Dependence::Independent,
            None,
        )
        .unwrap();
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| sample_pair(&exp, &mut s).0).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - exp.mean()).abs() <= 4.0 * sd / (n as f64).sqrt());
        for alpha in [1.5, 1.8] {
            let m = make_model(
                XiFamily::Pareto { alpha, x_m: 1.0 },
                EtaFamily::Exponential { rate: 1.0 },
                Dependence::Independent,
                None,
            )
            .unwrap();
            let n = 1_000_000;
            let mean = (0..n).map(|_| sample_pair(&m, &mut s).0).sum::<f64>() / n as f64;
            assert!((mean / m.mean() - 1.0).abs() <= 0.1, "alpha {alpha}: {mean}");
        }
    }

    proptest::proptest! {
        #[test]
        fn skip_matches_drawing(seed: u64, replica in 0u64..1000, n in 0u64..500) {
            let mut a = stream_for(StreamKey::new(seed, replica, Role::Tree));
            let mut b = a.clone();
            for _ in 0..n {
                a.next_raw();
            }
            b.skip(n);
            proptest::prop_assert_eq!(a.next_raw(), b.next_raw());
            proptest::prop_assert_eq!(a.position(), b.position());
        }

        #[test]
        fn children_are_pure(seed: u64, ordinal: u64) {
            let s = stream_for(StreamKey::new(seed, 0, Role::Tree));
            let mut c1 = s.child(ordinal);
            let mut c2 = Stream::from_base(s.child_base(ordinal));
            proptest::prop_assert_eq!(c1.next_raw(), c2.next_raw());
        }
    }
}
