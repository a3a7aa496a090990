use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimTime;
use crate::error::{Result, SimError};

/// Entity-scoped label for an RNG stream: a static kind plus an index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub kind: &'static str,
    pub index: u64,
}

impl StreamId {
    pub const fn new(kind: &'static str, index: u64) -> Self {
        StreamId { kind, index }
    }

    /// Stable 64-bit word used as the ChaCha stream selector.
    fn word(&self) -> u64 {
        // FNV-1a over the kind, then mix in the index.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.kind.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        splitmix64(h ^ splitmix64(self.index))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent, reproducible random stream derived from a master seed.
///
/// All streams share the master key and differ in the ChaCha stream
/// selector, so adding a stream never shifts another stream's draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(id.word());
        RngStream { rng }
    }

    /// Uniform on `(0, 1]`.
    pub fn unit_open_low(&mut self) -> f64 {
        1.0 - self.rng.gen::<f64>()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn uniform_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        self.rng.gen_range(lo..=hi)
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// `k` distinct indices drawn uniformly from `[0, n)`, sorted ascending.
    pub fn distinct_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut v = rand::seq::index::sample(&mut self.rng, n, k).into_vec();
        v.sort_unstable();
        v
    }

    pub fn exponential_secs(&mut self, rate: f64) -> Result<f64> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(SimError::config("rate", format!("must be > 0, got {rate}")));
        }
        Ok(-self.unit_open_low().ln() / rate)
    }

    /// Exponential sample with the given rate (1/seconds), rounded to the clock resolution.
    pub fn draw_exponential(&mut self, rate: f64) -> Result<SimTime> {
        self.exponential_secs(rate).map(SimTime::from_secs_f64)
    }

    /// Pareto sample by inverse CDF.
    pub fn draw_pareto(&mut self, xm: f64, alpha: f64) -> Result<f64> {
        check_pareto(xm, alpha)?;
        let u = self.unit_open_low();
        Ok(pareto_quantile(u, xm, alpha))
    }
}

fn check_pareto(xm: f64, alpha: f64) -> Result<()> {
    if !(xm > 0.0) || !xm.is_finite() {
        return Err(SimError::config("xm", format!("must be > 0, got {xm}")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(SimError::config(
            "alpha",
            format!("must be > 0, got {alpha}"),
        ));
    }
    Ok(())
}

/// `xm * u^(-1/alpha)`; `u` is the survival probability, so `u = 1` gives `xm`.
pub fn pareto_quantile(u: f64, xm: f64, alpha: f64) -> f64 {
    if u >= 1.0 {
        return xm;
    }
    xm * u.powf(-1.0 / alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
    fn ks_statistic(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                let lo = f - i as f64 / n;
                let hi = (i as f64 + 1.0) / n - f;
                lo.max(hi)
            })
            .fold(0.0, f64::max)
    }

    // Asymptotic critical value at significance 0.01.
    fn ks_critical_001(n: usize) -> f64 {
        1.628 / (n as f64).sqrt()
    }

    fn stream(seed: u64) -> RngStream {
        RngStream::new(seed, StreamId::new("test", 0))
    }

    #[test]
    fn exponential_mean_converges() {
        let mut s = stream(1);
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|_| s.exponential_secs(1.0).unwrap()).sum();
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn exponential_is_non_negative_and_validates_rate() {
        let mut s = stream(2);
        assert!((0..10_000).all(|_| s.draw_exponential(1.0).unwrap() >= SimTime::ZERO));
        assert!(s.draw_exponential(0.0).is_err());
        assert!(s.draw_exponential(-1.0).is_err());
        assert!(s.draw_exponential(f64::NAN).is_err());
    }

    #[test]
    fn same_seed_and_stream_reproduce() {
        let a: Vec<_> = {
            let mut s = stream(42);
            (0..1000).map(|_| s.draw_exponential(2.0).unwrap()).collect()
        };
        let b: Vec<_> = {
            let mut s = stream(42);
            (0..1000).map(|_| s.draw_exponential(2.0).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, StreamId::new("arrivals", 0));
        let mut b = RngStream::new(42, StreamId::new("arrivals", 1));
        let mut c = RngStream::new(42, StreamId::new("payload", 0));
        let xa: Vec<f64> = (0..8).map(|_| a.unit_open_low()).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.unit_open_low()).collect();
        let xc: Vec<f64> = (0..8).map(|_| c.unit_open_low()).collect();
        assert_ne!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn exponential_passes_ks() {
        let mut s = stream(3);
        let xs: Vec<f64> = (0..10_000).map(|_| s.exponential_secs(2.0).unwrap()).collect();
        let d = ks_statistic(xs, |x| 1.0 - (-2.0 * x).exp());
        assert!(d < ks_critical_001(10_000), "D = {d}");
    }

    #[test]
    fn pareto_respects_scale_and_boundary() {
        let mut s = stream(4);
        assert!((0..100_000).all(|_| s.draw_pareto(931.0, 1.1).unwrap() >= 931.0));
        assert_eq!(pareto_quantile(1.0, 931.0, 1.1), 931.0);
        assert!(s.draw_pareto(0.0, 1.1).is_err());
        assert!(s.draw_pareto(931.0, -1.0).is_err());
    }

    #[test]
    fn pareto_passes_ks() {
        let mut s = stream(5);
        let (xm, a) = (9532.0, 1.1);
        let xs: Vec<f64> = (0..10_000).map(|_| s.draw_pareto(xm, a).unwrap()).collect();
        let d = ks_statistic(xs, |x| 1.0 - (xm / x).powf(a));
        assert!(d < ks_critical_001(10_000), "D = {d}");
    }

    #[test]
    fn truncated_pareto_mean_matches_closed_form() {
        // Raw alpha = 1.1 has infinite variance, so compare E[min(X, c)].
        let mut s = stream(6);
        let (xm, a, cap) = (47663.0_f64, 1.1_f64, 1.0e7_f64);
        let n = 1_000_000;
        let sum: f64 = (0..n)
            .map(|_| s.draw_pareto(xm, a).unwrap().min(cap))
            .sum();
        let mean = sum / n as f64;
        let analytic = xm + xm / (a - 1.0) * (1.0 - (xm / cap).powf(a - 1.0));
        assert!((mean / analytic - 1.0).abs() < 0.02, "mean {mean} vs {analytic}");
    }
}
