//! Seeded, named random substreams.
//!
//! Every stochastic entity (a device clock, a sensor generator, a channel
//! selector, a gateway's capture sampler) draws from its own ChaCha stream.
//! The stream number is a hash of the entity name, so adding an entity never
//! perturbs the draws of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::time::SimDuration;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct RandomStreams {
    seed: u64,
}

impl RandomStreams {
    pub fn new(seed: u64) -> Self {
        RandomStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derives the seed of replication `index` from a base seed (splitmix64).
pub fn replication_seed(base: u64, index: u64) -> u64 {
    if index == 0 {
        return base;
    }
    let mut z = base.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One draw from N(mean, sigma) in seconds. `sigma == 0` returns `mean` exactly.
pub fn gaussian_secs<R: rand::Rng + ?Sized>(rng: &mut R, mean: f64, sigma: f64) -> f64 {
    assert!(sigma >= 0.0, "negative sigma");
    if sigma == 0.0 {
        return mean;
    }
    Normal::new(mean, sigma).expect("finite sigma").sample(rng)
}

/// Gaussian duration draw, clamped below at `floor`.
pub fn sample_gaussian<R: rand::Rng + ?Sized>(
    rng: &mut R,
    mean: SimDuration,
    sigma: SimDuration,
    floor: SimDuration,
) -> SimDuration {
    if sigma == SimDuration::ZERO {
        return mean.max(floor);
    }
    let s = gaussian_secs(rng, mean.as_secs_f64(), sigma.as_secs_f64());
    SimDuration::from_secs_f64(s).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_name_same_sequence() {
        let s = RandomStreams::new(7);
        let (mut a, mut b) = (s.stream("ed1"), s.stream("ed1"));
        for _ in 0..8 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn substreams_differ() {
        let s = RandomStreams::new(7);
        let mut a = s.stream("ed1");
        let mut b = s.stream("ed2");
        let xa: Vec<u64> = (0..4).map(|_| a.random()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.random()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn zero_sigma_is_degenerate() {
        let mut r = RandomStreams::new(1).stream("x");
        let d = sample_gaussian(&mut r, SimDuration::from_secs(70), SimDuration::ZERO, SimDuration::from_secs(1));
        assert_eq!(d, SimDuration::from_secs(70));
    }

    #[test]
    fn floor_clamps_negative_tail() {
        let mut r = RandomStreams::new(1).stream("x");
        for _ in 0..100 {
            let d = sample_gaussian(
                &mut r,
                SimDuration::from_millis(10),
                SimDuration::from_secs(5),
                SimDuration::from_secs(1),
            );
            assert!(d >= SimDuration::from_secs(1));
        }
    }

    #[test]
    fn gaussian_mean_converges() {
        // 10^6 draws of N(70 s, 50 ms): the sample mean must sit within 5 sigma/sqrt(n).
        let mut r = RandomStreams::new(2024).stream("clock");
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|_| gaussian_secs(&mut r, 70.0, 0.05)).sum();
        let mean = sum / n as f64;
        assert!((mean - 70.0).abs() < 5.0 * 0.05 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn interarrivals_are_uncorrelated_at_lag_one() {
        let mut r = RandomStreams::new(99).stream("clock");
        let xs: Vec<f64> = (0..100_000).map(|_| gaussian_secs(&mut r, 70.0, 0.05)).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
        let cov: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        assert!((cov / var).abs() < 0.01, "lag-1 autocorrelation {}", cov / var);
    }

    #[test]
    fn replication_zero_keeps_base_seed() {
        assert_eq!(replication_seed(42, 0), 42);
        assert_ne!(replication_seed(42, 1), replication_seed(42, 2));
    }
}
