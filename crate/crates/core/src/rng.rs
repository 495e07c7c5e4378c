//! Seeded RNG helpers shared across training and sampling code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The repo-wide deterministic RNG.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed, for parallel-safe
/// per-item randomness.
pub fn rng_for_stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One standard-normal draw via Box-Muller.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    // u in (0,1] avoids ln(0).
    let u: f64 = 1.0 - rng.random::<f64>();
    let v: f64 = rng.random::<f64>();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

pub fn standard_normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments() {
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        // 3 standard errors
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn streams_are_independent_but_deterministic() {
        let a: Vec<f64> = {
            let mut r = rng_for_stream(5, 1);
            (0..4).map(|_| r.random()).collect()
        };
        let a2: Vec<f64> = {
            let mut r = rng_for_stream(5, 1);
            (0..4).map(|_| r.random()).collect()
        };
        let b: Vec<f64> = {
            let mut r = rng_for_stream(5, 2);
            (0..4).map(|_| r.random()).collect()
        };
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }
}
