//! Seeded randomness with a fixed, documented sampling recipe.
//!
//! * Stream: ChaCha8 keyed by `seed_from_u64(seed)`.
//! * Uniform: the top 53 bits of one `next_u64`, scaled to `[0, 1)`.
//! * Normal: Box–Muller on two uniforms, using the cosine branch only, so each
//!   normal draw consumes exactly two `u64`s.
//!
//! The recipe is what makes generated datasets byte-identical for a given seed.

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct PcmRng {
    inner: ChaCha8Rng,
}

impl PcmRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a labelled sub-task.
    pub fn derived(seed: u64, labels: &[u64]) -> Self {
        Self::new(mix_seed(seed, labels))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// `N(mean, sd)` via Box–Muller.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        mean + sd * z
    }

    /// Uniform integer in `[0, bound)`; `bound` must be positive.
    pub fn below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        // Lemire's multiply-shift; the bias is below 2^-64 * bound.
        ((self.next_u64() as u128 * bound as u128) >> 64) as usize
    }
}

/// SplitMix64 finaliser folded over the labels.
pub fn mix_seed(seed: u64, labels: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for &l in labels {
        h = splitmix(h ^ splitmix(l.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
