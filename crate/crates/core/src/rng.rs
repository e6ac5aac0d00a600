//! Seeded, splittable random streams.
//!
//! A run seed feeds `ChaCha20Rng::seed_from_u64`; each named component
//! (reference features, noise, projections, ...) draws from its own
//! ChaCha stream selected by the FNV-1a hash of the component label. Adding
//! draws to one component never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub const RNG_ALGORITHM: &str =
    "chacha20 (rand_chacha 0.9, seed_from_u64); stream = fnv1a64(label); normals = rand_distr StandardNormal";

fn fnv1a64(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, label: &str) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a64(label));
        rng
    }
}

pub fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}
