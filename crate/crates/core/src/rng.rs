//! Seeded random streams and Gaussian sampling.
//!
//! Every consumer draws from a ChaCha8 stream keyed by `(seed, stream id)`,
//! so results do not depend on the order in which streams are used.
//! Gaussians use the Box–Muller transform (both outputs are consumed).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Derives an independent 64-bit seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal sampler using Box–Muller.
#[derive(Debug, Default, Clone)]
pub struct Gaussian {
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sample<R: Rng>(&mut self, rng: &mut R) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
