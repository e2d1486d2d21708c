//! Seeded randomness helpers.
//!
//! Every stochastic operation in this crate takes an explicit seed and draws
//! from a ChaCha12 stream, so results are reproducible bit-for-bit across runs
//! and platforms for a fixed crate version.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::geometry::Point3;

/// Deterministic generator for a 64-bit seed.
pub fn seeded(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// One standard normal draw.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `n` i.i.d. standard normal 3-vectors, drawn in index order (x, y, z per point).
pub fn normal_vectors<R: Rng>(rng: &mut R, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            let x = standard_normal(rng);
            let y = standard_normal(rng);
            let z = standard_normal(rng);
            Point3::new(x, y, z)
        })
        .collect()
}
