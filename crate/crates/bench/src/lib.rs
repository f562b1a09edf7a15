//! Fixtures shared by the benchmarks in `benches/`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scaleshape::instances::random_instance;
use scaleshape::{gen_ueg, LogWeights, ProblemData, UegSpec};

/// Exponent arguments spread over a wide range, with a uniform prior.
pub fn exponent_vector(n: usize, seed: u64) -> (Vec<f64>, LogWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = (0..n).map(|_| rng.random_range(-800.0..800.0)).collect();
    let r = LogWeights::from_weights(&vec![1.0; n]).expect("positive weights");
    (u, r)
}

pub fn small_random(seed: u64) -> ProblemData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_instance(&mut rng, 5, 8, (1e-2, 1.0))
}

pub fn ueg(m: usize, n: usize, scale_z: f64) -> ProblemData {
    gen_ueg(&UegSpec { m, n, ..UegSpec::default().with_scale(scale_z) }).expect("valid spec").problem
}

/// A dual point with a moderate, nonzero `y`.
pub fn dual_y(m: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(m, |_, _| rng.random_range(-0.5..0.5))
}
