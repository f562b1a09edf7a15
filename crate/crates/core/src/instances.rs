//! Small random instances shared by the test suites and benches.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::problem::ProblemData;
use crate::scalar::LogWeights;

/// Dense instance with a planted positive solution: entries of `A` in
/// `[-1, 1]`, `b = A x₀ + e` with `x₀` in `[0.1, 1]·s` for a log-uniform
/// scale `s ∈ [0.2, 5]` and `e` in `[-0.1, 0.1]`, `c` in `[-0.5, 0.5]`,
/// log-prior in `[-3, 0]`, and `λ` log-uniform in `lambda_range`.
///
/// Planting keeps `b` near the cone spanned by the columns. An arbitrary `b`
/// far outside it drives the optimal mass toward `exp(−O(1/λ))`, below the
/// range of `f64` for small `λ`.
pub fn random_instance<R: Rng>(rng: &mut R, m: usize, n: usize, lambda_range: (f64, f64)) -> ProblemData {
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let scale = rng.random_range(0.2f64.ln()..5.0f64.ln()).exp();
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0) * scale);
    let b = &a * x0 + DVector::from_fn(m, |_, _| rng.random_range(-0.1..0.1));
    let c = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let r = LogWeights::new((0..n).map(|_| rng.random_range(-3.0..0.0)).collect()).expect("finite log-weights");
    let (lo, hi) = lambda_range;
    let lambda = if lo < hi { (rng.random_range(lo.ln()..hi.ln())).exp() } else { lo };
    ProblemData::new(a, b, c, r, lambda).expect("random instance is valid")
}
