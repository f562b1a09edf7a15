//! Overflow-proof scalar kernels: principal-branch Lambert W and the weighted
//! log-sum-exp / softmax pair evaluated from log-weights.
//!
//! Every exponential taken by [`lse_softmax_w`] is fed through a process-wide
//! audit so callers can confirm after the fact that no positive argument was
//! ever exponentiated.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Above this input the direct Halley form would need `e^w` near the top of
/// the double range, so the log form `w + ln w = ln x` is used instead.
const LOG_FORM_THRESHOLD: f64 = 1e100;

/// Log-weights `r = log q` of a strictly positive prior.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeights(Vec<f64>);

impl LogWeights {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if r.is_empty() {
            return Err(Error::validation("r", "log-weights must be non-empty"));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation("r", format!("entry {j} is not finite ({})", r[j])));
        }
        Ok(LogWeights(r))
    }

    /// Log-weights of the unnormalized all-ones prior.
    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(vec![0.0; n])
    }

    pub fn from_weights(q: &[f64]) -> Result<Self> {
        if let Some(j) = q.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::validation("q", format!("entry {j} must be positive and finite, got {}", q[j])));
        }
        Self::new(q.iter().map(|v| v.ln()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// The prior `q = exp(r)`; tiny entries may underflow.
    pub fn weights(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.exp()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentAudit {
    pub evaluations: u64,
    pub positive_arguments: u64,
    pub largest_argument: f64,
}

static EVALUATIONS: AtomicU64 = AtomicU64::new(0);
static POSITIVE_ARGUMENTS: AtomicU64 = AtomicU64::new(0);
static LARGEST_ARGUMENT: AtomicU64 = AtomicU64::new(0xfff0_0000_0000_0000); // -inf

/// Totals accumulated by every log-domain evaluation in this process.
pub fn exponent_audit() -> ExponentAudit {
    ExponentAudit {
        evaluations: EVALUATIONS.load(Ordering::Relaxed),
        positive_arguments: POSITIVE_ARGUMENTS.load(Ordering::Relaxed),
        largest_argument: f64::from_bits(LARGEST_ARGUMENT.load(Ordering::Relaxed)),
    }
}

fn record_exponents(largest: f64, positives: u64) {
    EVALUATIONS.fetch_add(1, Ordering::Relaxed);
    if positives > 0 {
        POSITIVE_ARGUMENTS.fetch_add(positives, Ordering::Relaxed);
    }
    let _ = LARGEST_ARGUMENT.fetch_update(Ordering::Relaxed, Ordering::Relaxed, |bits| {
        (largest > f64::from_bits(bits)).then(|| largest.to_bits())
    });
}

/// Principal branch of `w e^w = x` on `[0, ∞)`.
pub fn lambert_w(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::domain(format!("Lambert W needs a finite non-negative argument, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x > LOG_FORM_THRESHOLD {
        return Ok(lambert_w_log_form(x.ln()));
    }
    let mut w = x.ln_1p();
    for _ in 0..8 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        if !step.is_finite() {
            break;
        }
        w -= step;
        if step.abs() <= f64::EPSILON * w {
            break;
        }
    }
    Ok(w)
}

/// `W(e^t)` for any real `t`, without forming `e^t` when it would overflow.
pub fn lambert_w_exp(t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return f64::INFINITY;
    }
    if t < LOG_FORM_THRESHOLD.ln() {
        // e^t is representable (or underflows to W(0) = 0).
        lambert_w(t.exp()).unwrap_or(0.0)
    } else {
        lambert_w_log_form(t)
    }
}

/// Halley iteration on `w + ln w = t`, valid for large `t`.
fn lambert_w_log_form(t: f64) -> f64 {
    let mut w = t - t.ln();
    for _ in 0..8 {
        let g = w + w.ln() - t;
        let g1 = 1.0 + 1.0 / w;
        let g2 = -1.0 / (w * w);
        let step = g / (g1 - 0.5 * g * g2 / g1);
        w -= step;
        if step.abs() <= f64::EPSILON * w {
            break;
        }
    }
    w
}

/// Weighted log-sum-exp together with its gradient (the weighted softmax).
#[derive(Debug, Clone)]
pub struct WeightedSoftmax {
    /// `log Σ_j exp(r_j + u_j)`.
    pub logsumexp: f64,
    /// `p_j = exp(r_j + u_j - logsumexp)`.
    pub p: Vec<f64>,
    /// Largest argument handed to `exp`; at most zero by construction.
    pub max_exponent: f64,
}

/// Evaluates the weighted log-sum-exp and softmax in one max-shifted pass.
///
/// Entries of `u` equal to `-inf` are excluded terms with zero weight.
pub fn lse_softmax_w(u: &[f64], r: &LogWeights) -> Result<WeightedSoftmax> {
    let r = r.as_slice();
    if u.len() != r.len() {
        return Err(Error::Contract(format!(
            "argument has length {} but log-weights have length {}",
            u.len(),
            r.len()
        )));
    }
    let mut shift = f64::NEG_INFINITY;
    for (&uj, &rj) in u.iter().zip(r) {
        if uj.is_nan() || uj == f64::INFINITY {
            return Err(Error::domain(format!("log-sum-exp argument {uj} is not admissible")));
        }
        shift = shift.max(rj + uj);
    }
    if shift == f64::NEG_INFINITY {
        return Err(Error::domain("every log-sum-exp term is excluded"));
    }

    let mut p = Vec::with_capacity(u.len());
    let mut largest = f64::NEG_INFINITY;
    let mut positives = 0u64;
    let mut sum = 0.0;
    for (&uj, &rj) in u.iter().zip(r) {
        let arg = (rj + uj) - shift;
        largest = largest.max(arg);
        if arg > 0.0 {
            positives += 1;
        }
        let e = arg.exp();
        sum += e;
        p.push(e);
    }
    record_exponents(largest, positives);

    let inv = 1.0 / sum;
    for pj in &mut p {
        *pj *= inv;
    }
    Ok(WeightedSoftmax { logsumexp: shift + sum.ln(), p, max_exponent: largest })
}

/// `log Σ_j exp(r_j + u_j)`.
pub fn logsumexp_w(u: &[f64], r: &LogWeights) -> Result<f64> {
    lse_softmax_w(u, r).map(|s| s.logsumexp)
}

/// Gradient of [`logsumexp_w`] with respect to `u`.
pub fn softmax_w(u: &[f64], r: &LogWeights) -> Result<Vec<f64>> {
    lse_softmax_w(u, r).map(|s| s.p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bisect_w(x: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, x.max(1.0));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    // Double-double accumulation (Knuth two-sum) as the extended-precision
    // reference for the sum of exponentials.
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn dd_sum(terms: &[f64]) -> (f64, f64) {
        let (mut hi, mut lo) = (0.0, 0.0);
        for &t in terms {
            let (s, e) = two_sum(hi, t);
            hi = s;
            lo += e;
        }
        two_sum(hi, lo)
    }

    fn extended_lse(u: &[f64], r: &[f64]) -> f64 {
        let terms: Vec<f64> = u.iter().zip(r).map(|(a, b)| (a + b).exp()).collect();
        let (hi, lo) = dd_sum(&terms);
        hi.ln() + (lo / hi).ln_1p()
    }

    #[test]
    fn lambert_w_trivial_points() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert!((lambert_w(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lambert_w_matches_bisection_at_ten() {
        let w = lambert_w(10.0).unwrap();
        assert!((w - bisect_w(10.0)).abs() < 1e-14);
    }

    #[test]
    fn lambert_w_rejects_bad_input() {
        assert!(lambert_w(-1e-300).is_err());
        assert!(lambert_w(f64::NAN).is_err());
        assert!(lambert_w(f64::INFINITY).is_err());
    }

    #[test]
    fn lambert_w_residual_on_grid() {
        for i in 0..=7000 {
            let x = i as f64 * 0.1;
            let w = lambert_w(x).unwrap();
            let res = (w * w.exp() - x).abs();
            assert!(res <= 4.0 * f64::EPSILON * x.max(1.0) * (1.0 + w), "x={x} res={res}");
        }
    }

    #[test]
    fn lambert_w_large_and_exp_forms_agree() {
        for &t in &[-800.0, -5.0, 0.0, 3.0, 200.0, 230.0, 231.0, 700.0, 1e4, 1e8] {
            let w = lambert_w_exp(t);
            if t < -700.0 {
                assert!(w < 1e-300);
                continue;
            }
            // w + ln w = t characterizes W(e^t) for w > 0.
            assert!((w + w.ln() - t).abs() <= 1e-13 * t.abs().max(1.0), "t={t}");
        }
        let w = lambert_w(1e200).unwrap();
        assert!((w + w.ln() - 1e200_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lse_uniform_and_large_arguments() {
        let r = LogWeights::zeros(6).unwrap();
        assert!((logsumexp_w(&[0.0; 6], &r).unwrap() - 6f64.ln()).abs() < 1e-15);
        let r2 = LogWeights::zeros(2).unwrap();
        let v = logsumexp_w(&[1000.0, 1000.0], &r2).unwrap();
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn softmax_trivial_cases() {
        let r = LogWeights::zeros(4).unwrap();
        for p in softmax_w(&[0.0; 4], &r).unwrap() {
            assert_eq!(p, 0.25);
        }
        let r2 = LogWeights::zeros(2).unwrap();
        let p = softmax_w(&[1000.0, 0.0], &r2).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1e-300);
    }

    #[test]
    fn excluded_terms_and_errors() {
        let r = LogWeights::zeros(3).unwrap();
        let s = lse_softmax_w(&[0.0, f64::NEG_INFINITY, 0.0], &r).unwrap();
        assert!((s.logsumexp - 2f64.ln()).abs() < 1e-15);
        assert_eq!(s.p[1], 0.0);
        assert!(lse_softmax_w(&[f64::NEG_INFINITY; 3], &r).is_err());
        assert!(lse_softmax_w(&[0.0; 2], &r).is_err());
        assert!(lse_softmax_w(&[f64::NAN, 0.0, 0.0], &r).is_err());
    }

    #[test]
    fn random_cases_match_extended_precision() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let u: Vec<f64> = (0..5).map(|_| rng.random_range(-20.0..20.0)).collect();
            let r: Vec<f64> = (0..5).map(|_| rng.random_range(-20.0..0.0)).collect();
            let lw = LogWeights::new(r.clone()).unwrap();
            let got = lse_softmax_w(&u, &lw).unwrap();
            let want = extended_lse(&u, &r);
            assert!((got.logsumexp - want).abs() <= 1e-14 * want.abs().max(1.0));
            let terms: Vec<f64> = u.iter().zip(&r).map(|(a, b)| (a + b).exp()).collect();
            let (hi, lo) = dd_sum(&terms);
            for (pj, tj) in got.p.iter().zip(&terms) {
                let want_p = tj / hi * (1.0 - lo / hi);
                assert!((pj - want_p).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn log_weight_construction() {
        assert!(LogWeights::new(vec![]).is_err());
        assert!(LogWeights::new(vec![0.0, f64::NEG_INFINITY]).is_err());
        assert!(LogWeights::from_weights(&[1.0, 0.0]).is_err());
        let lw = LogWeights::from_weights(&[1.0, std::f64::consts::E]).unwrap();
        assert!((lw.as_slice()[1] - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn lambert_w_is_monotone(a in 0.0f64..700.0, b in 0.0f64..700.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(lambert_w(lo).unwrap() <= lambert_w(hi).unwrap());
        }

        #[test]
        fn lambert_w_residual_bound(x in 0.0f64..700.0) {
            let w = lambert_w(x).unwrap();
            prop_assert!((w * w.exp() - x).abs() <= 4.0 * f64::EPSILON * x.max(1.0) * (1.0 + w));
        }

        #[test]
        fn softmax_sums_to_one_and_never_exponentiates_positive(
            u in proptest::collection::vec(-800.0f64..800.0, 1..12),
            seed in 0u64..1000,
        ) {
            let r: Vec<f64> = (0..u.len()).map(|j| -(((j as u64 * 31 + seed) % 17) as f64)).collect();
            let s = lse_softmax_w(&u, &LogWeights::new(r).unwrap()).unwrap();
            let total: f64 = s.p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(s.max_exponent <= 0.0);
        }

        #[test]
        fn shift_invariance(
            u in proptest::collection::vec(-50.0f64..50.0, 1..10),
            t in -64i32..64,
        ) {
            let r = LogWeights::zeros(u.len()).unwrap();
            let t = t as f64 * 8.0;
            let shifted: Vec<f64> = u.iter().map(|v| v + t).collect();
            let a = logsumexp_w(&u, &r).unwrap() + t;
            let b = logsumexp_w(&shifted, &r).unwrap();
            // Forming u + t already rounds at the scale of the larger input.
            let scale = u.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) + t.abs();
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * scale.max(a.abs()));
        }

        #[test]
        fn softmax_is_gradient_of_lse(
            u in proptest::collection::vec(-5.0f64..5.0, 2..8),
        ) {
            let r: Vec<f64> = (0..u.len()).map(|j| -(j as f64) * 0.3).collect();
            let lw = LogWeights::new(r).unwrap();
            let p = softmax_w(&u, &lw).unwrap();
            let h = 1e-6;
            for j in 0..u.len() {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (logsumexp_w(&up, &lw).unwrap() - logsumexp_w(&dn, &lw).unwrap()) / (2.0 * h);
                prop_assert!((fd - p[j]).abs() <= 1e-6);
            }
        }
    }
}
