//! Synthetic uniform-electron-gas analytic-continuation instances: a periodic
//! Laplace kernel on an imaginary-time grid, a two-component spectral shape,
//! and multiplicative Gaussian noise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::{clip_prior, ProblemData, ScaleShape};
use crate::scalar::LogWeights;

/// Parameters of the two-component shape: a broad low-frequency lobe
/// `(ω/ramp)·exp(−½(ω/tail)²)` and a Gaussian peak at `peak` of width `width`,
/// each normalized and mixed with weight `broad_weight` on the lobe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeParams {
    pub peak: f64,
    pub width: f64,
    pub ramp: f64,
    pub broad_weight: f64,
    pub tail: f64,
}

impl ShapeParams {
    pub const TRUTH: ShapeParams = ShapeParams { peak: 1.0, width: 0.2, ramp: 0.3, broad_weight: 0.4, tail: 0.6 };
    /// Sharper, slightly shifted peak and a shorter lobe than the truth.
    pub const PRIOR: ShapeParams = ShapeParams { peak: 1.1, width: 0.03, ramp: 0.3, broad_weight: 0.4, tail: 0.3 };

    /// The normalized shape on `omega`.
    pub fn evaluate(&self, omega: &[f64]) -> Vec<f64> {
        let normalize = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let broad = normalize(omega.iter().map(|w| (w / self.ramp) * (-0.5 * (w / self.tail).powi(2)).exp()).collect());
        let peak = normalize(omega.iter().map(|w| (-0.5 * ((w - self.peak) / self.width).powi(2)).exp()).collect());
        normalize(broad.iter().zip(&peak).map(|(u, v)| self.broad_weight * u + (1.0 - self.broad_weight) * v).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UegSpec {
    pub m: usize,
    pub n: usize,
    /// Inverse temperature; the imaginary-time grid spans `[0, beta_temp]`.
    pub beta_temp: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub scale_z: f64,
    pub noise_rel: f64,
    pub seed: u64,
    pub lambda: f64,
    pub prior_floor: f64,
    pub truth: ShapeParams,
    pub prior: ShapeParams,
}

impl Default for UegSpec {
    fn default() -> Self {
        UegSpec {
            m: 201,
            n: 500,
            beta_temp: 18.68,
            omega_min: 4e-3,
            omega_max: 4.0,
            scale_z: 1.0,
            noise_rel: 1e-4,
            seed: 0,
            lambda: 1e-5,
            prior_floor: 1e-16,
            truth: ShapeParams::TRUTH,
            prior: ShapeParams::PRIOR,
        }
    }
}

impl UegSpec {
    pub fn with_scale(self, scale_z: f64) -> Self {
        UegSpec { scale_z, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::validation("m", format!("must be at least 2, got {}", self.m)));
        }
        if self.n < 2 {
            return Err(Error::validation("n", format!("must be at least 2, got {}", self.n)));
        }
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(field, format!("must be positive and finite, got {v}")))
            }
        };
        positive("beta_temp", self.beta_temp)?;
        positive("omega_min", self.omega_min)?;
        positive("omega_max", self.omega_max)?;
        positive("scale_z", self.scale_z)?;
        positive("lambda", self.lambda)?;
        positive("prior_floor", self.prior_floor)?;
        if self.omega_min >= self.omega_max {
            return Err(Error::validation("omega_min", "must be below omega_max"));
        }
        if !(self.noise_rel >= 0.0) || !self.noise_rel.is_finite() {
            return Err(Error::validation("noise_rel", format!("must be non-negative, got {}", self.noise_rel)));
        }
        Ok(())
    }

    /// Imaginary times `t_i`, uniform and inclusive of both endpoints.
    pub fn times(&self) -> Vec<f64> {
        uniform(0.0, self.beta_temp, self.m)
    }

    /// Frequencies `ω_j`, uniform and inclusive of both endpoints.
    pub fn frequencies(&self) -> Vec<f64> {
        uniform(self.omega_min, self.omega_max, self.n)
    }

    /// `A_ij = exp(−t_i ω_j) + exp(−(β − t_i) ω_j)`.
    pub fn kernel(&self) -> DMatrix<f64> {
        let t = self.times();
        let w = self.frequencies();
        DMatrix::from_fn(self.m, self.n, |i, j| (-t[i] * w[j]).exp() + (-(self.beta_temp - t[i]) * w[j]).exp())
    }
}

fn uniform(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct UegInstance {
    pub problem: ProblemData,
    pub truth: ScaleShape,
    pub omega: Vec<f64>,
    /// Smallest prior weight before clipping.
    pub raw_prior_min: f64,
}

pub fn gen_ueg(spec: &UegSpec) -> Result<UegInstance> {
    spec.validate()?;
    let a = spec.kernel();
    let omega = spec.frequencies();
    let p_true = DVector::from_vec(spec.truth.evaluate(&omega));
    let q_raw = spec.prior.evaluate(&omega);
    let raw_prior_min = q_raw.iter().copied().fold(f64::INFINITY, f64::min);
    let r: LogWeights = clip_prior(&q_raw, spec.prior_floor)?;

    let clean = &a * (&p_true * spec.scale_z);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let b = clean.map(|v| {
        let e: f64 = StandardNormal.sample(&mut rng);
        v * (1.0 + spec.noise_rel * e)
    });
    let problem = ProblemData::new(a, b, DVector::zeros(spec.n), r, spec.lambda)?;
    Ok(UegInstance { problem, truth: ScaleShape { tau: spec.scale_z, p: p_true }, omega, raw_prior_min })
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = a.clone().svd(false, false).singular_values;
    let cutoff = rel_tol * s.max();
    s.iter().filter(|&&v| v > cutoff).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UegSpec {
        UegSpec { m: 21, n: 40, ..UegSpec::default() }
    }

    #[test]
    fn default_shape() {
        let inst = gen_ueg(&UegSpec::default()).unwrap();
        assert_eq!((inst.problem.m(), inst.problem.n()), (201, 500));
    }

    #[test]
    fn kernel_is_symmetric_in_time() {
        let spec = small();
        let a = spec.kernel();
        for i in 0..spec.m {
            let mirror = spec.m - 1 - i;
            for j in 0..spec.n {
                assert!((a[(i, j)] - a[(mirror, j)]).abs() <= 1e-13 * a[(i, j)]);
            }
        }
    }

    #[test]
    fn kernel_entries_in_range() {
        let a = UegSpec::default().kernel();
        assert!(a.iter().all(|&v| v > 0.0 && v <= 2.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = small().with_scale(10.0);
        let a = gen_ueg(&spec).unwrap();
        let b = gen_ueg(&spec).unwrap();
        assert_eq!(a.problem.b(), b.problem.b());
        assert_eq!(a.problem.r(), b.problem.r());
        let c = gen_ueg(&UegSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.problem.b(), c.problem.b());
    }

    #[test]
    fn noiseless_data_matches_truth() {
        let spec = UegSpec { noise_rel: 0.0, ..small().with_scale(3.0) };
        let inst = gen_ueg(&spec).unwrap();
        let expected = inst.problem.a() * inst.truth.compose();
        assert!((inst.problem.b() - expected).amax() <= 1e-14);
        assert!((inst.truth.p.sum() - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn prior_is_a_clipped_distribution() {
        let inst = gen_ueg(&UegSpec::default()).unwrap();
        let q = inst.problem.r().weights();
        assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(inst.raw_prior_min < 1e-16);
        assert!(q.iter().all(|&v| v >= 1e-16 * (1.0 - 1e-12)));
    }

    #[test]
    fn rejects_invalid_specs() {
        let bad = UegSpec { omega_min: 5.0, ..UegSpec::default() };
        assert!(matches!(gen_ueg(&bad), Err(Error::Validation { field: "omega_min", .. })));
        let bad = UegSpec { m: 1, ..UegSpec::default() };
        assert!(matches!(gen_ueg(&bad), Err(Error::Validation { field: "m", .. })));
        let bad = UegSpec { scale_z: -1.0, ..UegSpec::default() };
        assert!(matches!(gen_ueg(&bad), Err(Error::Validation { field: "scale_z", .. })));
    }

    #[test]
    fn rank_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-5, 1e-11, 0.0]));
        assert_eq!(numerical_rank(&a, 1e-10), 2);
    }
}
