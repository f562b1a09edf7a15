//! The scale-shape dual: objective, the nonlinear system `F(y, τ) = 0`, its
//! symmetric Jacobian, primal recovery, and the classical dual used by the
//! comparator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::ProblemData;
use crate::scalar::{lse_softmax_w, WeightedSoftmax};

/// `ln(f64::MAX)`: the largest argument `exp` accepts without overflowing.
pub const LOG_MAX_FINITE: f64 = 709.782_712_893_384;

#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub y: DVector<f64>,
    pub tau: f64,
}

impl DualPoint {
    pub fn new(y: DVector<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::domain(format!("scale must be positive and finite, got {tau}")));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("dual variable has a non-finite entry"));
        }
        Ok(DualPoint { y, tau })
    }

    /// The default starting point `(0, 1)`.
    pub fn origin(m: usize) -> Self {
        DualPoint { y: DVector::zeros(m), tau: 1.0 }
    }

    pub fn norm(&self) -> f64 {
        (self.y.norm_squared() + self.tau * self.tau).sqrt()
    }

    pub fn distance(&self, other: &DualPoint) -> f64 {
        let dt = self.tau - other.tau;
        ((&self.y - &other.y).norm_squared() + dt * dt).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct SystemEval {
    pub f_y: DVector<f64>,
    pub f_tau: f64,
    /// `‖(F_y, F_τ)‖₂`.
    pub rho: f64,
    pub p: DVector<f64>,
    /// `log Σ q_j exp((Aᵀy − c)_j)`.
    pub logexp: f64,
    /// Largest exponent argument used in the evaluation (never positive).
    pub max_exponent: f64,
}

impl SystemEval {
    pub fn stacked(&self) -> DVector<f64> {
        let m = self.f_y.len();
        DVector::from_fn(m + 1, |i, _| if i < m { self.f_y[i] } else { self.f_tau })
    }
}

#[derive(Debug, Clone)]
pub struct JacobianEval {
    /// `[[H, g], [gᵀ, 1/τ]]` with `H = −λI − τ A S(y) Aᵀ` and `g = −A p`.
    pub df: DMatrix<f64>,
}

fn check_point(z: &DualPoint, problem: &ProblemData) -> Result<()> {
    if z.y.len() != problem.m() {
        return Err(Error::Contract(format!(
            "dual variable has length {} but the problem has {} rows",
            z.y.len(),
            problem.m()
        )));
    }
    if !(z.tau > 0.0) || !z.tau.is_finite() {
        return Err(Error::domain(format!("scale must be positive and finite, got {}", z.tau)));
    }
    if z.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("dual variable has a non-finite entry"));
    }
    Ok(())
}

/// Weighted softmax of `Aᵀy − c` against the problem's prior.
pub fn shape_at(y: &DVector<f64>, problem: &ProblemData) -> Result<WeightedSoftmax> {
    let u = problem.a().tr_mul(y) - problem.c();
    lse_softmax_w(u.as_slice(), problem.r())
}

pub fn eval_f(z: &DualPoint, problem: &ProblemData) -> Result<SystemEval> {
    check_point(z, problem)?;
    let s = shape_at(&z.y, problem)?;
    let p = DVector::from_vec(s.p);
    let f_y = problem.b() - &z.y * problem.lambda() - (problem.a() * &p) * z.tau;
    let f_tau = -s.logsumexp + z.tau.ln() + 1.0;
    let rho = (f_y.norm_squared() + f_tau * f_tau).sqrt();
    Ok(SystemEval { f_y, f_tau, rho, p, logexp: s.logsumexp, max_exponent: s.max_exponent })
}

/// `H = −λI − τ (B Bᵀ − (Ap)(Ap)ᵀ)` with `B = A Diag(p)^{1/2}`.
pub(crate) fn shape_hessian_block(problem: &ProblemData, p: &DVector<f64>, tau: f64) -> (DMatrix<f64>, DVector<f64>) {
    let a = problem.a();
    let m = problem.m();
    let mut bmat = a.clone();
    for (j, mut col) in bmat.column_iter_mut().enumerate() {
        col *= p[j].sqrt();
    }
    let ap = a * p;
    let mut h = &bmat * bmat.transpose();
    h.ger(-1.0, &ap, &ap, 1.0);
    h *= -tau;
    for i in 0..m {
        h[(i, i)] -= problem.lambda();
    }
    symmetrize(&mut h);
    (h, ap)
}

fn symmetrize(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
}

/// Jacobian assembled from an already computed shape `p`.
pub fn eval_df_with_shape(z: &DualPoint, problem: &ProblemData, p: &DVector<f64>) -> JacobianEval {
    let m = problem.m();
    let (h, ap) = shape_hessian_block(problem, p, z.tau);
    let mut df = DMatrix::zeros(m + 1, m + 1);
    df.view_mut((0, 0), (m, m)).copy_from(&h);
    for i in 0..m {
        df[(i, m)] = -ap[i];
        df[(m, i)] = -ap[i];
    }
    df[(m, m)] = 1.0 / z.tau;
    JacobianEval { df }
}

pub fn eval_df(z: &DualPoint, problem: &ProblemData) -> Result<JacobianEval> {
    check_point(z, problem)?;
    let s = shape_at(&z.y, problem)?;
    Ok(eval_df_with_shape(z, problem, &DVector::from_vec(s.p)))
}

/// `⟨b, y⟩ − λ‖y‖²/2 − τ logexp_q(Aᵀy − c) + τ log τ`.
pub fn dual_objective(z: &DualPoint, problem: &ProblemData) -> Result<f64> {
    check_point(z, problem)?;
    let s = shape_at(&z.y, problem)?;
    Ok(problem.b().dot(&z.y) - 0.5 * problem.lambda() * z.y.norm_squared() - z.tau * s.logsumexp + z.tau * z.tau.ln())
}

/// `x = τ p(y)`.
pub fn primal_from_dual(z: &DualPoint, problem: &ProblemData) -> Result<DVector<f64>> {
    check_point(z, problem)?;
    let s = shape_at(&z.y, problem)?;
    Ok(DVector::from_vec(s.p) * z.tau)
}

#[derive(Debug, Clone)]
pub struct ClassicalGradient {
    pub grad: DVector<f64>,
    /// `q ⊙ exp(Aᵀy − 1 − c)`, possibly with infinite entries.
    pub x: DVector<f64>,
    /// `max_j (r_j + (Aᵀy)_j − 1 − c_j)`, taken before exponentiating.
    pub max_exponent: f64,
}

/// Exponent arguments `r + Aᵀy − 1 − c` of the classical primal map.
pub fn classical_exponents(y: &DVector<f64>, problem: &ProblemData) -> DVector<f64> {
    let mut e = problem.a().tr_mul(y) - problem.c();
    for (ej, rj) in e.iter_mut().zip(problem.r().as_slice()) {
        *ej += rj - 1.0;
    }
    e
}

/// Gradient of the classical dual with bare exponentials; overflow saturates
/// to infinity and is visible in the returned values.
pub fn classical_dual_gradient(y: &DVector<f64>, problem: &ProblemData) -> ClassicalGradient {
    let e = classical_exponents(y, problem);
    let max_exponent = e.max();
    let x = e.map(f64::exp);
    let grad = problem.b() - y * problem.lambda() - problem.a() * &x;
    ClassicalGradient { grad, x, max_exponent }
}

/// `⟨b, y⟩ − λ‖y‖²/2 − ⟨q, exp(Aᵀy − 1 − c)⟩` with bare exponentials.
pub fn classical_dual_objective(y: &DVector<f64>, problem: &ProblemData) -> f64 {
    let e = classical_exponents(y, problem);
    problem.b().dot(y) - 0.5 * problem.lambda() * y.norm_squared() - e.map(f64::exp).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::LogWeights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, m: usize, n: usize) -> ProblemData {
        crate::instances::random_instance(rng, m, n, (0.1, 1.0))
    }

    fn one_by_one(b: f64, lambda: f64) -> ProblemData {
        ProblemData::new(
            DMatrix::zeros(1, 1),
            DVector::from_element(1, b),
            DVector::from_element(1, -1.0),
            LogWeights::zeros(1).unwrap(),
            lambda,
        )
        .unwrap()
    }

    #[test]
    fn f_tau_vanishes_at_balanced_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pr = random_problem(&mut rng, 3, 4);
        let y = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let lse = shape_at(&y, &pr).unwrap().logsumexp;
        let ev = eval_f(&DualPoint::new(y, (lse - 1.0).exp()).unwrap(), &pr).unwrap();
        assert!(ev.f_tau.abs() < 1e-14);
    }

    #[test]
    fn closed_form_root_one_by_one() {
        // A = 0, q = 1, c = −1: logexp = 1, so τ = 1 and y = b/λ.
        let pr = one_by_one(3.0, 2.0);
        let z = DualPoint::new(DVector::from_element(1, 1.5), 1.0).unwrap();
        let ev = eval_f(&z, &pr).unwrap();
        assert!(ev.rho <= 1e-14);
        let x = primal_from_dual(&z, &pr).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn corner_entry_is_reciprocal_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pr = random_problem(&mut rng, 3, 4);
        let z = DualPoint::new(DVector::zeros(3), 2.0).unwrap();
        assert_eq!(eval_df(&z, &pr).unwrap().df[(3, 3)], 0.5);
    }

    #[test]
    fn f_is_gradient_of_dual_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let pr = random_problem(&mut rng, 3, 4);
            let y = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let z = DualPoint::new(y, rng.random_range(0.5..3.0)).unwrap();
            let ev = eval_f(&z, &pr).unwrap();
            let h = 1e-6;
            let g = ev.stacked();
            for i in 0..4 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                if i < 3 {
                    zp.y[i] += h;
                    zm.y[i] -= h;
                } else {
                    zp.tau += h;
                    zm.tau -= h;
                }
                let fd = (dual_objective(&zp, &pr).unwrap() - dual_objective(&zm, &pr).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5, "component {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn df_matches_finite_differences_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = rng.random_range(1..=5);
            let n = rng.random_range(1..=8);
            let pr = random_problem(&mut rng, m, n);
            let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let z = DualPoint::new(y, rng.random_range(0.5..3.0)).unwrap();
            let df = eval_df(&z, &pr).unwrap().df;
            let h = 1e-6;
            let mut fd = DMatrix::zeros(m + 1, m + 1);
            for j in 0..=m {
                let mut zp = z.clone();
                let mut zm = z.clone();
                if j < m {
                    zp.y[j] += h;
                    zm.y[j] -= h;
                } else {
                    zp.tau += h;
                    zm.tau -= h;
                }
                let col = (eval_f(&zp, &pr).unwrap().stacked() - eval_f(&zm, &pr).unwrap().stacked()) / (2.0 * h);
                fd.set_column(j, &col);
            }
            let scale = 1.0 + df.amax();
            assert!((&fd - &df).amax() <= 1e-5 * scale);
            assert!((&df - df.transpose()).amax() <= 1e-12 * df.amax());
        }
    }

    #[test]
    fn singular_values_are_bracketed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = rng.random_range(1..=5);
            let n = rng.random_range(1..=8);
            let pr = random_problem(&mut rng, m, n);
            let y = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
            let tau = rng.random_range(0.05..5.0);
            let df = eval_df(&DualPoint::new(y, tau).unwrap(), &pr).unwrap().df;
            let sv = df.svd(false, false).singular_values;
            let k = pr.constants();
            let lower = pr.lambda().min(1.0 / tau);
            let upper = k.a_max + (pr.lambda() + tau * k.a_opnorm.powi(2) / 2.0).max(1.0 / tau);
            assert!(sv.min() >= lower - 1e-10);
            assert!(sv.max() <= upper + 1e-10);
        }
    }

    #[test]
    fn exactly_one_positive_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pr = random_problem(&mut rng, 4, 6);
        let df = eval_df(&DualPoint::new(DVector::zeros(4), 1.3).unwrap(), &pr).unwrap().df;
        let f = crate::linalg::BunchKaufman::factor(&df).unwrap();
        assert_eq!(f.inertia(), (1, 4, 0));
    }

    #[test]
    fn shape_is_half_norm_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let pr = random_problem(&mut rng, 4, 7);
            let y1 = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let y2 = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let p1 = DVector::from_vec(shape_at(&y1, &pr).unwrap().p);
            let p2 = DVector::from_vec(shape_at(&y2, &pr).unwrap().p);
            let bound = 0.5 * pr.constants().a_opnorm * (&y1 - &y2).norm();
            assert!((p1 - p2).norm() <= bound * (1.0 + 1e-9));
        }
    }

    #[test]
    fn evaluations_never_exponentiate_positive_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pr = random_problem(&mut rng, 3, 5);
        let y = DVector::from_element(3, 800.0);
        let ev = eval_f(&DualPoint::new(y, 1e3).unwrap(), &pr).unwrap();
        assert!(ev.max_exponent <= 0.0);
        assert!(ev.rho.is_finite());
    }

    #[test]
    fn dual_objective_at_origin() {
        let n = 5;
        let lw = LogWeights::new(vec![-(n as f64).ln(); n]).unwrap();
        let pr =
            ProblemData::new(DMatrix::from_element(2, n, 0.3), DVector::zeros(2), DVector::zeros(n), lw, 1.0).unwrap();
        let v = dual_objective(&DualPoint::origin(2), &pr).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn primal_mass_equals_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let pr = random_problem(&mut rng, 3, 6);
            let y = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let tau = rng.random_range(0.1..100.0);
            let x = primal_from_dual(&DualPoint::new(y, tau).unwrap(), &pr).unwrap();
            assert!((x.sum() - tau).abs() <= 1e-12 * tau);
        }
    }

    #[test]
    fn classical_gradient_at_origin_and_overflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pr = random_problem(&mut rng, 2, 3);
        let g = classical_dual_gradient(&DVector::zeros(2), &pr);
        let want =
            pr.r().as_slice().iter().zip(pr.c().iter()).map(|(r, c)| r - 1.0 - c).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(g.max_exponent, want);

        let a = DMatrix::from_element(1, 1, 1.0);
        let pr = ProblemData::new(a, DVector::zeros(1), DVector::zeros(1), LogWeights::zeros(1).unwrap(), 1.0).unwrap();
        let g = classical_dual_gradient(&DVector::from_element(1, 800.0), &pr);
        assert!(g.max_exponent > LOG_MAX_FINITE);
        assert!(!g.grad[0].is_finite());
    }

    #[test]
    fn rejects_bad_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pr = random_problem(&mut rng, 2, 3);
        assert!(DualPoint::new(DVector::zeros(2), 0.0).is_err());
        let bad = DualPoint { y: DVector::from_element(2, f64::NAN), tau: 1.0 };
        assert!(matches!(eval_f(&bad, &pr), Err(Error::Domain(_))));
        let short = DualPoint::origin(1);
        assert!(eval_f(&short, &pr).is_err());
    }
}
