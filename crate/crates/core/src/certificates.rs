//! Computable constants for the damped Newton iteration: Lambert-W brackets
//! on the merit level set, Jacobian and Lipschitz bounds, and the global
//! contraction factor with its iteration-count consequences.
//!
//! The contraction factor is typically within machine precision of one, so
//! [`RateCertificate`] carries the complement `1 − ν̂` as the primary value
//! and derives everything else from it.

use serde::Serialize;

use crate::dual::{eval_f, DualPoint};
use crate::error::{Error, Result};
use crate::problem::ProblemData;
use crate::scalar::{lambert_w, lambert_w_exp};
use crate::solver::SolverConfig;

/// Absolute floor on the lower scale bound.
pub const TAU_MIN_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelSetBounds {
    pub beta: f64,
    pub theta: f64,
    pub b_const: f64,
    pub zeta: f64,
    /// May overflow to infinity on high levels; see `log_tau_max_bound`.
    pub tau_max_bound: f64,
    pub log_tau_max_bound: f64,
    pub tau_min_bound: f64,
    pub y_max_bound: f64,
}

/// Brackets on `τ` and `‖y‖` over the level set `{ρ ≤ β}`.
pub fn level_bounds(problem: &ProblemData, beta: f64) -> Result<LevelSetBounds> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::domain(format!("level must be positive and finite, got {beta}")));
    }
    let k = problem.constants();
    let lambda = problem.lambda();
    let bnorm = problem.b().norm();

    let theta = 1.0 - beta - k.q_onenorm.ln() + k.c_min;
    let b_const = (beta + bnorm).powi(2) / (4.0 * lambda);
    // B / W(B e^θ) = exp(W(B e^θ) − θ), which stays finite in log form.
    let w = lambert_w_exp(b_const.ln() + theta);
    let log_tau_max_bound = w - theta;
    let direct = b_const / w;
    let tau_max_bound = if direct.is_finite() { direct } else { log_tau_max_bound.exp() };

    // ζ is assembled in the log domain; it underflows long before its
    // logarithm loses meaning.
    let log_zeta =
        2.0 * k.a_max.ln() + k.log_q_min - lambda.ln() - 1.0 - beta - k.c_max - k.a_max * (bnorm + beta) / lambda;
    let zeta = log_zeta.exp();
    let tau_min_bound = if k.a_max > 0.0 {
        (lambda * lambert_w(zeta)? / (k.a_max * k.a_max)).max(TAU_MIN_FLOOR)
    } else {
        TAU_MIN_FLOOR
    };
    let y_max_bound = (bnorm + tau_max_bound * k.a_max + beta) / lambda;

    Ok(LevelSetBounds { beta, theta, b_const, zeta, tau_max_bound, log_tau_max_bound, tau_min_bound, y_max_bound })
}

fn check_strip(tau_l: f64, tau_u: f64) -> Result<()> {
    if tau_l > 0.0 && tau_l <= tau_u && tau_u.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("scale strip needs 0 < tau_l <= tau_u, got [{tau_l}, {tau_u}]")))
    }
}

/// Bounds `(L, M)` with `‖DF(z)‖ ≤ L` and `‖DF(z)⁻¹‖ ≤ M` for `τ ∈ [tau_l, tau_u]`.
pub fn jacobian_strip_bounds(problem: &ProblemData, tau_l: f64, tau_u: f64) -> Result<(f64, f64)> {
    check_strip(tau_l, tau_u)?;
    let k = problem.constants();
    let lambda = problem.lambda();
    let l = k.a_max + (lambda + tau_u * k.a_opnorm.powi(2) / 2.0).max(1.0 / tau_l);
    Ok((l, inverse_bound(lambda, tau_u)))
}

fn inverse_bound(lambda: f64, tau: f64) -> f64 {
    (1.0 / lambda).max(tau)
}

/// Lipschitz constant of `DF` on `ℝᵐ × [tau_l, tau_u]`.
pub fn lipschitz_df_bound(problem: &ProblemData, tau_l: f64, tau_u: f64) -> Result<f64> {
    check_strip(tau_l, tau_u)?;
    let a = problem.constants().a_opnorm;
    Ok(3.0 * tau_u * a.powi(3) + 1.5 * a * a + 1.0 / (tau_l * tau_l))
}

/// Lipschitz constant of `DF` on the widened strip `[τ_min/2, 2τ_max]` of
/// the level set `{ρ ≤ β}`.
pub fn lipschitz_df_level_bound(problem: &ProblemData, bounds: &LevelSetBounds) -> f64 {
    let a = problem.constants().a_opnorm;
    6.0 * bounds.tau_max_bound * a.powi(3) + 1.5 * a * a + 4.0 / bounds.tau_min_bound.powi(2)
}

/// Logarithm of [`lipschitz_df_level_bound`], finite even when the bound
/// itself overflows.
pub fn log_lipschitz_df_level_bound(problem: &ProblemData, bounds: &LevelSetBounds) -> f64 {
    let log_a = problem.constants().a_opnorm.ln();
    let terms = [
        6f64.ln() + bounds.log_tau_max_bound + 3.0 * log_a,
        1.5f64.ln() + 2.0 * log_a,
        4f64.ln() - 2.0 * bounds.tau_min_bound.ln(),
    ];
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

/// Upper bound on any inexact Newton direction from the level set.
pub fn direction_bound(problem: &ProblemData, beta: f64, eta_bar: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eta_bar) {
        return Err(Error::domain(format!("forcing bound must lie in [0, 1), got {eta_bar}")));
    }
    let lb = level_bounds(problem, beta)?;
    Ok(inverse_bound(problem.lambda(), lb.tau_max_bound) * (1.0 + eta_bar) * beta)
}

/// Ceiling on `ρ(z + ζ s)` for `z` in the level set, `‖s‖ ≤ delta`, `ζ ∈ [0, 1]`.
pub fn residual_ceiling(problem: &ProblemData, beta: f64, delta: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::domain(format!("perturbation radius must be non-negative, got {delta}")));
    }
    let lb = level_bounds(problem, beta)?;
    let k = problem.constants();
    let lambda = problem.lambda();
    let c_inf = problem.c().amax();
    let f_y = lb.tau_max_bound * k.a_max + lambda * lb.y_max_bound + problem.b().norm() + (lambda + k.a_max) * delta;
    let f_tau = 1.0
        + c_inf
        + k.a_max * (lb.y_max_bound + delta)
        + (0.5 * lb.tau_min_bound).ln().abs().max(lb.tau_max_bound + delta)
        + k.q_onenorm.ln().abs();
    Ok(f_y + f_tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateCertificate {
    pub rho0: f64,
    pub beta: f64,
    pub eta_bar: f64,
    pub level: LevelSetBounds,
    pub l_strip: f64,
    pub m_strip: f64,
    /// `β̂`, the level on which the Lipschitz bound is taken.
    pub beta_hat: f64,
    /// Lipschitz bound on the `β̂` level set; may overflow, see `log_l_d`.
    pub l_d: f64,
    pub log_l_d: f64,
    pub d_max: f64,
    pub rho_max: f64,
    pub alpha_hat: f64,
    pub eta_hat: f64,
    pub alpha_star: f64,
    pub alpha_hat_star: f64,
    /// `1 − ν̂`; may underflow to 0.
    pub contraction_gap: f64,
    /// `ln(1 − ν̂)`, always finite and negative.
    pub log_contraction_gap: f64,
    /// `ν̂`; may round to 1.
    pub nu_hat: f64,
    pub k_dist: f64,
}

impl RateCertificate {
    /// Iterations after which `ρ ≤ eps` is guaranteed; infinite when the
    /// guarantee is vacuous in floating point.
    pub fn iters_to_eps(&self, eps: f64) -> f64 {
        self.iterations_for_ratio(self.rho0 / eps)
    }

    /// Iterations after which `‖z^k − z*‖ ≤ eps` is guaranteed.
    pub fn iters_to_dist(&self, eps: f64) -> f64 {
        self.iterations_for_ratio(self.k_dist / eps)
    }

    /// `⌈ln(ratio) / −ln ν̂⌉`, evaluated in log form so an underflowed gap
    /// gives an infinite count rather than a division by zero.
    fn iterations_for_ratio(&self, ratio: f64) -> f64 {
        if !(ratio > 1.0) {
            return 0.0;
        }
        let log_rate = if self.contraction_gap > 1e-300 {
            (-(-self.contraction_gap).ln_1p()).ln()
        } else {
            self.log_contraction_gap
        };
        (ratio.ln().ln() - log_rate).exp().ceil()
    }
}

/// Assembles the constant chain for a run started at `z0` with `cfg`.
pub fn rate_certificate(problem: &ProblemData, cfg: &SolverConfig, z0: &DualPoint) -> Result<RateCertificate> {
    let rho0 = eval_f(z0, problem)?.rho;
    if !(rho0 > 0.0) {
        return Err(Error::domain("the starting point is already a root"));
    }
    let beta = cfg.beta_factor * rho0;
    let eta_bar = cfg.eta_schedule.bound(cfg.eta_bar);
    let mu = cfg.mu;
    let lambda = problem.lambda();

    let level = level_bounds(problem, beta)?;
    let tau_hat_min = level.tau_min_bound.max(cfg.tau_floor);
    let (l_strip, m_strip) = jacobian_strip_bounds(problem, tau_hat_min, level.tau_max_bound)?;
    let d_max = direction_bound(problem, beta, eta_bar)?;
    let beta_hat = residual_ceiling(problem, beta, d_max)?;
    let level_hat = level_bounds(problem, beta_hat)?;
    let l_d = lipschitz_df_level_bound(problem, &level_hat);
    let log_l_d = log_lipschitz_df_level_bound(problem, &level_hat);

    let alpha_hat = (tau_hat_min / (2.0 * d_max)).min(1.0);
    let eta_hat = 1.0 - (1.0 - eta_bar) * alpha_hat;
    let m_hat = inverse_bound(lambda, 2.0 * level.tau_max_bound);
    // The chain below multiplies constants that can each be far below
    // 1e-100, so it is carried in logarithms.
    let t = std::f64::consts::LN_2 + log_l_d + 2.0 * m_hat.ln() + beta.ln();
    let log_denominator = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    let log_alpha_star = ((1.0 - mu) * (1.0 - eta_bar)).ln() - log_denominator;
    let alpha_star = log_alpha_star.exp();
    let log_alpha_hat_star = alpha_hat.ln().min(cfg.gamma.ln() + log_alpha_star);
    let alpha_hat_star = log_alpha_hat_star.exp();
    // 1 − η̂ = (1 − η̄)·α̂, formed directly because η̂ rounds to 1 when α̂ is tiny.
    let log_contraction_gap = mu.ln() + log_alpha_hat_star + (1.0 - eta_bar).ln() + alpha_hat.ln();
    if !(log_contraction_gap.is_finite() && log_contraction_gap < 0.0) {
        return Err(Error::Certificate(format!("contraction gap exp({log_contraction_gap:e}) is outside (0, 1)")));
    }
    let contraction_gap = log_contraction_gap.exp();
    let nu_hat = 1.0 - contraction_gap;
    let k_dist = inverse_bound(lambda, level.tau_max_bound) * (1.0 + eta_bar) * rho0 / contraction_gap;

    Ok(RateCertificate {
        rho0,
        beta,
        eta_bar,
        level,
        l_strip,
        m_strip,
        beta_hat,
        l_d,
        log_l_d,
        d_max,
        rho_max: beta_hat,
        alpha_hat,
        eta_hat,
        alpha_star,
        alpha_hat_star,
        contraction_gap,
        log_contraction_gap,
        nu_hat,
        k_dist,
    })
}
