//! Damped inexact Newton on `F(y, τ) = 0` with a scale safeguard and
//! backtracking on the nonsmooth merit `ρ = ‖F‖`, its fixed-scale
//! specialization, and the classical dual Newton comparator.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::certificates::{level_bounds, rate_certificate, RateCertificate};
use crate::dual::{
    classical_dual_gradient, classical_dual_objective, classical_exponents, eval_df_with_shape, eval_f,
    shape_hessian_block, DualPoint, SystemEval, LOG_MAX_FINITE,
};
use crate::error::{Error, Result};
use crate::linalg::{minres, BunchKaufman};
use crate::problem::ProblemData;

/// Forcing sequence `η_k` for the inexact linear solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EtaSchedule {
    /// `η_k = 0`: direct factorization.
    Exact,
    Constant(f64),
    /// `η_k = min(η̄, ‖F(z^k)‖^p)`.
    Power(f64),
}

impl EtaSchedule {
    /// Uniform bound `η̄` on the sequence.
    pub fn bound(&self, eta_bar: f64) -> f64 {
        match *self {
            EtaSchedule::Exact => 0.0,
            EtaSchedule::Constant(c) => c,
            EtaSchedule::Power(_) => eta_bar,
        }
    }

    pub fn forcing(&self, rho: f64, eta_bar: f64) -> f64 {
        match *self {
            EtaSchedule::Exact => 0.0,
            EtaSchedule::Constant(c) => c,
            EtaSchedule::Power(p) => rho.powf(p).min(eta_bar),
        }
    }
}

impl FromStr for EtaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::domain(format!("unrecognized forcing schedule `{s}`"));
        if s == "exact" {
            return Ok(EtaSchedule::Exact);
        }
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let v: f64 = value.parse().map_err(|_| bad())?;
        match kind {
            "const" if (0.0..1.0).contains(&v) => Ok(EtaSchedule::Constant(v)),
            "power" if v > 0.0 => Ok(EtaSchedule::Power(v)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for EtaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EtaSchedule::Exact => write!(f, "exact"),
            EtaSchedule::Constant(c) => write!(f, "const:{c}"),
            EtaSchedule::Power(p) => write!(f, "power:{p}"),
        }
    }
}

/// Sufficient-decrease test used by the classical comparator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArmijoTest {
    /// `ψ_d(y + αd) ≥ ψ_d(y) + μα⟨∇ψ_d, d⟩` on the concave dual objective.
    Objective,
    /// `‖∇ψ_d(y + αd)‖ ≤ (1 − μα)‖∇ψ_d(y)‖`.
    GradientNorm,
}

impl FromStr for ArmijoTest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "objective" => Ok(ArmijoTest::Objective),
            "gradient-norm" => Ok(ArmijoTest::GradientNorm),
            _ => Err(Error::domain(format!("unrecognized Armijo test `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub mu: f64,
    pub gamma: f64,
    pub eta_schedule: EtaSchedule,
    pub eta_bar: f64,
    pub beta_factor: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub tau_floor: f64,
    pub max_backtracks: u32,
    pub classical_armijo: ArmijoTest,
    /// Keep every iterate in [`SolveReport::iterates`].
    pub record_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mu: 0.49,
            gamma: 0.5,
            eta_schedule: EtaSchedule::Exact,
            eta_bar: 0.5,
            beta_factor: 1.5,
            eps: 1e-8,
            max_iter: 300,
            tau_floor: 1e-16,
            max_backtracks: 60,
            classical_armijo: ArmijoTest::GradientNorm,
            record_iterates: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.mu) {
            return Err(Error::validation("mu", format!("must lie in (0, 1), got {}", self.mu)));
        }
        if !open_unit(self.gamma) {
            return Err(Error::validation("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.eta_bar) {
            return Err(Error::validation("eta_bar", format!("must lie in [0, 1), got {}", self.eta_bar)));
        }
        if !(0.0..1.0).contains(&self.eta_schedule.bound(self.eta_bar)) {
            return Err(Error::validation("eta_schedule", "constant forcing must lie in [0, 1)"));
        }
        if !(self.beta_factor > 1.0) {
            return Err(Error::validation("beta_factor", format!("must exceed 1, got {}", self.beta_factor)));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::validation("eps", format!("must be non-negative, got {}", self.eps)));
        }
        if self.max_iter == 0 {
            return Err(Error::validation("max_iter", "must be positive"));
        }
        if !(self.tau_floor > 0.0) {
            return Err(Error::validation("tau_floor", format!("must be positive, got {}", self.tau_floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
    /// Classical comparator only: the overflow safeguard could not find a
    /// representable trial point.
    Overflow,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::LineSearchFailure => "line_search_failure",
            SolveStatus::Overflow => "overflow",
        };
        f.write_str(s)
    }
}

/// State at iterate `k` and the step taken from it. The last record of a
/// trace describes the terminal iterate and has `alpha = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub rho: f64,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub backtracks: u32,
    pub tau: f64,
    pub eta_k: f64,
    /// Largest exponent argument seen at this iteration. For the classical
    /// comparator this is the unsafeguarded full Newton step's exponent.
    pub max_exponent: f64,
    pub step_norm: f64,
    pub y_norm: f64,
    /// `‖F + DF·d‖ / ‖F‖` achieved by the linear solve.
    pub linear_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub trace: Vec<IterationRecord>,
    pub z_final: DualPoint,
    pub x_final: DVector<f64>,
    /// Absent for the fixed-scale and classical solvers, and when the
    /// starting point is already a root.
    pub certificate: Option<RateCertificate>,
    /// Scale safeguard `τ̂_min` used by the step-length rule.
    pub tau_hat_min: f64,
    /// One point per trace record when requested, else empty.
    pub iterates: Vec<DualPoint>,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }

    pub fn final_rho(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.rho)
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

fn terminal_record(k: usize, rho: f64, tau: f64, max_exponent: f64, y_norm: f64) -> IterationRecord {
    IterationRecord {
        k,
        rho,
        alpha: 0.0,
        alpha_bar: 0.0,
        backtracks: 0,
        tau,
        eta_k: 0.0,
        max_exponent,
        step_norm: 0.0,
        y_norm,
        linear_residual: 0.0,
    }
}

/// Solves `DF d = rhs` to relative residual `eta` (exactly when `eta = 0`).
fn newton_direction(df: &DMatrix<f64>, rhs: &DVector<f64>, eta: f64) -> Result<(DVector<f64>, f64)> {
    let rnorm = rhs.norm();
    let rel = |d: &DVector<f64>| (df * d - rhs).norm() / rnorm;
    if eta > 0.0 {
        let n = rhs.len();
        let out = minres(|v| df * v, rhs, 0.9 * eta, 4 * n + 20);
        let r = rel(&out.x);
        if r <= eta {
            return Ok((out.x, r));
        }
    }
    let f = BunchKaufman::factor(df)?;
    let d = f.solve_refined(df, rhs);
    let r = rel(&d);
    Ok((d, r))
}

/// Damped inexact Newton with the scale safeguard, started from `z0`.
pub fn solve(problem: &ProblemData, cfg: &SolverConfig, z0: &DualPoint) -> Result<SolveReport> {
    cfg.validate()?;
    let m = problem.m();
    let mut z = z0.clone();
    let mut ev = eval_f(&z, problem)?;
    let rho0 = ev.rho;
    if !rho0.is_finite() {
        return Err(Error::domain("merit is not finite at the starting point"));
    }
    let (tau_hat_min, certificate) = if rho0 > 0.0 {
        let lb = level_bounds(problem, cfg.beta_factor * rho0)?;
        (lb.tau_min_bound.max(cfg.tau_floor), rate_certificate(problem, cfg, z0).ok())
    } else {
        (cfg.tau_floor, None)
    };

    let mut trace = Vec::new();
    let mut iterates = Vec::new();
    let mut status = SolveStatus::MaxIters;
    for k in 0..=cfg.max_iter {
        if cfg.record_iterates {
            iterates.push(z.clone());
        }
        if ev.rho <= cfg.eps {
            status = SolveStatus::Converged;
        }
        if ev.rho <= cfg.eps || k == cfg.max_iter {
            trace.push(terminal_record(k, ev.rho, z.tau, ev.max_exponent, z.y.norm()));
            break;
        }

        let eta_k = cfg.eta_schedule.forcing(ev.rho, cfg.eta_bar);
        let df = eval_df_with_shape(&z, problem, &ev.p).df;
        let rhs = -ev.stacked();
        let (d, linear_residual) = newton_direction(&df, &rhs, eta_k)?;
        let dy = d.rows(0, m).into_owned();
        let dtau = d[m];

        let half_floor = 0.5 * tau_hat_min;
        let alpha_bar = if z.tau + dtau >= half_floor { 1.0 } else { (z.tau - half_floor) / (-dtau) };

        let mut max_exponent = ev.max_exponent;
        let mut accepted: Option<(f64, u32, DualPoint, SystemEval)> = None;
        let mut alpha = alpha_bar;
        for ell in 0..=cfg.max_backtracks {
            let trial = DualPoint { y: &z.y + &dy * alpha, tau: z.tau + dtau * alpha };
            if trial.tau > 0.0 {
                let tev = eval_f(&trial, problem)?;
                max_exponent = max_exponent.max(tev.max_exponent);
                // The strict test rejects roundoff-level steps that would
                // otherwise pass with equality once ρ reaches its noise floor.
                if tev.rho <= ev.rho * (1.0 + cfg.mu * alpha * (eta_k - 1.0)) && tev.rho < ev.rho {
                    accepted = Some((alpha, ell, trial, tev));
                    break;
                }
            }
            alpha *= cfg.gamma;
        }

        let mut record = IterationRecord {
            k,
            rho: ev.rho,
            alpha: 0.0,
            alpha_bar,
            backtracks: cfg.max_backtracks + 1,
            tau: z.tau,
            eta_k,
            max_exponent,
            step_norm: d.norm(),
            y_norm: z.y.norm(),
            linear_residual,
        };
        match accepted {
            Some((alpha, ell, trial, tev)) => {
                record.alpha = alpha;
                record.backtracks = ell;
                trace.push(record);
                z = trial;
                ev = tev;
            }
            None => {
                trace.push(record);
                status = SolveStatus::LineSearchFailure;
                break;
            }
        }
    }

    let x_final = &ev.p * z.tau;
    Ok(SolveReport { status, trace, z_final: z, x_final, certificate, tau_hat_min, iterates })
}

/// Damped Newton on `F̄(y) = b − λy − τ̄ A p(y)` with the scale held at `tau_fixed`.
pub fn solve_fixed_scale(
    problem: &ProblemData,
    tau_fixed: f64,
    cfg: &SolverConfig,
    y0: &DVector<f64>,
) -> Result<SolveReport> {
    cfg.validate()?;
    let mut z = DualPoint::new(y0.clone(), tau_fixed)?;
    let mut ev = eval_f(&z, problem)?;
    let mut rho = ev.f_y.norm();
    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxIters;

    for k in 0..=cfg.max_iter {
        if rho <= cfg.eps {
            status = SolveStatus::Converged;
        }
        if rho <= cfg.eps || k == cfg.max_iter {
            trace.push(terminal_record(k, rho, tau_fixed, ev.max_exponent, z.y.norm()));
            break;
        }
        // −H is symmetric positive definite.
        let (h, _) = shape_hessian_block(problem, &ev.p, tau_fixed);
        let neg_h = -h;
        let d = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&ev.f_y),
            None => BunchKaufman::factor(&neg_h)?.solve_refined(&neg_h, &ev.f_y),
        };
        let linear_residual = (&neg_h * &d - &ev.f_y).norm() / rho;

        let mut max_exponent = ev.max_exponent;
        let mut accepted = None;
        let mut alpha = 1.0;
        for ell in 0..=cfg.max_backtracks {
            let trial = DualPoint { y: &z.y + &d * alpha, tau: tau_fixed };
            let tev = eval_f(&trial, problem)?;
            max_exponent = max_exponent.max(tev.max_exponent);
            let trho = tev.f_y.norm();
            if trho <= rho * (1.0 - cfg.mu * alpha) && trho < rho {
                accepted = Some((alpha, ell, trial, tev, trho));
                break;
            }
            alpha *= cfg.gamma;
        }
        let mut record = IterationRecord {
            k,
            rho,
            alpha: 0.0,
            alpha_bar: 1.0,
            backtracks: cfg.max_backtracks + 1,
            tau: tau_fixed,
            eta_k: 0.0,
            max_exponent,
            step_norm: d.norm(),
            y_norm: z.y.norm(),
            linear_residual,
        };
        match accepted {
            Some((alpha, ell, trial, tev, trho)) => {
                record.alpha = alpha;
                record.backtracks = ell;
                trace.push(record);
                z = trial;
                ev = tev;
                rho = trho;
            }
            None => {
                trace.push(record);
                status = SolveStatus::LineSearchFailure;
                break;
            }
        }
    }

    let x_final = &ev.p * tau_fixed;
    Ok(SolveReport {
        status,
        trace,
        z_final: z,
        x_final,
        certificate: None,
        tau_hat_min: tau_fixed,
        iterates: Vec::new(),
    })
}

/// Newton on the classical dual gradient with Armijo backtracking and a
/// step-halving overflow safeguard.
pub fn solve_classical(problem: &ProblemData, cfg: &SolverConfig, y0: &DVector<f64>) -> Result<SolveReport> {
    cfg.validate()?;
    let m = problem.m();
    if y0.len() != m {
        return Err(Error::Contract(format!("y0 has length {} but the problem has {m} rows", y0.len())));
    }
    let lambda = problem.lambda();
    let a = problem.a();
    let mut y = y0.clone();
    let mut g = classical_dual_gradient(&y, problem);
    let mut gnorm = g.grad.norm();
    let mut psi = classical_dual_objective(&y, problem);
    if !gnorm.is_finite() {
        return Err(Error::domain("classical gradient overflows at the starting point"));
    }
    let max_exp_of = |y: &DVector<f64>| classical_exponents(y, problem).max();

    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxIters;
    for k in 0..=cfg.max_iter {
        if gnorm <= cfg.eps {
            status = SolveStatus::Converged;
        }
        if gnorm <= cfg.eps || k == cfg.max_iter {
            trace.push(terminal_record(k, gnorm, g.x.sum(), g.max_exponent, y.norm()));
            break;
        }

        let mut scaled = a.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= g.x[j];
        }
        let mut hess = scaled * a.transpose();
        for i in 0..m {
            hess[(i, i)] += lambda;
        }
        let chol = if hess.iter().all(|v| v.is_finite()) { hess.clone().cholesky() } else { None };
        let Some(chol) = chol else {
            trace.push(terminal_record(k, gnorm, g.x.sum(), g.max_exponent, y.norm()));
            status = SolveStatus::Overflow;
            break;
        };
        let d = chol.solve(&g.grad);
        let linear_residual = (&hess * &d - &g.grad).norm() / gnorm;
        let full_exponent = max_exp_of(&(&y + &d));

        let mut alpha = 1.0;
        let mut halvings = 0;
        while max_exp_of(&(&y + &d * alpha)) > LOG_MAX_FINITE && halvings <= cfg.max_backtracks {
            alpha *= 0.5;
            halvings += 1;
        }
        let mut record = IterationRecord {
            k,
            rho: gnorm,
            alpha: 0.0,
            alpha_bar: alpha,
            backtracks: cfg.max_backtracks + 1,
            tau: g.x.sum(),
            eta_k: 0.0,
            max_exponent: full_exponent,
            step_norm: d.norm(),
            y_norm: y.norm(),
            linear_residual,
        };
        if halvings > cfg.max_backtracks {
            trace.push(record);
            status = SolveStatus::Overflow;
            break;
        }

        let slope = g.grad.dot(&d);
        let mut accepted = None;
        for ell in 0..=cfg.max_backtracks {
            let trial = &y + &d * alpha;
            let tg = classical_dual_gradient(&trial, problem);
            let tnorm = tg.grad.norm();
            let tpsi = classical_dual_objective(&trial, problem);
            let ok = tnorm.is_finite()
                && match cfg.classical_armijo {
                    ArmijoTest::Objective => tpsi >= psi + cfg.mu * alpha * slope,
                    ArmijoTest::GradientNorm => tnorm <= (1.0 - cfg.mu * alpha) * gnorm,
                };
            if ok {
                accepted = Some((alpha, ell, trial, tg, tnorm, tpsi));
                break;
            }
            alpha *= cfg.gamma;
        }
        match accepted {
            Some((alpha, ell, trial, tg, tnorm, tpsi)) => {
                record.alpha = alpha;
                record.backtracks = ell;
                trace.push(record);
                y = trial;
                g = tg;
                gnorm = tnorm;
                psi = tpsi;
            }
            None => {
                trace.push(record);
                status = SolveStatus::LineSearchFailure;
                break;
            }
        }
    }

    let tau = g.x.sum();
    let z_final = DualPoint { y, tau };
    Ok(SolveReport { status, trace, z_final, x_final: g.x, certificate: None, tau_hat_min: 0.0, iterates: Vec::new() })
}
