//! Derivatives of the solution map `(b, λ, r) ↦ x*`, the joint perturbation
//! bound, and regularization-path sweeps.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dual::{eval_f, DualPoint};
use crate::error::{Error, Result};
use crate::problem::{relative_entropy, ProblemData};
use crate::scalar::LogWeights;
use crate::solver::{solve, solve_fixed_scale, SolveStatus, SolverConfig};

#[derive(Debug, Clone)]
pub struct SolutionJacobians {
    /// `∂x*/∂b`, `n × m`.
    pub d_b: DMatrix<f64>,
    /// `∂x*/∂λ`.
    pub d_lambda: DVector<f64>,
    /// `∂x*/∂r` with `r = log q`, `n × n` and symmetric.
    pub d_r: DMatrix<f64>,
}

/// Jacobians at a root `z_star` of `F`, from one Cholesky factorization of
/// `H̃ = λI + τ A Diag(p) Aᵀ`.
pub fn solution_jacobians(problem: &ProblemData, z_star: &DualPoint) -> Result<SolutionJacobians> {
    let ev = eval_f(z_star, problem)?;
    let tau = z_star.tau;
    let p = &ev.p;
    let a = problem.a();

    let mut ap = a.clone();
    for (j, mut col) in ap.column_iter_mut().enumerate() {
        col *= p[j];
    }
    let mut h = &ap * a.transpose() * tau;
    for i in 0..problem.m() {
        h[(i, i)] += problem.lambda();
    }
    let h = (&h + h.transpose()) * 0.5;
    let chol =
        h.cholesky().ok_or_else(|| Error::Factorization("λI + τ A Diag(p) Aᵀ is not positive definite".into()))?;
    // K = H̃⁻¹ A Diag(p).
    let k = chol.solve(&ap);

    let d_b = k.transpose() * tau;
    let d_lambda = -(&d_b * &z_star.y);
    let mut d_r = -(ap.transpose() * &k) * (tau * tau);
    for j in 0..problem.n() {
        d_r[(j, j)] += tau * p[j];
    }
    let d_r = (&d_r + d_r.transpose()) * 0.5;
    Ok(SolutionJacobians { d_b, d_lambda, d_r })
}

/// Central-difference Jacobians of the solution map from re-solves at
/// `b ± h e_i`, `r ± h e_j` and `λ(1 ± h)`, each warm-started at `z_star`.
pub fn resolve_differences(
    problem: &ProblemData,
    z_star: &DualPoint,
    cfg: &SolverConfig,
    h: f64,
) -> Result<SolutionJacobians> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::domain(format!("difference step must be positive, got {h}")));
    }
    let (m, n) = (problem.m(), problem.n());
    let x_at = |pr: &ProblemData| -> Result<DVector<f64>> {
        let rep = solve(pr, cfg, z_star)?;
        match rep.status {
            SolveStatus::Converged => Ok(rep.x_final),
            status => Err(Error::Contract(format!("perturbed re-solve ended with {status}"))),
        }
    };
    let central = |plus: ProblemData, minus: ProblemData, width: f64| -> Result<DVector<f64>> {
        Ok((x_at(&plus)? - x_at(&minus)?) / width)
    };

    let mut d_b = DMatrix::zeros(n, m);
    for i in 0..m {
        let mut e = DVector::zeros(m);
        e[i] = h;
        let col = central(problem.with_b(problem.b() + &e)?, problem.with_b(problem.b() - &e)?, 2.0 * h)?;
        d_b.set_column(i, &col);
    }
    let mut d_r = DMatrix::zeros(n, n);
    for j in 0..n {
        let shifted = |s: f64| -> Result<ProblemData> {
            let mut r = problem.r().as_slice().to_vec();
            r[j] += s;
            problem.with_prior(LogWeights::new(r)?)
        };
        d_r.set_column(j, &central(shifted(h)?, shifted(-h)?, 2.0 * h)?);
    }
    let dl = h * problem.lambda();
    let d_lambda =
        central(problem.with_lambda(problem.lambda() + dl)?, problem.with_lambda(problem.lambda() - dl)?, 2.0 * dl)?;
    Ok(SolutionJacobians { d_b, d_lambda, d_r })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointBound {
    pub bound: f64,
    /// Largest scale seen at the sampled path points.
    pub tau_bar: f64,
    /// Largest `‖y‖` seen at the sampled path points.
    pub y_bar: f64,
    pub lambda_minus: f64,
    pub path_samples: usize,
    /// Path maxima are estimated from samples, so the bound is too.
    pub sample_estimated: bool,
}

fn interpolate(p1: &ProblemData, p2: &ProblemData, t: f64) -> Result<ProblemData> {
    let b = p1.b() + (p2.b() - p1.b()) * t;
    let r: Vec<f64> = p1.r().as_slice().iter().zip(p2.r().as_slice()).map(|(u, v)| u + t * (v - u)).collect();
    let lambda = p1.lambda() + t * (p2.lambda() - p1.lambda());
    p1.with_b(b)?.with_prior(LogWeights::new(r)?)?.with_lambda(lambda)
}

/// Bound on `‖x*(P₂) − x*(P₁)‖` for problems that share `A` and `c`, with the
/// path maxima of `τ*` and `‖y*‖` estimated at `path_samples` points.
pub fn joint_lipschitz_bound(
    p1: &ProblemData,
    p2: &ProblemData,
    path_samples: usize,
    cfg: &SolverConfig,
) -> Result<JointBound> {
    if p1.a() != p2.a() || p1.c() != p2.c() {
        return Err(Error::Contract("perturbed problems must share A and c".into()));
    }
    if path_samples < 2 {
        return Err(Error::validation("path_samples", "need at least the two endpoints"));
    }
    let mut tau_bar: f64 = 0.0;
    let mut y_bar: f64 = 0.0;
    for s in 0..path_samples {
        let t = s as f64 / (path_samples - 1) as f64;
        let pt = interpolate(p1, p2, t)?;
        let rep = solve(&pt, cfg, &DualPoint::origin(pt.m()))?;
        if !rep.converged() {
            return Err(Error::domain(format!("path sample {s} did not converge: {}", rep.status)));
        }
        tau_bar = tau_bar.max(rep.z_final.tau);
        y_bar = y_bar.max(rep.z_final.y.norm());
    }

    let lambda_minus = p1.lambda().min(p2.lambda());
    let a_norm = p1.constants().a_opnorm;
    let gain = (tau_bar.sqrt() / (2.0 * lambda_minus.sqrt())).min(tau_bar * a_norm / lambda_minus);
    let db = (p2.b() - p1.b()).norm();
    let dl = (p2.lambda() - p1.lambda()).abs();
    let dr = p1.r().as_slice().iter().zip(p2.r().as_slice()).map(|(u, v)| (v - u) * (v - u)).sum::<f64>().sqrt();
    let bound = gain * (db + y_bar * dl) + tau_bar * dr;
    Ok(JointBound { bound, tau_bar, y_bar, lambda_minus, path_samples, sample_estimated: true })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PathStatus {
    Solved(SolveStatus),
    Failed(String),
}

impl PathStatus {
    pub fn converged(&self) -> bool {
        matches!(self, PathStatus::Solved(SolveStatus::Converged))
    }
}

impl fmt::Display for PathStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathStatus::Solved(s) => write!(f, "{s}"),
            PathStatus::Failed(msg) => write!(f, "error: {msg}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathRecord {
    pub lambda: f64,
    pub x: DVector<f64>,
    pub tau: f64,
    /// `‖Ax − b‖`.
    pub residual: f64,
    /// `‖Ax − b‖ / ‖b‖`.
    pub rel_residual: f64,
    /// `½‖Ax − b‖²`.
    pub data_fit_h: f64,
    /// `g_q(x) + ⟨c, x⟩`.
    pub entropy_f: f64,
    pub iterations: usize,
    pub status: PathStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOptions {
    pub config: SolverConfig,
    /// Start each solve from the previous grid point's solution.
    pub warm_start: bool,
    /// Hold the scale fixed and use the fixed-scale solver.
    pub fixed_tau: Option<f64>,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions { config: SolverConfig::default(), warm_start: true, fixed_tau: None }
    }
}

#[derive(Debug, Clone)]
pub struct PathSweep {
    pub records: Vec<PathRecord>,
    /// `h` nonincreasing as `λ` decreases, within `10·eps`, over converged points.
    pub h_nonincreasing: bool,
    /// `f` nondecreasing as `λ` decreases, within `10·eps`, over converged points.
    pub f_nondecreasing: bool,
}

/// Solves at each `λ` of a strictly descending grid. Failed points are
/// recorded with their status and the sweep continues.
pub fn regularization_path(problem: &ProblemData, lambda_grid: &[f64], opts: &PathOptions) -> Result<PathSweep> {
    if lambda_grid.is_empty() {
        return Err(Error::validation("lambda_grid", "is empty"));
    }
    if let Some(bad) = lambda_grid.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(Error::validation("lambda_grid", format!("entry {bad} is not positive")));
    }
    if lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::validation("lambda_grid", "must be strictly descending"));
    }
    if let Some(t) = opts.fixed_tau {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::validation("fixed_tau", format!("must be positive, got {t}")));
        }
    }

    let m = problem.m();
    let bnorm = problem.b().norm();
    let mut start = DualPoint { y: DVector::zeros(m), tau: opts.fixed_tau.unwrap_or(1.0) };
    let mut records = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let pl = problem.with_lambda(lambda)?;
        let outcome = match opts.fixed_tau {
            Some(t) => solve_fixed_scale(&pl, t, &opts.config, &start.y),
            None => solve(&pl, &opts.config, &start),
        };
        let record = match outcome {
            Ok(rep) => {
                let x = rep.x_final.clone();
                let residual = (pl.a() * &x - pl.b()).norm();
                let entropy_f = relative_entropy(&x, pl.r()) + pl.c().dot(&x);
                if opts.warm_start && rep.converged() {
                    start = rep.z_final.clone();
                }
                PathRecord {
                    lambda,
                    tau: x.sum(),
                    residual,
                    rel_residual: residual / bnorm,
                    data_fit_h: 0.5 * residual * residual,
                    entropy_f,
                    iterations: rep.iterations(),
                    status: PathStatus::Solved(rep.status),
                    x,
                }
            }
            Err(e) => PathRecord {
                lambda,
                x: DVector::from_element(problem.n(), f64::NAN),
                tau: f64::NAN,
                residual: f64::NAN,
                rel_residual: f64::NAN,
                data_fit_h: f64::NAN,
                entropy_f: f64::NAN,
                iterations: 0,
                status: PathStatus::Failed(e.to_string()),
            },
        };
        records.push(record);
    }

    let tol = 10.0 * opts.config.eps;
    let solved: Vec<&PathRecord> = records.iter().filter(|r| r.status.converged()).collect();
    let h_nonincreasing = solved.windows(2).all(|w| w[1].data_fit_h <= w[0].data_fit_h + tol);
    let f_nondecreasing = solved.windows(2).all(|w| w[1].entropy_f >= w[0].entropy_f - tol);
    Ok(PathSweep { records, h_nonincreasing, f_nondecreasing })
}

/// `n` points log-uniformly spaced from `from` down to `to`, inclusive.
pub fn log_grid(from: f64, to: f64, points: usize) -> Result<Vec<f64>> {
    if !(from > 0.0 && to > 0.0 && from.is_finite() && to.is_finite()) {
        return Err(Error::domain("grid endpoints must be positive and finite"));
    }
    match points {
        0 => Err(Error::domain("grid needs at least one point")),
        1 => Ok(vec![from]),
        _ => {
            let (lf, lt) = (from.ln(), to.ln());
            Ok((0..points).map(|i| (lf + (lt - lf) * i as f64 / (points - 1) as f64).exp()).collect())
        }
    }
}
