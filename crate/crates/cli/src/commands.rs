use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use scaleshape::experiments::{
    default_path_grid, run_overflow_experiment, run_path_experiment, run_scale_experiment, OVERFLOW_SCALES,
    RECOVERY_SCALES,
};
use scaleshape::report::{emit_overflow, emit_path, emit_scale, write_csv, IterationRow, SweepRow};
use scaleshape::sensitivity::log_grid;
use scaleshape::{
    gen_ueg, level_bounds, rate_certificate, regularization_path, resolve_differences, solution_jacobians, solve,
    solve_classical, solve_fixed_scale, DualPoint, PathOptions, ProblemData, SolveReport, SolverConfig, UegSpec,
};

use crate::{CertificateArgs, Experiment, GenArgs, Method, RunArgs, SensitivityArgs, SolveArgs, SweepArgs};

/// Each command returns `Ok(false)` when it ran to completion but some
/// requested solve did not converge.
type Outcome = Result<bool>;

fn load_problem(path: &Path, lambda: Option<f64>) -> Result<ProblemData> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let problem = ProblemData::from_json_str(&text).with_context(|| format!("loading {}", path.display()))?;
    Ok(match lambda {
        Some(l) => problem.with_lambda(l)?,
        None => problem,
    })
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Nested JSON objects as `dotted.key  value` lines.
fn key_values(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                key_values(&key, v, out);
            }
        }
        Value::Null => out.push((prefix.to_string(), "inf or nan".into())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn print_table(value: &Value) {
    let mut rows = Vec::new();
    key_values("", value, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        println!("{k:<width$}  {v}");
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn spectral(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn run_solve(problem: &ProblemData, args: &SolveArgs, cfg: &SolverConfig) -> Result<SolveReport> {
    let m = problem.m();
    let report = match (args.method, args.fixed_tau) {
        (Method::Classical, _) => solve_classical(problem, cfg, &DVector::zeros(m))?,
        (Method::ScaleShape, Some(tau)) => solve_fixed_scale(problem, tau, cfg, &DVector::zeros(m))?,
        (Method::ScaleShape, None) => solve(problem, cfg, &DualPoint::new(DVector::zeros(m), args.tau0)?)?,
    };
    Ok(report)
}

pub fn solve_cmd(args: &SolveArgs) -> Outcome {
    let problem = load_problem(&args.problem, args.lambda)?;
    let cfg = args.solver.config();
    let report = run_solve(&problem, args, &cfg)?;
    if let Some(path) = &args.trace {
        write_csv(path, &IterationRow::from_report(&report))?;
    }
    let summary = json!({
        "status": report.status.to_string(),
        "iterations": report.iterations(),
        "final_residual": report.final_rho(),
        "tau": report.z_final.tau,
        "mass": report.x_final.sum(),
        "objective": problem.primal_objective(&report.x_final),
        "iterations_bound": report.certificate.map(|c| c.iters_to_eps(cfg.eps)),
    });
    if args.json {
        let mut full = summary;
        full["x"] = json!(report.x_final.as_slice());
        full["y"] = json!(report.z_final.y.as_slice());
        print_json(&full)?;
    } else {
        print_table(&summary);
        println!("x  {:?}", report.x_final.as_slice());
    }
    Ok(report.converged())
}

pub fn certificates(args: &CertificateArgs) -> Outcome {
    let problem = load_problem(&args.problem, args.lambda)?;
    let cfg = args.solver.config();
    let z0 = DualPoint::origin(problem.m());
    let value = match rate_certificate(&problem, &cfg, &z0) {
        Ok(cert) => {
            let mut v = serde_json::to_value(cert)?;
            v["iters_to_eps"] = json!(cert.iters_to_eps(cfg.eps));
            v
        }
        // The level bounds remain meaningful when the rate chain is vacuous.
        Err(e) => {
            let rho0 = scaleshape::eval_f(&z0, &problem)?.rho;
            let level = level_bounds(&problem, cfg.beta_factor * rho0)?;
            json!({ "level": level, "rate_certificate_error": e.to_string() })
        }
    };
    let mut out = json!({ "data": problem.constants() });
    if let (Value::Object(dst), Value::Object(src)) = (&mut out, value) {
        dst.extend(src);
    }
    if args.json {
        print_json(&out)?;
    } else {
        print_table(&out);
    }
    Ok(true)
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn sensitivity(args: &SensitivityArgs) -> Outcome {
    let problem = load_problem(&args.problem, args.lambda)?;
    let cfg = SolverConfig { eps: 1e-12, ..SolverConfig::default() };
    let report = solve(&problem, &cfg, &DualPoint::origin(problem.m()))?;
    if !report.converged() {
        bail!("solve ended with status {} at residual {:.3e}", report.status, report.final_rho());
    }
    let z = &report.z_final;
    let jac = solution_jacobians(&problem, z)?;
    let identity = (&jac.d_lambda + &jac.d_b * &z.y).norm();
    let mut out = json!({
        "norm_d_b": spectral(&jac.d_b),
        "norm_d_lambda": jac.d_lambda.norm(),
        "norm_d_r": spectral(&jac.d_r),
        "lambda_identity_residual": identity,
    });
    let mut ok = true;
    if args.check_fd {
        let fd = resolve_differences(&problem, z, &cfg, args.fd_step)?;
        let lambda_err = (&fd.d_lambda - &jac.d_lambda).norm() / jac.d_lambda.norm().max(1e-300);
        let errs = [rel_err(&fd.d_b, &jac.d_b), lambda_err, rel_err(&fd.d_r, &jac.d_r)];
        ok = errs.iter().all(|e| *e <= args.fd_tol);
        out["fd"] = json!({
            "step": args.fd_step,
            "tolerance": args.fd_tol,
            "rel_err_d_b": errs[0],
            "rel_err_d_lambda": errs[1],
            "rel_err_d_r": errs[2],
            "pass": ok,
        });
    }
    if args.json {
        out["d_b"] = json!(matrix_rows(&jac.d_b));
        out["d_lambda"] = json!(jac.d_lambda.as_slice());
        out["d_r"] = json!(matrix_rows(&jac.d_r));
        print_json(&out)?;
    } else {
        print_table(&out);
    }
    Ok(ok)
}

pub fn sweep_lambda(args: &SweepArgs) -> Outcome {
    let problem = load_problem(&args.problem, None)?;
    let grid = log_grid(args.from, args.to, args.points)?;
    let opts = PathOptions { config: args.solver.config(), warm_start: !args.cold, fixed_tau: args.fixed_tau };
    let sweep = regularization_path(&problem, &grid, &opts)?;
    write_csv(&args.out, &SweepRow::from_sweep(&sweep))?;
    let converged = sweep.records.iter().filter(|r| r.status.converged()).count();
    println!("points            {}", sweep.records.len());
    println!("converged         {converged}");
    println!("h_nonincreasing   {}", sweep.h_nonincreasing);
    println!("f_nondecreasing   {}", sweep.f_nondecreasing);
    println!("wrote             {}", args.out.display());
    Ok(converged == sweep.records.len())
}

pub fn gen_problem(args: &GenArgs) -> Outcome {
    let spec = UegSpec {
        m: args.m,
        n: args.n,
        beta_temp: args.beta_temp,
        omega_min: args.omega_min,
        omega_max: args.omega_max,
        scale_z: args.scale,
        noise_rel: args.noise,
        seed: args.seed,
        lambda: args.lambda,
        ..UegSpec::default()
    };
    let inst = gen_ueg(&spec)?;
    let text = serde_json::to_string(&inst.problem.to_file())?;
    fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} ({}x{}, Z = {}, smallest raw prior weight {:.3e})",
        args.out.display(),
        args.m,
        args.n,
        args.scale,
        inst.raw_prior_min
    );
    Ok(true)
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

pub fn run(args: &RunArgs) -> Outcome {
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let base = UegSpec { m: args.m, n: args.n, seed: args.seed, ..UegSpec::default() };
    let cfg = args.solver.config();
    let ok = match args.experiment {
        Experiment::Overflow => {
            let scales = args.scales.clone().unwrap_or_else(|| OVERFLOW_SCALES.to_vec());
            let table = run_overflow_experiment(&base, &scales, args.lambda, &cfg)?;
            println!(
                "{:>8}  {:>20}  {:>14}  {:>12}  {:>6}",
                "Z", "classical", "first exponent", "scale-shape", "iters"
            );
            for r in &table.summary {
                println!(
                    "{:>8}  {:>20}  {:>14.1}  {:>12}  {:>6}",
                    r.z, r.classical_status, r.classical_first_exponent, r.scaleshape_status, r.scaleshape_iterations
                );
            }
            print_files(&emit_overflow(&table, &args.out_dir)?);
            // Any classical outcome is a completed run; only errors count against it.
            table.summary.iter().all(|r| r.scaleshape_status == "converged" && !r.classical_status.starts_with("error"))
        }
        Experiment::Scale => {
            let scales = args.scales.clone().unwrap_or_else(|| RECOVERY_SCALES.to_vec());
            let table = run_scale_experiment(&base, &scales, args.lambda, &cfg)?;
            println!("{:>8}  {:>12}  {:>12}  {:>6}  status", "Z", "tau", "rel error", "iters");
            for r in &table.summary {
                println!(
                    "{:>8}  {:>12.6}  {:>12.3e}  {:>6}  {}",
                    r.z, r.tau_final, r.rel_scale_error, r.iterations, r.status
                );
            }
            print_files(&emit_scale(&table, &args.out_dir)?);
            table.summary.iter().all(|r| r.status == "converged")
        }
        Experiment::Path => {
            let scales = args.scales.clone().unwrap_or_else(|| RECOVERY_SCALES.to_vec());
            let table = run_path_experiment(&base, &scales, &default_path_grid(), &cfg, true)?;
            for s in &table.summary {
                println!(
                    "Z = {:<6} {:<5}  all converged {:<5}  h nonincreasing {:<5}  f nondecreasing {}",
                    s.z, s.mode, s.all_converged, s.h_nonincreasing, s.f_nondecreasing
                );
            }
            print_files(&emit_path(&table, &args.out_dir)?);
            table.summary.iter().all(|s| s.all_converged)
        }
    };
    Ok(ok)
}
