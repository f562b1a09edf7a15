//! The three UEG experiment protocols: overflow resilience against the
//! classical comparator, scale recovery from a unit start, and the
//! regularization path. Each cell's failure is recorded in its row.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dual::DualPoint;
use crate::error::Result;
use crate::sensitivity::{log_grid, regularization_path, PathOptions};
use crate::solver::{solve, solve_classical, SolveReport, SolverConfig};
use crate::ueg::{gen_ueg, UegSpec};

pub const OVERFLOW_SCALES: [f64; 4] = [16.0, 64.0, 256.0, 1024.0];
pub const RECOVERY_SCALES: [f64; 3] = [1.0, 10.0, 100.0];

/// Fifteen half-decade points from `1e-1` down to `1e-8`.
pub fn default_path_grid() -> Vec<f64> {
    log_grid(1e-1, 1e-8, 15).expect("static grid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub z: f64,
    pub solver: String,
    pub k: usize,
    pub rho: f64,
    pub alpha: f64,
    pub max_exponent: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverflowRow {
    pub z: f64,
    pub classical_status: String,
    pub classical_iterations: usize,
    pub classical_final_grad: f64,
    /// Unsafeguarded full-step exponent at the first iteration.
    pub classical_first_exponent: f64,
    pub classical_peak_exponent: f64,
    pub scaleshape_status: String,
    pub scaleshape_iterations: usize,
    pub scaleshape_final_rho: f64,
    pub scaleshape_peak_exponent: f64,
}

#[derive(Debug, Clone, Default)]
pub struct OverflowTable {
    pub summary: Vec<OverflowRow>,
    pub traces: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub z: f64,
    pub tau_final: f64,
    pub rel_scale_error: f64,
    pub iterations: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub z: f64,
    pub omega: f64,
    /// Recovered `x / Z`.
    pub normalized: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ScaleTable {
    pub summary: Vec<ScaleRow>,
    pub recovery: Vec<RecoveryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub z: f64,
    /// `free` or `fixed` scale.
    pub mode: String,
    pub lambda: f64,
    pub residual: f64,
    pub rel_residual: f64,
    pub h: f64,
    pub f: f64,
    pub tau: f64,
    pub iterations: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummaryRow {
    pub z: f64,
    pub mode: String,
    pub all_converged: bool,
    pub h_nonincreasing: bool,
    pub f_nondecreasing: bool,
}

#[derive(Debug, Clone, Default)]
pub struct PathTable {
    pub rows: Vec<PathRow>,
    pub summary: Vec<PathSummaryRow>,
}

fn trace_rows<'a>(z: f64, solver: &str, rep: &'a SolveReport) -> impl Iterator<Item = TraceRow> + 'a {
    let solver = solver.to_string();
    rep.trace.iter().map(move |r| TraceRow {
        z,
        solver: solver.clone(),
        k: r.k,
        rho: r.rho,
        alpha: r.alpha,
        max_exponent: r.max_exponent,
        tau: r.tau,
    })
}

fn peak_exponent(rep: &SolveReport) -> f64 {
    rep.trace.iter().map(|r| r.max_exponent).fold(f64::NEG_INFINITY, f64::max)
}

pub fn run_overflow_experiment(
    base: &UegSpec,
    scales: &[f64],
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<OverflowTable> {
    let mut table = OverflowTable::default();
    for &z in scales {
        let inst = gen_ueg(&UegSpec { scale_z: z, lambda, ..*base })?;
        let pr = &inst.problem;
        let mut row = OverflowRow {
            z,
            classical_status: String::new(),
            classical_iterations: 0,
            classical_final_grad: f64::NAN,
            classical_first_exponent: f64::NAN,
            classical_peak_exponent: f64::NAN,
            scaleshape_status: String::new(),
            scaleshape_iterations: 0,
            scaleshape_final_rho: f64::NAN,
            scaleshape_peak_exponent: f64::NAN,
        };
        match solve_classical(pr, cfg, &DVector::zeros(pr.m())) {
            Ok(rep) => {
                row.classical_status = rep.status.to_string();
                row.classical_iterations = rep.iterations();
                row.classical_final_grad = rep.final_rho();
                row.classical_first_exponent = rep.trace[0].max_exponent;
                row.classical_peak_exponent = peak_exponent(&rep);
                table.traces.extend(trace_rows(z, "classical", &rep));
            }
            Err(e) => row.classical_status = format!("error: {e}"),
        }
        match solve(pr, cfg, &DualPoint::origin(pr.m())) {
            Ok(rep) => {
                row.scaleshape_status = rep.status.to_string();
                row.scaleshape_iterations = rep.iterations();
                row.scaleshape_final_rho = rep.final_rho();
                row.scaleshape_peak_exponent = peak_exponent(&rep);
                table.traces.extend(trace_rows(z, "scale-shape", &rep));
            }
            Err(e) => row.scaleshape_status = format!("error: {e}"),
        }
        table.summary.push(row);
    }
    Ok(table)
}

pub fn run_scale_experiment(base: &UegSpec, scales: &[f64], lambda: f64, cfg: &SolverConfig) -> Result<ScaleTable> {
    let mut table = ScaleTable::default();
    for &z in scales {
        let inst = gen_ueg(&UegSpec { scale_z: z, lambda, ..*base })?;
        let pr = &inst.problem;
        match solve(pr, cfg, &DualPoint::origin(pr.m())) {
            Ok(rep) => {
                let tau = rep.z_final.tau;
                table.summary.push(ScaleRow {
                    z,
                    tau_final: tau,
                    rel_scale_error: (tau - z).abs() / z,
                    iterations: rep.iterations(),
                    status: rep.status.to_string(),
                });
                for (j, &w) in inst.omega.iter().enumerate() {
                    table.recovery.push(RecoveryRow {
                        z,
                        omega: w,
                        normalized: rep.x_final[j] / z,
                        truth: inst.truth.p[j],
                    });
                }
            }
            Err(e) => table.summary.push(ScaleRow {
                z,
                tau_final: f64::NAN,
                rel_scale_error: f64::NAN,
                iterations: 0,
                status: format!("error: {e}"),
            }),
        }
    }
    Ok(table)
}

/// Cold-started free-scale sweeps for every `Z`; with `fixed_scale`, also
/// the fixed-scale sweep at `τ = Z`.
pub fn run_path_experiment(
    base: &UegSpec,
    scales: &[f64],
    lambda_grid: &[f64],
    cfg: &SolverConfig,
    fixed_scale: bool,
) -> Result<PathTable> {
    let mut table = PathTable::default();
    for &z in scales {
        let inst = gen_ueg(&UegSpec { scale_z: z, ..*base })?;
        let mut modes = vec![("free", None)];
        if fixed_scale {
            modes.push(("fixed", Some(z)));
        }
        for (mode, fixed_tau) in modes {
            let opts = PathOptions { config: *cfg, warm_start: false, fixed_tau };
            let sweep = regularization_path(&inst.problem, lambda_grid, &opts)?;
            table.summary.push(PathSummaryRow {
                z,
                mode: mode.to_string(),
                all_converged: sweep.records.iter().all(|r| r.status.converged()),
                h_nonincreasing: sweep.h_nonincreasing,
                f_nondecreasing: sweep.f_nondecreasing,
            });
            table.rows.extend(sweep.records.iter().map(|r| PathRow {
                z,
                mode: mode.to_string(),
                lambda: r.lambda,
                residual: r.residual,
                rel_residual: r.rel_residual,
                h: r.data_fit_h,
                f: r.entropy_f,
                tau: r.tau,
                iterations: r.iterations,
                status: r.status.to_string(),
            }));
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UegSpec {
        UegSpec { m: 21, n: 40, ..UegSpec::default() }
    }

    #[test]
    fn one_row_per_cell() {
        let cfg = SolverConfig::default();
        let grid = [1e-1, 1e-2, 1e-3];
        let t = run_path_experiment(&small(), &[1.0, 10.0], &grid, &cfg, true).unwrap();
        assert_eq!(t.rows.len(), 2 * 2 * grid.len());
        assert_eq!(t.summary.len(), 4);

        let s = run_scale_experiment(&small(), &[1.0, 10.0], 1e-3, &cfg).unwrap();
        assert_eq!(s.summary.len(), 2);
        assert_eq!(s.recovery.len(), 2 * 40);

        let o = run_overflow_experiment(&small(), &[1.0], 1.0, &cfg).unwrap();
        assert_eq!(o.summary.len(), 1);
        assert!(o.traces.iter().any(|r| r.solver == "classical"));
        assert!(o.traces.iter().any(|r| r.solver == "scale-shape"));
    }

    #[test]
    fn well_conditioned_control_has_no_overflow() {
        let t = run_overflow_experiment(&small(), &[1.0], 1.0, &SolverConfig::default()).unwrap();
        let row = &t.summary[0];
        assert_eq!(row.classical_status, "converged");
        assert_eq!(row.scaleshape_status, "converged");
        assert!(row.classical_peak_exponent < 709.0);
        assert!(row.scaleshape_peak_exponent <= 0.0);
    }

    #[test]
    fn default_grid_is_half_decades() {
        let g = default_path_grid();
        assert_eq!(g.len(), 15);
        assert!((g[0] - 0.1).abs() < 1e-15);
    }
}
