//! CSV tables and small SVG line charts for the experiment outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    OverflowRow, OverflowTable, PathRow, PathSummaryRow, PathTable, RecoveryRow, ScaleRow, ScaleTable, TraceRow,
};
use crate::sensitivity::PathSweep;
use crate::solver::SolveReport;

/// A row type with a fixed column schema, so empty tables still get a header.
pub trait CsvRow: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

impl CsvRow for TraceRow {
    const HEADER: &'static [&'static str] = &["z", "solver", "k", "rho", "alpha", "max_exponent", "tau"];
}

impl CsvRow for OverflowRow {
    const HEADER: &'static [&'static str] = &[
        "z",
        "classical_status",
        "classical_iterations",
        "classical_final_grad",
        "classical_first_exponent",
        "classical_peak_exponent",
        "scaleshape_status",
        "scaleshape_iterations",
        "scaleshape_final_rho",
        "scaleshape_peak_exponent",
    ];
}

impl CsvRow for ScaleRow {
    const HEADER: &'static [&'static str] = &["z", "tau_final", "rel_scale_error", "iterations", "status"];
}

impl CsvRow for RecoveryRow {
    const HEADER: &'static [&'static str] = &["z", "omega", "normalized", "truth"];
}

impl CsvRow for PathRow {
    const HEADER: &'static [&'static str] =
        &["z", "mode", "lambda", "residual", "rel_residual", "h", "f", "tau", "iterations", "status"];
}

impl CsvRow for PathSummaryRow {
    const HEADER: &'static [&'static str] = &["z", "mode", "all_converged", "h_nonincreasing", "f_nondecreasing"];
}

/// One point of a single regularization-path sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub residual: f64,
    pub rel_residual: f64,
    pub h: f64,
    pub f: f64,
    pub tau: f64,
    pub iterations: usize,
    pub status: String,
}

impl CsvRow for SweepRow {
    const HEADER: &'static [&'static str] =
        &["lambda", "residual", "rel_residual", "h", "f", "tau", "iterations", "status"];
}

impl SweepRow {
    pub fn from_sweep(sweep: &PathSweep) -> Vec<SweepRow> {
        sweep
            .records
            .iter()
            .map(|r| SweepRow {
                lambda: r.lambda,
                residual: r.residual,
                rel_residual: r.rel_residual,
                h: r.data_fit_h,
                f: r.entropy_f,
                tau: r.tau,
                iterations: r.iterations,
                status: r.status.to_string(),
            })
            .collect()
    }
}

/// Per-iteration trace of a single solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub k: usize,
    pub rho: f64,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub backtracks: u32,
    pub tau: f64,
    pub eta_k: f64,
    pub max_exponent: f64,
}

impl CsvRow for IterationRow {
    const HEADER: &'static [&'static str] =
        &["k", "rho", "alpha", "alpha_bar", "backtracks", "tau", "eta_k", "max_exponent"];
}

impl IterationRow {
    pub fn from_report(report: &SolveReport) -> Vec<IterationRow> {
        report
            .trace
            .iter()
            .map(|r| IterationRow {
                k: r.k,
                rho: r.rho,
                alpha: r.alpha,
                alpha_bar: r.alpha_bar,
                backtracks: r.backtracks,
                tau: r.tau,
                eta_k: r.eta_k,
                max_exponent: r.max_exponent,
            })
            .collect()
    }
}

pub fn write_csv<T: CsvRow>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(T::HEADER).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_csv<T: CsvRow>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LineChart {
    fn transform(&self, (x, y): (f64, f64)) -> Option<(f64, f64)> {
        let tx = if self.log_x { x.log10() } else { x };
        let ty = if self.log_y { y.log10() } else { y };
        (tx.is_finite() && ty.is_finite()).then_some((tx, ty))
    }

    pub fn to_svg(&self) -> String {
        let pts: Vec<Vec<(f64, f64)>> =
            self.series.iter().map(|s| s.points.iter().filter_map(|&p| self.transform(p)).collect()).collect();
        let all = pts.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 <= 0.0 {
            y1 = y0 + 1.0;
        }
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let tick = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3e}") };

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for (v, anchor) in [(x0, "start"), (x1, "end")] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{}</text>"#,
                px(v),
                HEIGHT - MARGIN + 16.0,
                tick(v, self.log_x)
            );
        }
        for v in [y0, y1] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN - 4.0,
                py(v) + 4.0,
                tick(v, self.log_y)
            );
        }
        for (i, (s, p)) in self.series.iter().zip(&pts).enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if !p.is_empty() {
                let d: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    d.join(" ")
                );
            }
            let ly = MARGIN + 16.0 * (i as f64 + 1.0);
            let lx = WIDTH - MARGIN - 120.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
                lx + 18.0
            );
            let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&s.name));
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_svg()).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

/// Distinct values in first-seen order.
fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

pub fn emit_overflow(table: &OverflowTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let summary = out_dir.join("overflow_summary.csv");
    let traces = out_dir.join("overflow_traces.csv");
    let chart = out_dir.join("overflow.svg");
    write_csv(&summary, &table.summary)?;
    write_csv(&traces, &table.traces)?;
    let mut series = Vec::new();
    for z in distinct(table.traces.iter().map(|r| r.z)) {
        for solver in ["classical", "scale-shape"] {
            let points: Vec<(f64, f64)> =
                table.traces.iter().filter(|r| r.z == z && r.solver == solver).map(|r| (r.k as f64, r.rho)).collect();
            if !points.is_empty() {
                series.push(Series { name: format!("{solver} Z={z}"), points });
            }
        }
    }
    LineChart {
        title: "Residual history".into(),
        x_label: "iteration".into(),
        y_label: "residual norm".into(),
        log_x: false,
        log_y: true,
        series,
    }
    .write(&chart)?;
    Ok(vec![summary, traces, chart])
}

pub fn emit_scale(table: &ScaleTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let summary = out_dir.join("scale_summary.csv");
    let recovery = out_dir.join("scale_recovery.csv");
    let chart = out_dir.join("scale.svg");
    write_csv(&summary, &table.summary)?;
    write_csv(&recovery, &table.recovery)?;
    let zs = distinct(table.recovery.iter().map(|r| r.z));
    let mut series: Vec<Series> = zs
        .iter()
        .map(|&z| Series {
            name: format!("x/Z, Z={z}"),
            points: table.recovery.iter().filter(|r| r.z == z).map(|r| (r.omega, r.normalized)).collect(),
        })
        .collect();
    if let Some(&z) = zs.first() {
        series.push(Series {
            name: "truth".into(),
            points: table.recovery.iter().filter(|r| r.z == z).map(|r| (r.omega, r.truth)).collect(),
        });
    }
    LineChart {
        title: "Normalized recovery".into(),
        x_label: "frequency".into(),
        y_label: "x / Z".into(),
        series,
        ..LineChart::default()
    }
    .write(&chart)?;
    Ok(vec![summary, recovery, chart])
}

pub fn emit_path(table: &PathTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let rows = out_dir.join("path.csv");
    let summary = out_dir.join("path_summary.csv");
    let chart = out_dir.join("path.svg");
    write_csv(&rows, &table.rows)?;
    write_csv(&summary, &table.summary)?;
    let free = || table.rows.iter().filter(|r| r.mode == "free");
    let series = distinct(free().map(|r| r.z))
        .into_iter()
        .map(|z| Series {
            name: format!("Z={z}"),
            points: free().filter(|r| r.z == z).map(|r| (r.lambda, r.rel_residual)).collect(),
        })
        .collect();
    LineChart {
        title: "Relative residual along the regularization path".into(),
        x_label: "lambda".into(),
        y_label: "relative residual".into(),
        log_x: true,
        log_y: true,
        series,
    }
    .write(&chart)?;
    Ok(vec![rows, summary, chart])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_has_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_csv::<SweepRow>(&path, &[]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "lambda,residual,rel_residual,h,f,tau,iterations,status\n");
        assert!(read_csv::<SweepRow>(&path).unwrap().is_empty());
    }

    #[test]
    fn rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows = vec![
            PathRow {
                z: 10.0,
                mode: "free".into(),
                lambda: 1e-5,
                residual: 0.125,
                rel_residual: 2.5e-4,
                h: 7.8125e-3,
                f: -3.0,
                tau: 9.99,
                iterations: 12,
                status: "converged".into(),
            },
            PathRow {
                z: 1.0,
                mode: "fixed".into(),
                lambda: 0.1,
                residual: f64::NAN,
                rel_residual: f64::NAN,
                h: f64::NAN,
                f: f64::NAN,
                tau: f64::NAN,
                iterations: 0,
                status: "error: domain error: x".into(),
            },
        ];
        write_csv(&path, &rows).unwrap();
        let back: Vec<PathRow> = read_csv(&path).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].residual.is_nan());
        assert_eq!(back[1].status, rows[1].status);
    }

    fn serde_header<T: CsvRow>(row: &T) -> String {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut w = csv::Writer::from_path(&path).unwrap();
        w.serialize(row).unwrap();
        w.flush().unwrap();
        fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string()
    }

    #[test]
    fn header_matches_serialized_fields() {
        let row =
            TraceRow { z: 1.0, solver: "classical".into(), k: 0, rho: 1.0, alpha: 1.0, max_exponent: -1.0, tau: 1.0 };
        assert_eq!(serde_header(&row), TraceRow::HEADER.join(","));
        let row = IterationRow {
            k: 0,
            rho: 1.0,
            alpha: 1.0,
            alpha_bar: 1.0,
            backtracks: 0,
            tau: 1.0,
            eta_k: 0.0,
            max_exponent: 0.0,
        };
        assert_eq!(serde_header(&row), IterationRow::HEADER.join(","));
        let row = SweepRow {
            lambda: 1.0,
            residual: 0.0,
            rel_residual: 0.0,
            h: 0.0,
            f: 0.0,
            tau: 1.0,
            iterations: 1,
            status: "converged".into(),
        };
        assert_eq!(serde_header(&row), SweepRow::HEADER.join(","));
    }

    #[test]
    fn path_chart_has_one_curve_per_scale() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = PathTable::default();
        for z in [1.0, 10.0, 100.0] {
            for (i, lambda) in [1e-1, 1e-2, 1e-3].into_iter().enumerate() {
                table.rows.push(PathRow {
                    z,
                    mode: "free".into(),
                    lambda,
                    residual: 1.0,
                    rel_residual: 1e-3 / (i + 1) as f64,
                    h: 0.5,
                    f: 0.0,
                    tau: z,
                    iterations: 7,
                    status: "converged".into(),
                });
            }
        }
        let files = emit_path(&table, dir.path()).unwrap();
        let svg = fs::read_to_string(&files[2]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn chart_survives_empty_and_nonpositive_data() {
        let chart = LineChart {
            log_y: true,
            series: vec![Series { name: "a<b".into(), points: vec![(1.0, 0.0), (2.0, -1.0)] }],
            ..LineChart::default()
        };
        let svg = chart.to_svg();
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
    }
}
