//! Metric aggregation, CSV output and SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use super::runner::ReplicateResult;
use super::scenario::{EstimatorId, ScenarioSpec};
use crate::error::{Error, Result};

/// All replicate results of one scenario at one trial size.
#[derive(Debug, Clone)]
pub struct Cell {
    pub scenario: ScenarioSpec,
    pub truth: f64,
    pub n_trial: usize,
    pub results: Vec<ReplicateResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub n_trial: usize,
    pub estimator: EstimatorId,
    pub truth: f64,
    /// Replicates with a successful estimate.
    pub reps_ok: usize,
    pub failures: usize,
    pub coverage: f64,
    pub power: f64,
    pub mean_psi_hat: f64,
    pub rel_se_mean: f64,
    pub rel_se_median: f64,
    pub rel_se_q25: f64,
    pub rel_se_q75: f64,
    pub rel_se_min: f64,
    pub rel_se_max: f64,
    pub mean_n_required: f64,
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-replicate SE ratios of `id` to the covariates estimator, where both
/// succeeded.
pub fn relative_se(results: &[ReplicateResult], id: EstimatorId) -> Vec<f64> {
    results
        .iter()
        .filter_map(|r| {
            let a = r.outcome(id)?;
            let b = r.outcome(EstimatorId::Covariates)?;
            (a.error.is_none() && b.error.is_none() && b.se > 0.0).then(|| a.se / b.se)
        })
        .collect()
}

/// Mean of the finite required sample sizes of `id`.
pub fn mean_n_required(results: &[ReplicateResult], id: EstimatorId) -> f64 {
    let v: Vec<f64> = results
        .iter()
        .filter_map(|r| r.outcome(id)?.n_required.map(|n| n as f64))
        .collect();
    mean(&v)
}

pub fn summarize_cell(cell: &Cell, estimators: &[EstimatorId]) -> Vec<SummaryRow> {
    estimators
        .iter()
        .map(|&id| {
            let ok: Vec<_> = cell
                .results
                .iter()
                .filter_map(|r| r.outcome(id))
                .filter(|o| o.error.is_none())
                .collect();
            let share = |f: &dyn Fn(&&super::runner::EstimatorOutcome) -> bool| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().filter(|o| f(o)).count() as f64 / ok.len() as f64
                }
            };
            let mut rel = relative_se(&cell.results, id);
            rel.sort_by(f64::total_cmp);
            SummaryRow {
                scenario: cell.scenario.label(),
                n_trial: cell.n_trial,
                estimator: id,
                truth: cell.truth,
                reps_ok: ok.len(),
                failures: cell.results.len() - ok.len(),
                coverage: share(&|o| o.covered_truth),
                power: share(&|o| o.significant),
                mean_psi_hat: mean(&ok.iter().map(|o| o.psi_hat).collect::<Vec<_>>()),
                rel_se_mean: mean(&rel),
                rel_se_median: quantile_sorted(&rel, 0.5),
                rel_se_q25: quantile_sorted(&rel, 0.25),
                rel_se_q75: quantile_sorted(&rel, 0.75),
                rel_se_min: rel.first().copied().unwrap_or(f64::NAN),
                rel_se_max: rel.last().copied().unwrap_or(f64::NAN),
                mean_n_required: mean_n_required(&cell.results, id),
            }
        })
        .collect()
}

fn io_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

pub fn write_replicates_csv(path: &Path, cells: &[Cell]) -> Result<()> {
    let err = io_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "scenario", "n_trial", "rep", "estimator", "psi_hat", "se", "ci_lower", "ci_upper", "p_value", "significant",
        "covered_truth", "n_required", "error",
    ])
    .map_err(&err)?;
    for cell in cells {
        for r in &cell.results {
            for o in &r.outcomes {
                w.write_record([
                    cell.scenario.label(),
                    r.n_trial.to_string(),
                    r.rep.to_string(),
                    o.estimator.to_string(),
                    num(o.psi_hat),
                    num(o.se),
                    num(o.ci.0),
                    num(o.ci.1),
                    num(o.p_value),
                    (o.significant as u8).to_string(),
                    (o.covered_truth as u8).to_string(),
                    o.n_required.map(|n| n.to_string()).unwrap_or_default(),
                    o.error.clone().unwrap_or_default(),
                ])
                .map_err(&err)?;
            }
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let err = io_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "scenario", "n_trial", "estimator", "true_rate_ratio", "reps_ok", "failures", "coverage", "power",
        "mean_psi_hat", "rel_se_mean", "rel_se_median", "rel_se_q25", "rel_se_q75", "rel_se_min", "rel_se_max",
        "mean_n_required",
    ])
    .map_err(&err)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.n_trial.to_string(),
            r.estimator.to_string(),
            num(r.truth),
            r.reps_ok.to_string(),
            r.failures.to_string(),
            num(r.coverage),
            num(r.power),
            num(r.mean_psi_hat),
            num(r.rel_se_mean),
            num(r.rel_se_median),
            num(r.rel_se_q25),
            num(r.rel_se_q75),
            num(r.rel_se_min),
            num(r.rel_se_max),
            num(r.mean_n_required),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 50.0;

struct Panel<'a> {
    title: String,
    x: Vec<f64>,
    /// (label, y per x).
    series: Vec<(&'a str, Vec<f64>)>,
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn line_chart(title: &str, y_label: &str, reference: Option<f64>, panels: &[Panel<'_>]) -> String {
    let legend_h = 20.0 * PALETTE.len() as f64;
    let height = panels.len() as f64 * (PANEL_H + MARGIN * 1.5) + MARGIN + legend_h;
    let width = PANEL_W + 2.0 * MARGIN + 180.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="20" font-size="14">{title}</text>"#);
    for (pi, p) in panels.iter().enumerate() {
        let top = MARGIN + pi as f64 * (PANEL_H + MARGIN * 1.5);
        let finite = p.series.iter().flat_map(|(_, v)| v.iter().copied()).chain(reference).filter(|v| v.is_finite());
        let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            lo -= 0.05;
            hi += 0.05;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let (xmin, xmax) = p.x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
        let px = |x: f64| MARGIN + if xmax > xmin { (x - xmin) / xspan * PANEL_W } else { PANEL_W / 2.0 };
        let py = |y: f64| top + PANEL_H - (y - lo) / (hi - lo) * PANEL_H;
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}">{}</text>"#, top - 6.0, p.title);
        let _ = writeln!(
            s,
            r#"<text x="12" y="{}" transform="rotate(-90 12 {})">{y_label}</text>"#,
            top + PANEL_H / 2.0,
            top + PANEL_H / 2.0
        );
        for k in 0..=4 {
            let y = lo + (hi - lo) * k as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, MARGIN - 4.0, py(y) + 4.0, fmt_tick(y));
        }
        for &x in &p.x {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                px(x),
                top + PANEL_H + 14.0,
                fmt_tick(x)
            );
        }
        if let Some(r) = reference {
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN}" x2="{}" y1="{y}" y2="{y}" stroke="#999" stroke-dasharray="4 3"/>"##,
                MARGIN + PANEL_W,
                y = py(r)
            );
        }
        for (si, (_, ys)) in p.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let pts: Vec<String> = p
                .x
                .iter()
                .zip(ys)
                .filter(|(_, y)| y.is_finite())
                .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y)))
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
            for pt in &pts {
                let (cx, cy) = pt.split_once(',').expect("formatted point");
                let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
            }
        }
    }
    if let Some(first) = panels.first() {
        for (si, (label, _)) in first.series.iter().enumerate() {
            let y = MARGIN + 10.0 + 18.0 * si as f64;
            let x = MARGIN + PANEL_W + 20.0;
            let color = PALETTE[si % PALETTE.len()];
            let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
            let _ = writeln!(s, r#"<text x="{}" y="{y}">{label}</text>"#, x + 14.0);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Box plots of relative SE per estimator, one panel per (scenario, n).
fn box_chart(rows: &[SummaryRow]) -> String {
    let mut groups: Vec<(String, Vec<&SummaryRow>)> = Vec::new();
    for r in rows {
        let key = format!("{} n={}", r.scenario, r.n_trial);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let row_h = 18.0;
    let mut s = String::new();
    let total_rows: usize = groups.iter().map(|(_, v)| v.len()).sum();
    let height = MARGIN * 2.0 + total_rows as f64 * row_h + groups.len() as f64 * 30.0;
    let width = 2.0 * PANEL_W;
    let (lo, hi) = rows
        .iter()
        .flat_map(|r| [r.rel_se_min, r.rel_se_max])
        .filter(|v| v.is_finite())
        .fold((0.9f64, 1.1f64), |(a, b), v| (a.min(v), b.max(v)));
    let x0 = 180.0;
    let span = width - x0 - MARGIN;
    let px = |v: f64| x0 + (v - lo) / (hi - lo) * span;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="20" font-size="14">Relative standard error vs covariates</text>"#);
    let _ = writeln!(
        s,
        r##"<line x1="{x}" x2="{x}" y1="{MARGIN}" y2="{}" stroke="#999" stroke-dasharray="4 3"/>"##,
        height - MARGIN,
        x = px(1.0)
    );
    let mut y = MARGIN;
    for (key, rs) in &groups {
        y += 14.0;
        let _ = writeln!(s, r#"<text x="10" y="{y}" font-weight="bold">{key}</text>"#);
        y += 8.0;
        for (i, r) in rs.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mid = y + row_h / 2.0;
            let _ = writeln!(s, r#"<text x="10" y="{}">{}</text>"#, mid + 4.0, r.estimator);
            if r.rel_se_median.is_finite() {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.1}" x2="{:.1}" y1="{mid}" y2="{mid}" stroke="{color}"/>"#,
                    px(r.rel_se_min),
                    px(r.rel_se_max)
                );
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{}" width="{:.1}" height="{}" fill="{color}" fill-opacity="0.35" stroke="{color}"/>"#,
                    px(r.rel_se_q25),
                    y + 3.0,
                    (px(r.rel_se_q75) - px(r.rel_se_q25)).max(1.0),
                    row_h - 6.0
                );
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.1}" x2="{x:.1}" y1="{}" y2="{}" stroke="black" stroke-width="2"/>"#,
                    y + 3.0,
                    y + row_h - 3.0,
                    x = px(r.rel_se_median)
                );
            }
            y += row_h;
        }
    }
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{v:.2}</text>"#, px(v), height - MARGIN + 16.0);
    }
    s.push_str("</svg>\n");
    s
}

fn panels_for<'a>(rows: &'a [SummaryRow], estimators: &[EstimatorId], metric: fn(&SummaryRow) -> f64) -> Vec<Panel<'a>> {
    let mut scenarios: Vec<&str> = Vec::new();
    for r in rows {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    scenarios
        .into_iter()
        .map(|sc| {
            let mut x: Vec<usize> = rows.iter().filter(|r| r.scenario == sc).map(|r| r.n_trial).collect();
            x.sort_unstable();
            x.dedup();
            let series = estimators
                .iter()
                .map(|&e| {
                    let ys = x
                        .iter()
                        .map(|&n| {
                            rows.iter()
                                .find(|r| r.scenario == sc && r.n_trial == n && r.estimator == e)
                                .map(metric)
                                .unwrap_or(f64::NAN)
                        })
                        .collect();
                    (e.name(), ys)
                })
                .collect();
            Panel {
                title: sc.to_string(),
                x: x.into_iter().map(|n| n as f64).collect(),
                series,
            }
        })
        .collect()
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes coverage.svg, power.svg and relative_efficiency.svg.
pub fn write_charts(dir: &Path, rows: &[SummaryRow], estimators: &[EstimatorId], nominal_coverage: f64) -> Result<()> {
    let cov = line_chart(
        "Coverage of the true rate ratio",
        "coverage",
        Some(nominal_coverage),
        &panels_for(rows, estimators, |r| r.coverage),
    );
    write_file(&dir.join("coverage.svg"), &cov)?;
    let pow = line_chart("Share significant", "power", None, &panels_for(rows, estimators, |r| r.power));
    write_file(&dir.join("power.svg"), &pow)?;
    write_file(&dir.join("relative_efficiency.svg"), &box_chart(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::runner::EstimatorOutcome;

    fn outcome(id: EstimatorId, se: f64, covered: bool, sig: bool) -> EstimatorOutcome {
        EstimatorOutcome {
            estimator: id,
            psi_hat: 1.2,
            se,
            ci: (1.0, 1.4),
            p_value: if sig { 0.01 } else { 0.5 },
            significant: sig,
            covered_truth: covered,
            n_required: Some(100),
            error: None,
        }
    }

    fn cell() -> Cell {
        let ids = [EstimatorId::Covariates, EstimatorId::PrognosticCovariates];
        let results = (0..4)
            .map(|rep| ReplicateResult {
                rep,
                n_trial: 100,
                outcomes: vec![
                    outcome(ids[0], 0.2, rep != 0, rep < 2),
                    if rep == 3 {
                        EstimatorOutcome {
                            error: Some("fold 2: diverged".into()),
                            ..outcome(ids[1], f64::NAN, false, false)
                        }
                    } else {
                        outcome(ids[1], 0.1 * (rep + 1) as f64, true, true)
                    },
                ],
            })
            .collect();
        Cell {
            scenario: ScenarioSpec::named("additive").unwrap(),
            truth: 1.2214,
            n_trial: 100,
            results,
        }
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!(quantile_sorted(&[], 0.5).is_nan());
    }

    #[test]
    fn summary_counts_failures_and_excludes_them() {
        let rows = summarize_cell(&cell(), &[EstimatorId::Covariates, EstimatorId::PrognosticCovariates]);
        assert_eq!((rows[0].reps_ok, rows[0].failures), (4, 0));
        assert_eq!(rows[0].coverage, 0.75);
        assert_eq!(rows[0].power, 0.5);
        assert_eq!(rows[0].rel_se_median, 1.0);
        assert_eq!((rows[1].reps_ok, rows[1].failures), (3, 1));
        assert_eq!(rows[1].coverage, 1.0);
        assert!((rows[1].rel_se_median - 1.0).abs() < 1e-12);
        assert!((rows[1].rel_se_mean - 1.0).abs() < 1e-12);
        assert_eq!(rows[1].mean_n_required, 100.0);
    }

    #[test]
    fn outputs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let c = cell();
        let ids = [EstimatorId::Covariates, EstimatorId::PrognosticCovariates];
        let rows = summarize_cell(&c, &ids);
        write_replicates_csv(&dir.path().join("r.csv"), std::slice::from_ref(&c)).unwrap();
        write_summary_csv(&dir.path().join("s.csv"), &rows).unwrap();
        write_charts(dir.path(), &rows, &ids, 0.95).unwrap();
        let reps = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(reps.lines().count(), 1 + 8);
        assert!(reps.contains("fold 2: diverged"));
        for f in ["coverage.svg", "power.svg", "relative_efficiency.svg"] {
            let svg = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        }
    }
}
