use std::fmt::Write as _;
use std::path::Path;

use eivuq::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Accuracy and calibration of one predicted field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub name: String,
    pub rel_l2: f64,
    /// Share of grid points with `|mean − reference| ≤ 2·std`; absent for
    /// point estimates.
    pub coverage: Option<f64>,
    /// Grid-averaged predictive std.
    pub mean_std: Option<f64>,
}

/// Posterior mean ± std of an inferred scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub reference: Option<f64>,
}

/// One method (inference mode or baseline) on one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub seed: u64,
    pub targets: Vec<TargetMetrics>,
    pub scalars: Vec<ScalarSummary>,
    pub acceptance: Option<f64>,
    pub step_size: Option<f64>,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

impl ReportRow {
    pub fn new(label: impl Into<String>, seed: u64) -> Self {
        ReportRow {
            label: label.into(),
            seed,
            targets: vec![],
            scalars: vec![],
            acceptance: None,
            step_size: None,
            artifacts: vec![],
        }
    }

    pub fn target(&self, name: &str) -> Option<&TargetMetrics> {
        self.targets.iter().find(|t| t.name == name)
    }

    pub fn scalar(&self, name: &str) -> Option<&ScalarSummary> {
        self.scalars.iter().find(|t| t.name == name)
    }
}

/// Everything a run reports. Wall time is kept out of it so that repeated
/// runs produce identical files; it goes to `timing.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub notes: Vec<String>,
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    pub fn rows_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.label == label)
    }

    pub fn row(&self, label: &str, seed: u64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label && r.seed == seed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = if dir.is_dir() { dir.join("report.json") } else { dir.to_path_buf() };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text).map_err(|e| e.context(format!("reading {}", path.display())))
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{:.2}", 100.0 * v))
}

fn num(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

/// Aligned-column text table: one row per (seed, method).
pub fn render_table(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment: {}", report.experiment);
    let _ = writeln!(out, "config sha256: {}", report.config_sha256);
    let seeds: Vec<String> = report.seeds.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "seeds: {}", seeds.join(", "));
    for n in &report.notes {
        let _ = writeln!(out, "note: {n}");
    }
    let mut targets: Vec<&str> = vec![];
    let mut scalars: Vec<&str> = vec![];
    for r in &report.rows {
        for t in &r.targets {
            if !targets.contains(&t.name.as_str()) {
                targets.push(&t.name);
            }
        }
        for s in &r.scalars {
            if !scalars.contains(&s.name.as_str()) {
                scalars.push(&s.name);
            }
        }
    }
    let mut header = vec!["seed".to_string(), "method".to_string()];
    for t in &targets {
        header.push(format!("err {t} (%)"));
        header.push(format!("cov {t} (%)"));
        header.push(format!("std {t}"));
    }
    for s in &scalars {
        header.push(format!("{s} (mean ± std)"));
    }
    header.push("accept".into());
    let mut rows = vec![header];
    for r in &report.rows {
        let mut cells = vec![r.seed.to_string(), r.label.clone()];
        for t in &targets {
            let m = r.target(t);
            cells.push(pct(m.map(|m| m.rel_l2)));
            cells.push(pct(m.and_then(|m| m.coverage)));
            cells.push(num(m.and_then(|m| m.mean_std)));
        }
        for s in &scalars {
            cells.push(r.scalar(s).map_or("-".into(), |s| format!("{:.4} ± {:.4}", s.mean, s.std)));
        }
        cells.push(r.acceptance.map_or("-".into(), |a| format!("{a:.3}")));
        rows.push(cells);
    }
    let ncol = rows[0].len();
    let widths: Vec<usize> = (0..ncol).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap()).collect();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                let pad = w - cell.chars().count();
                if c < 2 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (ncol - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

/// Write `report.txt` and its JSON twin `report.json` into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<()> {
    let txt = dir.join("report.txt");
    std::fs::write(&txt, render_table(report)).map_err(|e| Error::io(&txt, e))?;
    let json = dir.join("report.json");
    std::fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))
}
