use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use eivuq::models::PredictiveSummary;
use eivuq::physics::derive_seed;
use eivuq::sampler::{HmcConfig, LogDensity, PosteriorSamples};
use eivuq::{Error, Result};
use ndarray::{Array2, Axis};

use crate::config::{ExperimentConfig, ExperimentId};
use crate::metrics::relative_l2;
use crate::plot::{emit_plot, PlotData};
use crate::report::{emit_report, ReportRow, RunReport, ScalarSummary, TargetMetrics};
use crate::{operator, pinn, regression};

/// Result of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub out_dir: PathBuf,
    pub wall_time_s: f64,
}

/// Shared state of one run: the staging directory, report rows and notes.
pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    root: PathBuf,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
    quiet: bool,
}

/// Seed streams derived from a run seed, one per purpose.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const LOCATIONS: u64 = 3;
    pub const TRUTH: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const CHAIN: u64 = 16;
}

pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    derive_seed(seed, stream)
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

impl<'a> RunContext<'a> {
    pub fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[{}] {}", self.cfg.experiment, msg.as_ref());
        }
    }

    /// `seed<seed>/<label>/`, created on demand.
    pub fn method_dir(&self, seed: u64, label: &str) -> Result<PathBuf> {
        let d = self.root.join(format!("seed{seed}")).join(sanitize(label));
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    pub fn seed_dir(&self, seed: u64) -> Result<PathBuf> {
        let d = self.root.join(format!("seed{seed}"));
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Write the chain (thinned per config) to `samples.csv` in `dir`.
    pub fn write_samples(&self, row: &mut ReportRow, dir: &Path, samples: &PosteriorSamples, columns: &[String]) -> Result<()> {
        if !self.cfg.output.samples {
            return Ok(());
        }
        let every = self.cfg.output.samples_every;
        let thinned;
        let s = if every > 1 {
            let keep: Vec<usize> = (0..samples.len()).step_by(every).collect();
            thinned = PosteriorSamples {
                draws: samples.draws.select(Axis(0), &keep),
                ..samples.clone()
            };
            &thinned
        } else {
            samples
        };
        let path = dir.join("samples.csv");
        s.write_csv(&path, columns)?;
        row.artifacts.push(self.relative(&path));
        row.artifacts.push(self.relative(&path.with_extension("json")));
        Ok(())
    }

    /// Record metrics for a predicted field and write its summary CSV and
    /// plot. `coords` is `P × d`; plots need `d = 1` or an explicit slice.
    pub fn record_field(&self, row: &mut ReportRow, dir: &Path, field: &Field<'_>) -> Result<()> {
        let s = field.summary;
        let rel = relative_l2(&s.mean, field.reference)?;
        let (coverage, mean_std) = if field.point_estimate {
            (None, None)
        } else {
            (Some(s.coverage(field.reference)?), Some(s.mean_std()))
        };
        row.targets.push(TargetMetrics {
            name: field.name.to_string(),
            rel_l2: rel,
            coverage,
            mean_std,
        });
        let csv = dir.join(format!("summary_{}.csv", field.name));
        write_summary_csv(&csv, field.coords, s, field.reference)?;
        row.artifacts.push(self.relative(&csv));
        if self.cfg.output.plots {
            if let Some(plot) = field.plot(&row.label) {
                let svg = dir.join(format!("fig_{}.svg", field.name));
                emit_plot(&plot, &svg)?;
                row.artifacts.push(self.relative(&svg));
            }
        }
        Ok(())
    }
}

/// A predicted field with its reference, for [`RunContext::record_field`].
pub struct Field<'a> {
    pub name: &'a str,
    pub coords: &'a Array2<f64>,
    pub summary: &'a PredictiveSummary,
    pub reference: &'a [f64],
    pub scatter: Vec<(f64, f64)>,
    pub point_estimate: bool,
    /// For 2D coordinates, plot the points whose second coordinate equals
    /// this value.
    pub slice: Option<f64>,
}

impl Field<'_> {
    fn plot(&self, label: &str) -> Option<PlotData> {
        let idx: Vec<usize> = match (self.coords.ncols(), self.slice) {
            (1, _) => (0..self.coords.nrows()).collect(),
            (2, Some(t)) => (0..self.coords.nrows()).filter(|&i| (self.coords[[i, 1]] - t).abs() < 1e-9).collect(),
            _ => return None,
        };
        if idx.len() < 2 {
            return None;
        }
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let title = match self.slice {
            Some(t) if self.coords.ncols() == 2 => format!("{} at t = {t} ({label})", self.name),
            _ => format!("{} ({label})", self.name),
        };
        Some(PlotData {
            title,
            x_label: "x".into(),
            y_label: self.name.into(),
            x: idx.iter().map(|&i| self.coords[[i, 0]]).collect(),
            mean: pick(&self.summary.mean),
            std: pick(&self.summary.std),
            reference: Some(pick(self.reference)),
            scatter: self.scatter.clone(),
        })
    }
}

/// `coordinate,mean,std,reference` (or `x,t,...` for space-time fields).
pub fn write_summary_csv(path: &Path, coords: &Array2<f64>, s: &PredictiveSummary, reference: &[f64]) -> Result<()> {
    let n = coords.nrows();
    if s.len() != n || reference.len() != n {
        return Err(Error::ShapeError(format!(
            "{n} coordinates, {} summary points, {} reference values",
            s.len(),
            reference.len()
        )));
    }
    let mut out = String::new();
    out.push_str(match coords.ncols() {
        1 => "coordinate,mean,std,reference\n",
        2 => "x,t,mean,std,reference\n",
        d => return Err(Error::ShapeError(format!("{d}-dimensional coordinates"))),
    });
    for i in 0..n {
        for c in coords.row(i) {
            out.push_str(&format!("{c},"));
        }
        out.push_str(&format!("{},{},{}\n", s.mean[i], s.std[i], reference[i]));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read back a summary CSV as `(coords, summary, reference)`.
pub fn read_summary_csv(path: &Path) -> Result<(Vec<Vec<f64>>, PredictiveSummary, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Serde(format!("{} is empty", path.display())))?;
    let d = header.split(',').count() - 3;
    let (mut coords, mut mean, mut std, mut reference) = (vec![], vec![], vec![], vec![]);
    for (i, line) in lines.enumerate() {
        let v: Vec<f64> = line
            .split(',')
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Serde(format!("{} line {}: {e}", path.display(), i + 2)))?;
        if v.len() != d + 3 {
            return Err(Error::Serde(format!("{} line {}: {} fields", path.display(), i + 2, v.len())));
        }
        coords.push(v[..d].to_vec());
        mean.push(v[d]);
        std.push(v[d + 1]);
        reference.push(v[d + 2]);
    }
    Ok((coords, PredictiveSummary { mean, std }, reference))
}

pub fn column(xs: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap()
}

/// HMC with the run's sampler settings, a per-chain seed and a mass.
pub fn sample_chain<T: LogDensity + ?Sized>(
    cfg: &ExperimentConfig,
    target: &mut T,
    init: &[f64],
    mass: Option<Vec<f64>>,
    seed: u64,
    chain: u64,
) -> Result<PosteriorSamples> {
    let hmc = HmcConfig {
        mass,
        seed: sub_seed(seed, stream::CHAIN + chain),
        ..cfg.hmc.clone()
    };
    eivuq::sampler::hmc_sample(target, init, &hmc)
}

/// Summary of `g(x)` over the chain for one coordinate `x`.
pub fn scalar_summary(name: &str, draws: impl Iterator<Item = f64>, reference: Option<f64>) -> ScalarSummary {
    let v: Vec<f64> = draws.collect();
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    ScalarSummary {
        name: name.into(),
        mean,
        std: var.sqrt(),
        reference,
    }
}

/// Run an experiment into `out`. Artifacts are written to a staging
/// directory that replaces `out` only on success; on failure nothing is
/// left behind. An existing `out` is replaced only if it holds a previous
/// report or is empty.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<RunOutcome> {
    let name = out
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a directory name", out.display())))?
        .to_string_lossy()
        .into_owned();
    if out.exists() {
        let empty = std::fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_none();
        if !empty && !out.join("report.json").exists() {
            return Err(Error::InvalidInput(format!(
                "{} exists and does not hold a previous run; refusing to overwrite",
                out.display()
            )));
        }
    }
    let staging = out.with_file_name(format!(".{name}.partial"));
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let t0 = Instant::now();
    let result = run_into(cfg, &staging, quiet);
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(e.context(format!("{} failed", cfg.experiment)));
        }
    };
    let wall = t0.elapsed().as_secs_f64();
    let finish = || -> Result<()> {
        let timing = staging.join("timing.json");
        let mut f = std::fs::File::create(&timing).map_err(|e| Error::io(&timing, e))?;
        writeln!(f, "{{\"wall_time_s\": {wall:.3}}}").map_err(|e| Error::io(&timing, e))?;
        if out.exists() {
            std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
        }
        std::fs::rename(&staging, out).map_err(|e| Error::io(out, e))
    };
    if let Err(e) = finish() {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    Ok(RunOutcome {
        report,
        out_dir: out.to_path_buf(),
        wall_time_s: wall,
    })
}

fn run_into(cfg: &ExperimentConfig, root: &Path, quiet: bool) -> Result<RunReport> {
    let mut ctx = RunContext {
        cfg,
        root: root.to_path_buf(),
        rows: vec![],
        notes: vec![],
        quiet,
    };
    let cfg_path = root.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| Error::io(&cfg_path, e))?;
    for &seed in &cfg.seeds {
        match cfg.experiment {
            ExperimentId::E1 => regression::run_seed(&mut ctx, seed)?,
            ExperimentId::E2 | ExperimentId::E3 => pinn::run_seed(&mut ctx, seed)?,
            ExperimentId::E4 | ExperimentId::E5 => operator::run_seed(&mut ctx, seed)?,
        }
    }
    if cfg.experiment == ExperimentId::E3 {
        ctx.notes.push(format!(
            "data generated with reference lambda = {}",
            cfg.poisson().lambda_true
        ));
    }
    let report = RunReport {
        experiment: cfg.experiment.name().into(),
        config_sha256: cfg.hash(),
        seeds: cfg.seeds.clone(),
        notes: ctx.notes,
        config: cfg.clone(),
        rows: ctx.rows,
    };
    emit_report(&report, root)?;
    Ok(report)
}
