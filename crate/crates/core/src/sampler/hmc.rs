use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LogDensity;
use crate::error::{Error, Result};

/// Proposals whose energy error exceeds this are rejected outright.
const DIVERGENCE: f64 = 1000.0;
/// Share of non-finite burn-in proposals that aborts the run.
const STUCK_FRACTION: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub leapfrog_steps: usize,
    pub num_samples: usize,
    pub burn_in: usize,
    pub init_step_size: f64,
    /// Acceptance rate targeted by the burn-in adaptation.
    pub target_accept: f64,
    /// Acceptance band the adapted run is expected to land in.
    pub band: [f64; 2],
    pub adapt: bool,
    /// Each trajectory uses `ε·(1 + jitter·U(−1, 1))`, which breaks the
    /// resonances a fixed `ε·L` produces on near-isotropic targets.
    pub step_jitter: f64,
    /// Diagonal mass; identity when absent.
    pub mass: Option<Vec<f64>>,
    /// Re-estimate the diagonal mass from the burn-in draws between 15% and
    /// 75% of burn-in (inverse regularized marginal variances), then restart
    /// the step-size adaptation for the remaining burn-in.
    pub adapt_mass: bool,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            leapfrog_steps: 50,
            num_samples: 1000,
            burn_in: 1000,
            init_step_size: 0.01,
            target_accept: 0.6,
            band: [0.5, 0.7],
            adapt: true,
            step_jitter: 0.2,
            mass: None,
            adapt_mass: false,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let [lo, hi] = self.band;
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.leapfrog_steps == 0 || self.num_samples == 0 {
            return bad("leapfrog_steps and num_samples must be at least 1".into());
        }
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad(format!("acceptance band [{lo}, {hi}] is not inside (0, 1)"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!("target acceptance {} outside (0, 1)", self.target_accept));
        }
        if !(self.init_step_size > 0.0 && self.init_step_size.is_finite()) {
            return bad(format!("step size {} must be positive", self.init_step_size));
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return bad(format!("step jitter {} outside [0, 1)", self.step_jitter));
        }
        if let Some(m) = &self.mass {
            if m.len() != dim {
                return Err(Error::ShapeError(format!("mass has {} entries for {dim} coordinates", m.len())));
            }
            if m.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return bad("mass entries must be positive".into());
            }
        }
        Ok(())
    }
}

/// Robbins–Monro step-size adaptation on `log ε`:
/// `log ε ← log ε + (accepted − target)/(t + 10)^0.6`.
///
/// The step size used after burn-in is the geometric mean of the iterates over
/// the second half of the adaptation window, which removes most of the
/// flag-to-flag jitter of the last iterate.
#[derive(Clone, Debug)]
pub struct StepSizeAdapter {
    log_eps: f64,
    target: f64,
    t: usize,
    window_start: usize,
    sum_log: f64,
    n_avg: usize,
}

impl StepSizeAdapter {
    pub fn new(step: f64, target: f64, total: usize) -> Self {
        StepSizeAdapter {
            log_eps: step.ln(),
            target,
            t: 0,
            window_start: total / 2,
            sum_log: 0.0,
            n_avg: 0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Record one accept/reject outcome and return the new step size.
    pub fn update(&mut self, accepted: bool) -> f64 {
        let a = if accepted { 1.0 } else { 0.0 };
        self.log_eps += (a - self.target) / ((self.t + 10) as f64).powf(0.6);
        self.t += 1;
        if self.t > self.window_start {
            self.sum_log += self.log_eps;
            self.n_avg += 1;
        }
        self.step_size()
    }

    /// Step size to freeze after adaptation.
    pub fn final_step_size(&self) -> f64 {
        if self.n_avg == 0 {
            self.step_size()
        } else {
            (self.sum_log / self.n_avg as f64).exp()
        }
    }
}

/// One adaptation update; see [`StepSizeAdapter`].
pub fn adapt_step_size(state: &mut StepSizeAdapter, accepted: bool) -> f64 {
    state.update(accepted)
}

/// Running per-coordinate mean and variance.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Sample variance shrunk towards `1e−3` as in common HMC practice.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let v = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Draws retained after burn-in.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    /// `M × D`.
    pub draws: Array2<f64>,
    pub accepted: Vec<bool>,
    pub burn_in_accepted: Vec<bool>,
    pub logp: Vec<f64>,
    pub step_size: f64,
    pub n_divergent: usize,
    pub n_non_finite: usize,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    num_samples: usize,
    dim: usize,
    acceptance_rate: f64,
    burn_in_acceptance_rate: f64,
    step_size: f64,
    divergent: usize,
    non_finite: usize,
    columns: &'a [String],
}

fn rate(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|a| **a).count() as f64 / flags.len() as f64
    }
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn accept_rate(&self) -> f64 {
        rate(&self.accepted)
    }

    pub fn burn_in_accept_rate(&self) -> f64 {
        rate(&self.burn_in_accepted)
    }

    pub fn mean(&self) -> Array1<f64> {
        self.draws.mean_axis(Axis(0)).unwrap()
    }

    /// Population variance per coordinate.
    pub fn variance(&self) -> Array1<f64> {
        self.draws.var_axis(Axis(0), 0.0)
    }

    /// Write `samples.csv` (one row per draw, header `columns`) and a JSON
    /// sidecar with acceptance statistics next to it.
    pub fn write_csv(&self, path: &Path, columns: &[String]) -> Result<()> {
        if columns.len() != self.dim() {
            return Err(Error::ShapeError(format!(
                "{} column names for {} coordinates",
                columns.len(),
                self.dim()
            )));
        }
        let mut out = String::with_capacity(self.draws.len() * 24);
        out.push_str(&columns.join(","));
        out.push('\n');
        for row in self.draws.outer_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let side = Sidecar {
            num_samples: self.len(),
            dim: self.dim(),
            acceptance_rate: self.accept_rate(),
            burn_in_acceptance_rate: self.burn_in_accept_rate(),
            step_size: self.step_size,
            divergent: self.n_divergent,
            non_finite: self.n_non_finite,
            columns,
        };
        let side_path = path.with_extension("json");
        let text = serde_json::to_string_pretty(&side)?;
        std::fs::write(&side_path, text).map_err(|e| Error::io(&side_path, e))
    }
}

/// `L` leapfrog steps from `(x, p)`; `grad` must hold `∇ log p(x)` on entry
/// and holds it at the new point on exit. Returns the new log-density, or
/// `NaN` when the trajectory left the finite region.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &mut T,
    x: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: f64,
    steps: usize,
    inv_mass: Option<&[f64]>,
) -> f64 {
    let n = x.len();
    let mut lp = f64::NAN;
    for i in 0..n {
        p[i] += 0.5 * eps * grad[i];
    }
    for s in 0..steps {
        match inv_mass {
            Some(im) => (0..n).for_each(|i| x[i] += eps * im[i] * p[i]),
            None => (0..n).for_each(|i| x[i] += eps * p[i]),
        }
        lp = match target.logp_grad(x, grad) {
            Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => v,
            _ => return f64::NAN,
        };
        let h = if s + 1 == steps { 0.5 * eps } else { eps };
        for i in 0..n {
            p[i] += h * grad[i];
        }
    }
    lp
}

fn kinetic(p: &[f64], inv_mass: Option<&[f64]>) -> f64 {
    match inv_mass {
        Some(im) => 0.5 * p.iter().zip(im).map(|(p, m)| p * p * m).sum::<f64>(),
        None => 0.5 * p.iter().map(|p| p * p).sum::<f64>(),
    }
}

/// Hamiltonian Monte Carlo. Momenta are drawn from `N(0, M)`, the step size
/// adapts during burn-in only, and the `num_samples` post-burn-in states are
/// returned.
pub fn hmc_sample<T: LogDensity + ?Sized>(
    target: &mut T,
    init: &[f64],
    cfg: &HmcConfig,
) -> Result<PosteriorSamples> {
    let d = target.dim();
    if init.len() != d {
        return Err(Error::ShapeError(format!("initial point has {} entries for {d} coordinates", init.len())));
    }
    cfg.validate(d)?;
    let mut inv_mass: Option<Vec<f64>> = cfg.mass.as_ref().map(|m| m.iter().map(|v| 1.0 / v).collect());
    let mut sqrt_mass: Option<Vec<f64>> = cfg.mass.as_ref().map(|m| m.iter().map(|v| v.sqrt()).collect());
    let window = if cfg.adapt_mass && cfg.adapt && cfg.burn_in >= 20 {
        Some((cfg.burn_in * 15 / 100, cfg.burn_in * 75 / 100))
    } else {
        None
    };
    let mut welford = Welford::new(d);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut x = init.to_vec();
    let mut grad = vec![0.0; d];
    let mut lp = match target.logp_grad(&x, &mut grad) {
        Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => v,
        _ => return Err(Error::InvalidInit),
    };

    let mut adapter = StepSizeAdapter::new(cfg.init_step_size, cfg.target_accept, cfg.burn_in);
    let mut eps = cfg.init_step_size;
    let mut draws = Array2::zeros((cfg.num_samples, d));
    let mut accepted = Vec::with_capacity(cfg.num_samples);
    let mut burn_in_accepted = Vec::with_capacity(cfg.burn_in);
    let mut logp = Vec::with_capacity(cfg.num_samples);
    let (mut n_div, mut n_nonfinite, mut burn_nonfinite) = (0, 0, 0);

    let mut xp = vec![0.0; d];
    let mut p = vec![0.0; d];
    let mut gp = vec![0.0; d];
    for it in 0..cfg.burn_in + cfg.num_samples {
        let burning = it < cfg.burn_in;
        if !burning && it == cfg.burn_in && cfg.adapt && cfg.burn_in > 0 {
            eps = adapter.final_step_size();
        }
        for (i, pi) in p.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *pi = sqrt_mass.as_ref().map_or(z, |s| z * s[i]);
        }
        let h0 = -lp + kinetic(&p, inv_mass.as_deref());
        xp.copy_from_slice(&x);
        gp.copy_from_slice(&grad);
        let j: f64 = rng.random_range(-1.0..1.0);
        let eps_it = eps * (1.0 + cfg.step_jitter * j);
        let lp_new = leapfrog(target, &mut xp, &mut p, &mut gp, eps_it, cfg.leapfrog_steps, inv_mass.as_deref());
        let h1 = -lp_new + kinetic(&p, inv_mass.as_deref());
        let dh = h1 - h0;
        let u: f64 = rng.random();
        let ok = if !dh.is_finite() {
            n_nonfinite += 1;
            if burning {
                burn_nonfinite += 1;
            }
            false
        } else if dh > DIVERGENCE {
            n_div += 1;
            false
        } else {
            u.ln() < -dh
        };
        if ok {
            x.copy_from_slice(&xp);
            grad.copy_from_slice(&gp);
            lp = lp_new;
        }
        if burning {
            burn_in_accepted.push(ok);
            if cfg.adapt {
                eps = adapter.update(ok);
            }
            if let Some((start, end)) = window {
                if it >= start && it < end {
                    welford.push(&x);
                }
                if it + 1 == end {
                    let var = welford.regularized_variance();
                    // Scale of the tightest coordinate in the old metric sets
                    // how much larger the step can be in the new one.
                    let old_inv = inv_mass.clone().unwrap_or_else(|| vec![1.0; d]);
                    let ratio = var.iter().zip(&old_inv).map(|(v, im)| (v / im).sqrt()).fold(f64::INFINITY, f64::min);
                    eps = (adapter.final_step_size() / ratio.max(1e-300)).clamp(eps, eps * 1e3);
                    sqrt_mass = Some(var.iter().map(|v| 1.0 / v.sqrt()).collect());
                    inv_mass = Some(var);
                    adapter = StepSizeAdapter::new(eps, cfg.target_accept, cfg.burn_in - end);
                }
            }
            if it + 1 == cfg.burn_in && burn_nonfinite as f64 > STUCK_FRACTION * cfg.burn_in as f64 {
                return Err(Error::SamplerStuck {
                    non_finite: burn_nonfinite,
                    total: cfg.burn_in,
                });
            }
        } else {
            let row = it - cfg.burn_in;
            draws.row_mut(row).assign(&ndarray::ArrayView1::from(&x[..]));
            accepted.push(ok);
            logp.push(lp);
        }
    }
    Ok(PosteriorSamples {
        draws,
        accepted,
        burn_in_accepted,
        logp,
        step_size: eps,
        n_divergent: n_div,
        n_non_finite: n_nonfinite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::testing::normal;
    use crate::sampler::FnDensity;

    #[test]
    fn ten_dimensional_standard_normal() {
        let mut t = normal(vec![0.0; 10], vec![1.0; 10]);
        let s = hmc_sample(&mut t, &[0.0; 10], &HmcConfig::default()).unwrap();
        assert_eq!(s.len(), 1000);
        let a = s.accept_rate();
        assert!((0.5..=0.7).contains(&a), "acceptance {a}");
        // bounds from the chain's own effective sample sizes
        for i in 0..10 {
            let c = s.draws.column(i).to_vec();
            let m = c.iter().sum::<f64>() / c.len() as f64;
            assert!(m.abs() < 4.0 * crate::sampler::mc_standard_error(&c), "mean {m}");
            let sq: Vec<f64> = c.iter().map(|x| x * x).collect();
            let v = sq.iter().sum::<f64>() / c.len() as f64;
            let se = (2.0 / crate::sampler::effective_sample_size(&sq)).sqrt();
            assert!((v - 1.0).abs() < 4.0 * se, "second moment {v} (se {se})");
        }
    }

    #[test]
    fn mass_adaptation_handles_disparate_scales() {
        let sd: Vec<f64> = (0..8).map(|i| 10f64.powf(i as f64 / 7.0 * 3.0 - 2.0)).collect();
        let mut t = normal(vec![0.0; 8], sd.clone());
        let cfg = HmcConfig {
            leapfrog_steps: 20,
            num_samples: 2000,
            adapt_mass: true,
            init_step_size: 1e-3,
            seed: 5,
            ..Default::default()
        };
        let s = hmc_sample(&mut t, &[0.0; 8], &cfg).unwrap();
        assert!(s.step_size > 0.1, "step {}", s.step_size);
        for (v, sd) in s.variance().iter().zip(&sd) {
            let r = v.sqrt() / sd;
            assert!((0.8..1.25).contains(&r), "std ratio {r}");
        }
        // Without adaptation the same budget cannot move the widest
        // coordinate across its range.
        let fixed = hmc_sample(&mut t, &[0.0; 8], &HmcConfig { adapt_mass: false, ..cfg }).unwrap();
        assert!(fixed.variance()[7].sqrt() < 0.5 * sd[7]);
    }

    #[test]
    fn shifted_scaled_normal_1d() {
        let mut t = normal(vec![2.0], vec![0.5]);
        let cfg = HmcConfig {
            seed: 3,
            leapfrog_steps: 20,
            num_samples: 4000,
            ..Default::default()
        };
        let s = hmc_sample(&mut t, &[0.0], &cfg).unwrap();
        let m = s.mean()[0];
        let sd = s.variance()[0].sqrt();
        assert!((m - 2.0).abs() < 0.05, "{m}");
        assert!((sd - 0.5).abs() < 0.05, "{sd}");
    }

    #[test]
    fn vanishing_step_barely_moves() {
        let mut t = normal(vec![0.0; 3], vec![1.0; 3]);
        let cfg = HmcConfig {
            init_step_size: 1e-12,
            adapt: false,
            burn_in: 0,
            num_samples: 50,
            ..Default::default()
        };
        let init = [0.3, -0.2, 1.0];
        let s = hmc_sample(&mut t, &init, &cfg).unwrap();
        assert!(s.accepted.iter().all(|a| *a));
        for row in s.draws.outer_iter() {
            let d: f64 = row.iter().zip(&init).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(d < 1e-6);
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let cfg = HmcConfig {
            num_samples: 50,
            burn_in: 50,
            seed: 9,
            ..Default::default()
        };
        let a = hmc_sample(&mut normal(vec![1.0; 4], vec![2.0; 4]), &[0.0; 4], &cfg).unwrap();
        let b = hmc_sample(&mut normal(vec![1.0; 4], vec![2.0; 4]), &[0.0; 4], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let mut t = normal(vec![0.3, -1.0], vec![0.7, 1.9]);
        let mut x = vec![0.1, 0.4];
        let mut p = vec![-0.8, 1.3];
        let mut g = vec![0.0; 2];
        t.logp_grad(&x, &mut g).unwrap();
        let (x0, p0) = (x.clone(), p.clone());
        leapfrog(&mut t, &mut x, &mut p, &mut g, 0.05, 40, None);
        p.iter_mut().for_each(|v| *v = -*v);
        leapfrog(&mut t, &mut x, &mut p, &mut g, 0.05, 40, None);
        for i in 0..2 {
            assert!((x[i] - x0[i]).abs() < 1e-8);
            assert!((-p[i] - p0[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn adaptation_is_monotone() {
        let mut a = StepSizeAdapter::new(0.1, 0.6, 100);
        let mut prev = a.step_size();
        for _ in 0..50 {
            let e = adapt_step_size(&mut a, false);
            assert!(e < prev);
            prev = e;
        }
        for _ in 0..50 {
            let e = adapt_step_size(&mut a, true);
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn double_well_histogram_matches_quadrature() {
        // log p(x) = −(x² − 1)²·2, adaptation frozen
        let mut t = FnDensity::new(1, |x: &[f64], g: &mut [f64]| {
            let y = x[0] * x[0] - 1.0;
            g[0] = -8.0 * y * x[0];
            Ok(-2.0 * y * y)
        });
        let cfg = HmcConfig {
            leapfrog_steps: 10,
            num_samples: 50_000,
            burn_in: 0,
            adapt: false,
            init_step_size: 0.15,
            seed: 5,
            ..Default::default()
        };
        let s = hmc_sample(&mut t, &[0.9], &cfg).unwrap();
        let (lo, hi, nb) = (-2.5, 2.5, 50);
        let w = (hi - lo) / nb as f64;
        let mut hist = vec![0.0; nb];
        for v in s.draws.column(0) {
            let b = ((v - lo) / w).floor();
            if b >= 0.0 && (b as usize) < nb {
                hist[b as usize] += 1.0;
            }
        }
        let dens = |x: f64| (-2.0 * (x * x - 1.0f64).powi(2)).exp();
        // midpoint quadrature with 200 sub-cells per bin
        let mut q: Vec<f64> = (0..nb)
            .map(|b| {
                (0..200)
                    .map(|k| dens(lo + w * (b as f64 + (k as f64 + 0.5) / 200.0)))
                    .sum::<f64>()
            })
            .collect();
        let zq: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= zq);
        let n = s.len() as f64;
        let tv: f64 = 0.5 * hist.iter().zip(&q).map(|(h, p)| (h / n - p).abs()).sum::<f64>();
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn init_and_stuck_errors() {
        let mut bad = FnDensity::new(1, |_: &[f64], _: &mut [f64]| Ok(f64::NAN));
        assert!(matches!(hmc_sample(&mut bad, &[0.0], &HmcConfig::default()), Err(Error::InvalidInit)));
        // finite only at the origin's immediate neighbourhood
        let mut cliff = FnDensity::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            Ok(if x[0].abs() < 1e-300 { 0.0 } else { f64::NEG_INFINITY })
        });
        let cfg = HmcConfig {
            burn_in: 20,
            num_samples: 1,
            adapt: false,
            init_step_size: 1.0,
            ..Default::default()
        };
        assert!(matches!(hmc_sample(&mut cliff, &[0.0], &cfg), Err(Error::SamplerStuck { .. })));
    }

    #[test]
    fn csv_export_with_sidecar() {
        let cfg = HmcConfig {
            num_samples: 5,
            burn_in: 5,
            ..Default::default()
        };
        let s = hmc_sample(&mut normal(vec![0.0; 2], vec![1.0; 2]), &[0.0; 2], &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        s.write_csv(&path, &["a".into(), "b".into()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().next().unwrap(), "a,b");
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("samples.json")).unwrap()).unwrap();
        assert_eq!(side["num_samples"], 5);
        assert!(s.write_csv(&path, &["a".into()]).is_err());
    }
}
