use eivuq::models::{predict_fields, InferenceMode, LambdaSpec, PoissonChannel, PoissonPosterior, PoissonSetup, PredictiveSummary};
use eivuq::nets::{Activation, NetworkSpec};
use eivuq::physics::{linspace, make_noisy, poisson_truth_with, write_measurements_csv, NoiseModel, NoisyDataset};
use eivuq::sampler::{map_estimate, LogDensity, MapSettings};
use eivuq::Result;
use ndarray::Array2;

use crate::config::{Baseline, ExperimentConfig, PinnSettings, PoissonSection};
use crate::metrics::relative_l2;
use crate::report::ReportRow;
use crate::runner::{column, sample_chain, scalar_summary, stream, sub_seed, Field, RunContext};

/// Boundary values `u(0) = u(1) = 1`, hard-encoded in the network.
pub const BOUNDARY: (f64, f64) = (1.0, 1.0);

pub fn network(hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::scalar_mlp(hidden, Activation::Tanh)
}

/// Measurement sets of one seed.
pub struct PoissonData {
    pub f: NoisyDataset,
    pub u: Option<NoisyDataset>,
}

pub fn generate_data(p: &PoissonSection, seed: u64) -> Result<PoissonData> {
    let truth = |x: f64| poisson_truth_with(x, p.kappa, p.lambda_true);
    let xf = linspace(0.0, 1.0, p.n_f);
    let yf: Vec<f64> = xf.iter().map(|x| truth(*x).1).collect();
    let f = make_noisy(&xf, &yf, p.f_noise, sub_seed(seed, stream::DATA))?;
    let u = if p.n_u > 0 {
        let xu = linspace(0.0, 1.0, p.n_u);
        let yu: Vec<f64> = xu.iter().map(|x| truth(*x).0).collect();
        Some(make_noisy(&xu, &yu, p.u_noise, sub_seed(seed, stream::DATA + 100))?)
    } else {
        None
    };
    Ok(PoissonData { f, u })
}

fn channel(d: &NoisyDataset, floor: f64) -> PoissonChannel {
    PoissonChannel {
        x_obs: d.x_obs.clone(),
        y_obs: d.y_obs.clone(),
        sigma_in: d.noise.sigma_in,
        sigma_out: d.noise.sigma_out.max(floor),
    }
}

pub fn posterior(cfg: &ExperimentConfig, data: &PoissonData, mode: InferenceMode) -> Result<PoissonPosterior> {
    let p = cfg.poisson();
    let floor = cfg.prior.sigma_floor;
    PoissonPosterior::new(PoissonSetup {
        spec: network(&p.hidden),
        kappa: p.kappa,
        lambda: if p.infer_lambda {
            LambdaSpec::Latent {
                prior_mean: p.log_lambda_prior[0],
                prior_std: p.log_lambda_prior[1],
            }
        } else {
            LambdaSpec::Known(p.lambda_true)
        },
        boundary: BOUNDARY,
        f: channel(&data.f, floor),
        u: data.u.as_ref().map(|u| channel(u, floor)),
        theta_std: cfg.prior.theta_std,
        chi_prior_std: cfg.prior.chi_prior(),
        mode,
    })
}

/// Diagonal mass: 1 for network weights and `log λ`, `1/σ_in²` (or the
/// configured value) for latent coordinates.
fn mass(cfg: &ExperimentConfig, post: &PoissonPosterior) -> Vec<f64> {
    let st = post.setup();
    let mut m = vec![1.0; post.dim()];
    for b in post.layout().blocks() {
        let sigma_in = match b.name.as_str() {
            "x_f" => st.f.sigma_in,
            "x_u" => st.u.as_ref().map_or(0.0, |u| u.sigma_in),
            _ => continue,
        };
        let v = cfg.init.latent_mass.unwrap_or(1.0 / (sigma_in * sigma_in));
        m[b.offset..b.offset + b.len].iter_mut().for_each(|x| *x = v);
    }
    m
}

/// Start point for a mode: warm-started weights, latent coordinates at the
/// observations, and `log λ` from the warm start when inferred.
fn start_point(post: &PoissonPosterior, warm: &[f64], warm_post: &PoissonPosterior) -> Result<Vec<f64>> {
    let mut x = post.initial_point(&warm[..post.n_theta()])?;
    if let (Some(i), Some(j)) = (post.log_lambda_index(), warm_post.log_lambda_index()) {
        x[i] = warm[j];
    }
    Ok(x)
}

struct Eval {
    xs: Vec<f64>,
    coords: Array2<f64>,
    u: Vec<f64>,
    f: Vec<f64>,
}

fn eval_grid(p: &PoissonSection) -> Eval {
    let xs = linspace(0.0, 1.0, p.n_eval);
    let (u, f) = xs.iter().map(|x| poisson_truth_with(*x, p.kappa, p.lambda_true)).unzip();
    Eval {
        coords: column(&xs),
        xs,
        u,
        f,
    }
}

fn record_fields(
    ctx: &RunContext,
    row: &mut ReportRow,
    dir: &std::path::Path,
    ev: &Eval,
    data: &PoissonData,
    u: &PredictiveSummary,
    f: &PredictiveSummary,
    point: bool,
) -> Result<()> {
    let scatter_u = data.u.as_ref().map_or(vec![], |d| d.x_obs.iter().copied().zip(d.y_obs.iter().copied()).collect());
    let scatter_f = data.f.x_obs.iter().copied().zip(data.f.y_obs.iter().copied()).collect();
    for (name, s, r, scatter) in [("u", u, &ev.u, scatter_u), ("f", f, &ev.f, scatter_f)] {
        ctx.record_field(
            row,
            dir,
            &Field {
                name,
                coords: &ev.coords,
                summary: s,
                reference: r,
                scatter,
                point_estimate: point,
                slice: None,
            },
        )?;
    }
    Ok(())
}

fn point_summary(v: Vec<f64>) -> PredictiveSummary {
    let n = v.len();
    PredictiveSummary {
        mean: v,
        std: vec![0.0; n],
    }
}

pub fn run_seed(ctx: &mut RunContext, seed: u64) -> Result<()> {
    let cfg = ctx.cfg;
    let p = cfg.poisson();
    let data = generate_data(p, seed)?;
    let sd = ctx.seed_dir(seed)?;
    let mut sets = vec![("f", &data.f)];
    if let Some(u) = &data.u {
        sets.push(("u", u));
    }
    write_measurements_csv(&sd.join("measurements.csv"), &sets)?;
    let ev = eval_grid(p);

    if cfg.baselines.contains(&Baseline::Deterministic) {
        for sc in Scenario::ALL {
            ctx.log(format!("seed {seed}: deterministic PINN, {} data", sc.name()));
            let (u, f) = train_pinn_deterministic(p, &p.pinn, sc, seed, p.pinn.iterations)?;
            let label = format!("pinn-{}", sc.name());
            let mut row = ReportRow::new(&label, seed);
            let dir = ctx.method_dir(seed, &label)?;
            record_fields(ctx, &mut row, &dir, &ev, &data, &point_summary(u), &point_summary(f), true)?;
            ctx.rows.push(row);
        }
    }

    let want_map = cfg.baselines.contains(&Baseline::Map);
    if cfg.modes.is_empty() && !want_map {
        return Ok(());
    }
    let spec = network(&p.hidden);
    let theta0 = spec.init_params(sub_seed(seed, stream::INIT)).values;
    let mut warm_post = posterior(cfg, &data, InferenceMode::Ignore)?;
    ctx.log(format!("seed {seed}: warm start ({} iterations)", cfg.init.warm_start.iterations));
    let x0 = warm_post.initial_point(&theta0)?;
    let warm = map_estimate(&mut warm_post, &x0, &cfg.init.warm_start)?.params;

    let mut modes = cfg.modes.clone();
    if want_map && !modes.contains(&InferenceMode::Model) {
        modes.push(InferenceMode::Model);
    }
    for (k, &mode) in modes.iter().enumerate() {
        let mut post = posterior(cfg, &data, mode)?;
        let start = start_point(&post, &warm, &warm_post)?;
        let map = map_estimate(&mut post, &start, &cfg.init.map)?.params;
        if want_map && mode == InferenceMode::Model {
            let (u, f) = post.predict(&map, &ev.xs)?;
            let mut row = ReportRow::new("map", seed);
            let dir = ctx.method_dir(seed, "map")?;
            record_fields(ctx, &mut row, &dir, &ev, &data, &point_summary(u), &point_summary(f), true)?;
            if post.log_lambda_index().is_some() {
                row.scalars.push(scalar_summary("lambda", [post.lambda(&map)].into_iter(), Some(p.lambda_true)));
            }
            ctx.rows.push(row);
        }
        if !cfg.modes.contains(&mode) {
            continue;
        }
        ctx.log(format!("seed {seed}: {mode} mode, HMC over {} coordinates", post.dim()));
        let m = mass(cfg, &post);
        let samples = sample_chain(cfg, &mut post, &map, Some(m), seed, k as u64)?;
        let uf = predict_fields(samples.draws.view(), |th| Ok(post.predict(th, &ev.xs)?.0))?;
        let ff = predict_fields(samples.draws.view(), |th| Ok(post.predict(th, &ev.xs)?.1))?;
        let us = PredictiveSummary::from_fields(uf.view())?;
        let fs = PredictiveSummary::from_fields(ff.view())?;
        let label = mode.name();
        let mut row = ReportRow::new(label, seed);
        let dir = ctx.method_dir(seed, label)?;
        record_fields(ctx, &mut row, &dir, &ev, &data, &us, &fs, false)?;
        if let Some(i) = post.log_lambda_index() {
            row.scalars.push(scalar_summary("lambda", samples.draws.column(i).iter().map(|l| l.exp()), Some(p.lambda_true)));
        }
        row.acceptance = Some(samples.accept_rate());
        row.step_size = Some(samples.step_size);
        ctx.write_samples(&mut row, &dir, &samples, &post.layout().column_names())?;
        ctx.log(format!(
            "seed {seed}: {mode} done, acceptance {:.2}, f error {:.3}",
            samples.accept_rate(),
            row.target("f").map_or(f64::NAN, |t| t.rel_l2)
        ));
        ctx.rows.push(row);
    }
    Ok(())
}

/// Data scenarios of the deterministic PINN comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Clean,
    NoisyOutput,
    NoisyInput,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Clean, Scenario::NoisyOutput, Scenario::NoisyInput];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Clean => "clean",
            Scenario::NoisyOutput => "noisy-output",
            Scenario::NoisyInput => "noisy-input",
        }
    }

    fn noise(self, sigma: f64) -> NoiseModel {
        match self {
            Scenario::Clean => NoiseModel::default(),
            Scenario::NoisyOutput => NoiseModel {
                sigma_in: 0.0,
                sigma_out: sigma,
            },
            Scenario::NoisyInput => NoiseModel {
                sigma_in: sigma,
                sigma_out: 0.0,
            },
        }
    }
}

/// Deterministic PINN on the `f` measurements of one scenario, trained by
/// Adam on `w_f·mean((F[u_θ](x̃) − f̃)²) + l2·‖θ‖²`. The boundary condition is
/// hard-encoded, so the boundary term vanishes. Returns `(u, f)` on the
/// evaluation grid.
pub fn train_pinn_deterministic(
    p: &PoissonSection,
    pinn: &PinnSettings,
    scenario: Scenario,
    seed: u64,
    iterations: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let xf = linspace(0.0, 1.0, p.n_f);
    let yf: Vec<f64> = xf.iter().map(|x| poisson_truth_with(*x, p.kappa, p.lambda_true).1).collect();
    let d = make_noisy(&xf, &yf, scenario.noise(pinn.noise), sub_seed(seed, stream::DATA + 200))?;
    // The ignore-mode negative log-posterior equals this loss up to a
    // constant when σ² = N/(2·w_f) and the weight prior variance is 1/(2·l2).
    let n = d.len() as f64;
    let theta_std = if pinn.l2 > 0.0 { (0.5 / pinn.l2).sqrt() } else { 1e150 };
    let spec = network(&p.hidden);
    let mut post = PoissonPosterior::new(PoissonSetup {
        spec: spec.clone(),
        kappa: p.kappa,
        lambda: LambdaSpec::Known(p.lambda_true),
        boundary: BOUNDARY,
        f: PoissonChannel {
            x_obs: d.x_obs.clone(),
            y_obs: d.y_obs.clone(),
            sigma_in: 0.0,
            sigma_out: (n / (2.0 * pinn.w_f)).sqrt(),
        },
        u: None,
        theta_std,
        chi_prior_std: None,
        mode: InferenceMode::Ignore,
    })?;
    let theta0 = spec.init_params(sub_seed(seed, stream::INIT + 200)).values;
    let fit = map_estimate(&mut post, &theta0, &MapSettings { iterations, lr: pinn.lr })?;
    let xs = linspace(0.0, 1.0, p.n_eval);
    post.predict(&fit.params, &xs)
}

/// Relative L2 errors of `(u, f)` for a deterministic fit.
pub fn pinn_errors(p: &PoissonSection, u: &[f64], f: &[f64]) -> Result<(f64, f64)> {
    let ev = eval_grid(p);
    Ok((relative_l2(u, &ev.u)?, relative_l2(f, &ev.f)?))
}
