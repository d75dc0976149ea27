use eivuq::models::{predict_fields, InferenceMode, PredictiveSummary, RegressionPosterior, RegressionSetup};
use eivuq::nets::{dropout_predict, train_mlp_dropout, Activation, DropoutTraining, NetworkSpec};
use eivuq::physics::{linspace, make_noisy, regression_truth, write_measurements_csv, NoisyDataset};
use eivuq::sampler::{map_estimate, LogDensity};
use eivuq::Result;
use ndarray::{Array2, Axis};

use crate::config::{Baseline, ExperimentConfig, RegressionSection};
use crate::report::ReportRow;
use crate::runner::{column, sample_chain, stream, sub_seed, Field, RunContext};

pub fn network(hidden: &[usize]) -> NetworkSpec {
    NetworkSpec::scalar_mlp(hidden, Activation::Tanh)
}

pub fn generate_data(r: &RegressionSection, seed: u64) -> Result<NoisyDataset> {
    let x = linspace(r.domain[0], r.domain[1], r.n_data);
    let y: Vec<f64> = x.iter().map(|v| regression_truth(*v)).collect();
    make_noisy(&x, &y, r.noise, sub_seed(seed, stream::DATA))
}

fn posterior(cfg: &ExperimentConfig, data: &NoisyDataset, mode: InferenceMode, theta_std: f64) -> Result<RegressionPosterior> {
    let r = cfg.regression();
    RegressionPosterior::new(RegressionSetup {
        spec: network(&r.hidden),
        x_obs: data.x_obs.clone(),
        y_obs: data.y_obs.clone(),
        sigma_in: data.noise.sigma_in,
        sigma_out: data.noise.sigma_out.max(cfg.prior.sigma_floor),
        theta_std,
        chi_prior_std: cfg.prior.chi_prior(),
        mode,
    })
}

fn mass(cfg: &ExperimentConfig, post: &RegressionPosterior) -> Vec<f64> {
    let mut m = vec![1.0; post.dim()];
    let s = post.setup().sigma_in;
    let v = cfg.init.latent_mass.unwrap_or(1.0 / (s * s));
    m[post.n_theta()..].iter_mut().for_each(|x| *x = v);
    m
}

pub fn run_seed(ctx: &mut RunContext, seed: u64) -> Result<()> {
    let cfg = ctx.cfg;
    let r = cfg.regression();
    let data = generate_data(r, seed)?;
    let sd = ctx.seed_dir(seed)?;
    write_measurements_csv(&sd.join("measurements.csv"), &[("u", &data)])?;
    let xs = linspace(r.domain[0], r.domain[1], r.n_eval);
    let coords = column(&xs);
    let reference: Vec<f64> = xs.iter().map(|v| regression_truth(*v)).collect();
    let scatter: Vec<(f64, f64)> = data.x_obs.iter().copied().zip(data.y_obs.iter().copied()).collect();
    let record = |ctx: &RunContext, row: &mut ReportRow, s: &PredictiveSummary, point: bool| -> Result<()> {
        let dir = ctx.method_dir(seed, &row.label)?;
        ctx.record_field(
            row,
            &dir,
            &Field {
                name: "u",
                coords: &coords,
                summary: s,
                reference: &reference,
                scatter: scatter.clone(),
                point_estimate: point,
                slice: None,
            },
        )
    };

    let spec = network(&r.hidden);
    let theta0 = spec.init_params(sub_seed(seed, stream::INIT)).values;
    let want_map = cfg.baselines.contains(&Baseline::Map);
    let mut runs: Vec<(String, InferenceMode, f64)> =
        cfg.modes.iter().map(|m| (m.name().to_string(), *m, cfg.prior.theta_std)).collect();
    for &s in &r.small_prior_stds {
        for m in [InferenceMode::Ignore, InferenceMode::Model] {
            if cfg.modes.contains(&m) {
                runs.push((format!("{} (theta std {s})", m.name()), m, s));
            }
        }
    }
    if want_map && !cfg.modes.contains(&InferenceMode::Model) {
        runs.push(("map".into(), InferenceMode::Model, cfg.prior.theta_std));
    }
    let warm = if runs.is_empty() {
        vec![]
    } else {
        let mut wp = posterior(cfg, &data, InferenceMode::Ignore, cfg.prior.theta_std)?;
        ctx.log(format!("seed {seed}: warm start ({} iterations)", cfg.init.warm_start.iterations));
        map_estimate(&mut wp, &theta0, &cfg.init.warm_start)?.params
    };
    for (k, (label, mode, theta_std)) in runs.iter().enumerate() {
        let mut post = posterior(cfg, &data, *mode, *theta_std)?;
        let start = post.initial_point(&warm[..post.n_theta()])?;
        let map = map_estimate(&mut post, &start, &cfg.init.map)?.params;
        let is_default = *theta_std == cfg.prior.theta_std;
        if want_map && *mode == InferenceMode::Model && is_default {
            let mut row = ReportRow::new("map", seed);
            record(ctx, &mut row, &point(post.predict(&map, &xs)?), true)?;
            ctx.rows.push(row);
        }
        if label == "map" {
            continue;
        }
        ctx.log(format!("seed {seed}: {label}, HMC over {} coordinates", post.dim()));
        let m = mass(cfg, &post);
        let samples = sample_chain(cfg, &mut post, &map, Some(m), seed, k as u64)?;
        let fields = predict_fields(samples.draws.view(), |th| post.predict(th, &xs))?;
        let s = PredictiveSummary::from_fields(fields.view())?;
        let mut row = ReportRow::new(label.as_str(), seed);
        row.acceptance = Some(samples.accept_rate());
        row.step_size = Some(samples.step_size);
        record(ctx, &mut row, &s, false)?;
        let dir = ctx.method_dir(seed, label)?;
        ctx.write_samples(&mut row, &dir, &samples, &post.layout().column_names())?;
        ctx.rows.push(row);
    }

    for b in &cfg.baselines {
        let Baseline::Dropout(rate) = *b else { continue };
        ctx.log(format!("seed {seed}: dropout {rate}"));
        let s = dropout_summary(r, &data, rate, &xs, seed)?;
        let mut row = ReportRow::new(b.label(), seed);
        record(ctx, &mut row, &s, false)?;
        ctx.rows.push(row);
    }
    Ok(())
}

fn point(v: Vec<f64>) -> PredictiveSummary {
    let n = v.len();
    PredictiveSummary {
        mean: v,
        std: vec![0.0; n],
    }
}

/// Train with dropout on the noisy data and summarize stochastic passes.
pub fn dropout_summary(r: &RegressionSection, data: &NoisyDataset, rate: f64, xs: &[f64], seed: u64) -> Result<PredictiveSummary> {
    let spec = network(&r.hidden);
    let init = spec.init_params(sub_seed(seed, stream::INIT));
    let d = &r.dropout;
    let trained = train_mlp_dropout(
        &spec,
        &init,
        column(&data.x_obs).view(),
        column(&data.y_obs).view(),
        &DropoutTraining {
            rate,
            iterations: d.iterations,
            lr: d.lr,
            weight_decay: d.weight_decay,
            seed: sub_seed(seed, stream::DROPOUT),
        },
    )?;
    let passes = dropout_predict(&spec, &trained, column(xs).view(), rate, d.passes, sub_seed(seed, stream::DROPOUT + 1))?;
    let mut fields = Array2::zeros((passes.len(), xs.len()));
    for (mut row, p) in fields.axis_iter_mut(Axis(0)).zip(&passes) {
        row.assign(&p.column(0));
    }
    PredictiveSummary::from_fields(fields.view())
}
