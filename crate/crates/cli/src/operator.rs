use std::path::Path;

use eivuq::linalg::cholesky;
use eivuq::models::{predict_fields, FunctionObservations, OperatorPosterior, PointObservations, PredictiveSummary};
use eivuq::nets::{load_checkpoint, save_checkpoint, train_operator, NetworkSpec, OperatorModel, SubnetSpec};
use eivuq::physics::{build_operator_corpus, corpus_items, make_noisy, se_kernel, sensor_grid, solution_coords, CorpusProblem, NoiseModel};
use eivuq::sampler::{map_estimate, LogDensity, PosteriorSamples};
use eivuq::{Error, Result};
use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Baseline, ExperimentConfig, ExperimentId, OperatorSection};
use crate::report::ReportRow;
use crate::runner::{column, sample_chain, stream, sub_seed, Field, RunContext};

pub fn problem(id: ExperimentId) -> Result<CorpusProblem> {
    match id {
        ExperimentId::E4 => Ok(CorpusProblem::RdConstant),
        ExperimentId::E5 => Ok(CorpusProblem::RdHetero),
        other => Err(Error::Config(format!("{other} has no pretrained operator"))),
    }
}

/// Names of the operator's input functions.
pub fn input_names(id: ExperimentId) -> &'static [&'static str] {
    match id {
        ExperimentId::E5 => &["k", "f"],
        _ => &["f"],
    }
}

pub fn network(id: ExperimentId, o: &OperatorSection) -> Result<NetworkSpec> {
    let n = &o.network;
    let widths = |input: usize| {
        let mut w = vec![input];
        w.extend_from_slice(&n.branch_hidden);
        w.push(n.p);
        w
    };
    let branch = SubnetSpec::new(widths(sensor_grid().len()), n.branch_activation);
    let coord_dim = if id == ExperimentId::E5 { 2 } else { 1 };
    let mut tw = vec![coord_dim];
    tw.extend_from_slice(&n.trunk_hidden);
    tw.push(n.p);
    let trunk = SubnetSpec::new(tw, n.trunk_activation);
    match problem(id)? {
        CorpusProblem::RdConstant => NetworkSpec::deeponet(branch, trunk, n.output_bias),
        CorpusProblem::RdHetero => NetworkSpec::mio_deeponet(branch.clone(), branch, trunk, n.output_bias),
    }
}

/// Generate the corpus, train the operator and save its checkpoint.
pub fn train_and_save(cfg: &ExperimentConfig, log: &dyn Fn(&str)) -> Result<OperatorModel> {
    let o = cfg.operator();
    let prob = problem(cfg.experiment)?;
    log(&format!("generating corpus: {} train / {} test functions", o.corpus.n_train, o.corpus.n_test));
    let (train, test) = build_operator_corpus(prob, o.corpus.n_train, o.corpus.n_test, o.corpus.seed, o.corpus.length_scale)?;
    let spec = network(cfg.experiment, o)?;
    log(&format!("training {} parameters for {} iterations", spec.n_params(), o.training.iterations));
    let model = train_operator(&spec, &train.to_dataset(), &test.to_dataset(), &o.training)?;
    log(&format!(
        "test relative L2 error {:.4}",
        model.meta.test_rel_l2.unwrap_or(f64::NAN)
    ));
    save_checkpoint(&model, &o.checkpoint)?;
    Ok(model)
}

/// Load the configured checkpoint, training it first when allowed.
pub fn load_or_train(cfg: &ExperimentConfig, log: &dyn Fn(&str)) -> Result<OperatorModel> {
    let o = cfg.operator();
    if !o.checkpoint.exists() {
        if !o.train_first {
            return Err(Error::Config(format!(
                "checkpoint {} does not exist (run train-operator or set train_first)",
                o.checkpoint.display()
            )));
        }
        return train_and_save(cfg, log);
    }
    let model = load_checkpoint(&o.checkpoint)?;
    if model.spec != network(cfg.experiment, o)? {
        return Err(Error::Config(format!("{} holds a different network than configured", o.checkpoint.display())));
    }
    if model.meta.n_train != o.corpus.n_train || model.meta.n_test != o.corpus.n_test {
        return Err(Error::Config(format!("{} was trained on a different corpus split", o.checkpoint.display())));
    }
    Ok(model)
}

/// Zero-mean SE-kernel prior on the sensor grid: `(mean, Cholesky factor)`.
pub fn grid_prior(o: &OperatorSection) -> Result<(Array1<f64>, Array2<f64>)> {
    let grid = sensor_grid();
    let mut k = se_kernel(&grid, o.prior_length_scale);
    for i in 0..grid.len() {
        k[[i, i]] += o.prior_jitter;
    }
    Ok((Array1::zeros(grid.len()), cholesky(k.view())?))
}

/// Ground truth and noisy measurements for one seed.
pub struct OperatorData {
    /// Input functions on the sensor grid.
    pub inputs: Vec<Vec<f64>>,
    pub coords: Array2<f64>,
    pub solution: Vec<f64>,
    pub input_obs: Vec<FunctionObservations>,
    pub output_obs: PointObservations,
    /// Held-out corpus index of the truth.
    pub test_index: usize,
}

fn distinct_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::Config(format!("{k} measurements requested from {n} locations")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn generate_data(id: ExperimentId, o: &OperatorSection, seed: u64) -> Result<OperatorData> {
    let prob = problem(id)?;
    let test_index = (sub_seed(seed, stream::TRUTH) % o.corpus.n_test as u64) as usize;
    let item = corpus_items(prob, o.corpus.seed, &[o.corpus.n_train + test_index], o.corpus.length_scale)?;
    let grid = sensor_grid();
    let inputs: Vec<Vec<f64>> = item.inputs.iter().map(|m| m.row(0).to_vec()).collect();
    let solution = item.solutions.row(0).to_vec();
    let coords = solution_coords(prob);
    let mut input_obs = vec![];
    for (c, (ch, v)) in o.inputs.iter().zip(&inputs).enumerate() {
        let idx = distinct_indices(grid.len(), ch.count, sub_seed(seed, stream::LOCATIONS + c as u64))?;
        let clean: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
        let xs: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let noise = NoiseModel::new(0.0, ch.sigma)?;
        let d = make_noisy(&xs, &clean, noise, sub_seed(seed, stream::DATA + c as u64))?;
        input_obs.push(FunctionObservations {
            indices: idx,
            values: d.y_obs,
            sigma: ch.sigma,
        });
    }
    // Output measurements sit on solver-grid nodes: any node for u(·, 1),
    // interior nodes with t > 0 for u(x, t).
    let candidates: Vec<usize> = match prob {
        CorpusProblem::RdConstant => (0..coords.nrows()).collect(),
        CorpusProblem::RdHetero => (0..coords.nrows())
            .filter(|&p| {
                let (x, t) = (coords[[p, 0]], coords[[p, 1]]);
                x > 0.0 && x < 1.0 && t > 0.0
            })
            .collect(),
    };
    let pick = distinct_indices(candidates.len(), o.output.count, sub_seed(seed, stream::LOCATIONS + 10))?;
    let nodes: Vec<usize> = pick.iter().map(|&i| candidates[i]).collect();
    let clean: Vec<f64> = nodes.iter().map(|&p| solution[p]).collect();
    let d = make_noisy(
        &vec![0.0; nodes.len()],
        &clean,
        NoiseModel::new(0.0, o.output.sigma)?,
        sub_seed(seed, stream::DATA + 10),
    )?;
    let out_coords = Array2::from_shape_fn((nodes.len(), coords.ncols()), |(j, c)| coords[[nodes[j], c]]);
    Ok(OperatorData {
        inputs,
        coords,
        solution,
        input_obs,
        output_obs: PointObservations {
            coords: out_coords,
            values: d.y_obs,
            sigma: o.output.sigma,
        },
        test_index,
    })
}

/// Posterior over the input functions. `use_inputs` / `use_output` switch the
/// corresponding data terms; `input_sigma` overrides the input noise scale.
pub fn posterior(
    model: &OperatorModel,
    o: &OperatorSection,
    data: &OperatorData,
    use_inputs: bool,
    use_output: bool,
    input_sigma: Option<f64>,
) -> Result<OperatorPosterior> {
    let prior = grid_prior(o)?;
    let priors = vec![prior; data.inputs.len()];
    let inputs = data
        .input_obs
        .iter()
        .map(|obs| {
            if use_inputs {
                FunctionObservations {
                    sigma: input_sigma.unwrap_or(obs.sigma),
                    ..obs.clone()
                }
            } else {
                FunctionObservations::none()
            }
        })
        .collect();
    let output = use_output.then(|| data.output_obs.clone());
    OperatorPosterior::new(use_output.then_some(model), priors, inputs, output)
}

struct Summaries {
    inputs: Vec<PredictiveSummary>,
    output: PredictiveSummary,
}

fn summarize(post: &OperatorPosterior, model: &OperatorModel, trunk: &Array2<f64>, draws: &Array2<f64>) -> Result<Summaries> {
    let n_fun = post.n_functions();
    let inputs = (0..n_fun)
        .map(|k| {
            let f = predict_fields(draws.view(), |z| Ok(post.functions(z).swap_remove(k)))?;
            PredictiveSummary::from_fields(f.view())
        })
        .collect::<Result<Vec<_>>>()?;
    let out = predict_fields(draws.view(), |z| {
        let v = post.functions(z);
        let refs: Vec<&[f64]> = v.iter().map(|f| f.as_slice()).collect();
        Ok(model.predict_from(&model.branch_eval(&refs)?, trunk.view()).to_vec())
    })?;
    Ok(Summaries {
        inputs,
        output: PredictiveSummary::from_fields(out.view())?,
    })
}

fn point_estimate(post: &OperatorPosterior, model: &OperatorModel, trunk: &Array2<f64>, z: &[f64]) -> Result<Summaries> {
    let v = post.functions(z);
    let refs: Vec<&[f64]> = v.iter().map(|f| f.as_slice()).collect();
    let u = model.predict_from(&model.branch_eval(&refs)?, trunk.view()).to_vec();
    let point = |m: Vec<f64>| PredictiveSummary {
        std: vec![0.0; m.len()],
        mean: m,
    };
    Ok(Summaries {
        inputs: v.into_iter().map(point).collect(),
        output: point(u),
    })
}

struct Chain {
    samples: PosteriorSamples,
    post: OperatorPosterior,
}

fn run_chain(ctx: &RunContext, post: OperatorPosterior, seed: u64, chain: u64) -> Result<Chain> {
    let mut post = post;
    let z0 = vec![0.0; post.dim()];
    let start = map_estimate(&mut post, &z0, &ctx.cfg.init.map)?.params;
    let samples = sample_chain(ctx.cfg, &mut post, &start, None, seed, chain)?;
    Ok(Chain { samples, post })
}

pub fn run_seed(ctx: &mut RunContext, seed: u64) -> Result<()> {
    let cfg = ctx.cfg;
    let id = cfg.experiment;
    let o = cfg.operator();
    let model = load_or_train(cfg, &|m| ctx.log(m))?;
    let data = generate_data(id, o, seed)?;
    ctx.log(format!("seed {seed}: truth is held-out function {}", data.test_index));
    let sd = ctx.seed_dir(seed)?;
    write_operator_measurements(&sd.join("measurements.csv"), id, &data)?;
    let trunk = model.trunk_features(data.coords.view())?;
    let grid = sensor_grid();
    let grid_col = column(&grid);
    let names = input_names(id);

    let record = |ctx: &RunContext, row: &mut ReportRow, s: &Summaries, inputs: bool, output: bool, point: bool| -> Result<()> {
        let dir = ctx.method_dir(seed, &row.label)?;
        if inputs {
            for (k, name) in names.iter().enumerate() {
                let obs = &data.input_obs[k];
                ctx.record_field(
                    row,
                    &dir,
                    &Field {
                        name,
                        coords: &grid_col,
                        summary: &s.inputs[k],
                        reference: &data.inputs[k],
                        scatter: obs.indices.iter().map(|&i| grid[i]).zip(obs.values.iter().copied()).collect(),
                        point_estimate: point,
                        slice: None,
                    },
                )?;
            }
        }
        if output {
            let oc = &data.output_obs.coords;
            let scatter = if oc.ncols() == 1 {
                oc.column(0).iter().copied().zip(data.output_obs.values.iter().copied()).collect()
            } else {
                vec![]
            };
            ctx.record_field(
                row,
                &dir,
                &Field {
                    name: "u",
                    coords: &data.coords,
                    summary: &s.output,
                    reference: &data.solution,
                    scatter,
                    point_estimate: point,
                    slice: Some(1.0),
                },
            )?;
        }
        Ok(())
    };

    let mut chain_id = 0;
    if cfg.modes.is_empty() && !cfg.baselines.iter().any(|b| matches!(b, Baseline::Map)) {
        // Only baselines that need their own chains.
    } else {
        let post = posterior(&model, o, &data, true, true, None)?;
        if cfg.baselines.contains(&Baseline::Map) {
            let mut p = post.clone();
            let z0 = vec![0.0; p.dim()];
            let z = map_estimate(&mut p, &z0, &cfg.init.map)?.params;
            let mut row = ReportRow::new("map", seed);
            record(ctx, &mut row, &point_estimate(&p, &model, &trunk, &z)?, true, true, true)?;
            ctx.rows.push(row);
        }
        if !cfg.modes.is_empty() {
            ctx.log(format!("seed {seed}: synergistic posterior, HMC over {} coordinates", post.dim()));
            let ch = run_chain(ctx, post, seed, chain_id)?;
            chain_id += 1;
            let mut row = ReportRow::new("model", seed);
            row.acceptance = Some(ch.samples.accept_rate());
            row.step_size = Some(ch.samples.step_size);
            record(ctx, &mut row, &summarize(&ch.post, &model, &trunk, &ch.samples.draws)?, true, true, false)?;
            let dir = ctx.method_dir(seed, "model")?;
            ctx.write_samples(&mut row, &dir, &ch.samples, &ch.post.layout().column_names())?;
            ctx.rows.push(row);
        }
    }
    for b in &cfg.baselines {
        match *b {
            Baseline::Misspecified(sigma) => {
                ctx.log(format!("seed {seed}: misspecified input noise {sigma}"));
                let post = posterior(&model, o, &data, true, true, Some(sigma))?;
                let ch = run_chain(ctx, post, seed, chain_id)?;
                chain_id += 1;
                let mut row = ReportRow::new(b.label(), seed);
                row.acceptance = Some(ch.samples.accept_rate());
                row.step_size = Some(ch.samples.step_size);
                record(ctx, &mut row, &summarize(&ch.post, &model, &trunk, &ch.samples.draws)?, true, true, false)?;
                ctx.rows.push(row);
            }
            Baseline::NonSynergistic => {
                ctx.log(format!("seed {seed}: non-synergistic reconstructions"));
                let a = run_chain(ctx, posterior(&model, o, &data, true, false, None)?, seed, chain_id)?;
                let u = run_chain(ctx, posterior(&model, o, &data, false, true, None)?, seed, chain_id + 1)?;
                chain_id += 2;
                let mut row = ReportRow::new(b.label(), seed);
                row.acceptance = Some(0.5 * (a.samples.accept_rate() + u.samples.accept_rate()));
                let sa = summarize(&a.post, &model, &trunk, &a.samples.draws)?;
                let su = summarize(&u.post, &model, &trunk, &u.samples.draws)?;
                record(ctx, &mut row, &sa, true, false, false)?;
                record(ctx, &mut row, &su, false, true, false)?;
                ctx.rows.push(row);
            }
            _ => {}
        }
    }
    Ok(())
}

fn write_operator_measurements(path: &Path, id: ExperimentId, data: &OperatorData) -> Result<()> {
    let grid = sensor_grid();
    let mut out = String::from("channel,index,coordinate,clean,noisy\n");
    for (k, name) in input_names(id).iter().enumerate() {
        let obs = &data.input_obs[k];
        for (i, v) in obs.indices.iter().zip(&obs.values) {
            out.push_str(&format!("{name},{i},{},{},{v}\n", grid[*i], data.inputs[k][*i]));
        }
    }
    let oc = &data.output_obs.coords;
    for (j, v) in data.output_obs.values.iter().enumerate() {
        let c: Vec<String> = oc.row(j).iter().map(|x| x.to_string()).collect();
        let p = (0..data.coords.nrows())
            .find(|&p| data.coords.row(p) == oc.row(j))
            .expect("measurement on a grid node");
        out.push_str(&format!("u,{p},{},{},{v}\n", c.join(" "), data.solution[p]));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
