use ndarray::{s, Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{deeponet::OperatorModel, Adam, NetworkSpec, TrainingMeta};
use crate::error::{Error, Result};

/// Input functions and solution fields on a shared coordinate set.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorDataset {
    pub sensors: Vec<f64>,
    /// One `N × n_sensors` matrix per branch.
    pub inputs: Vec<Array2<f64>>,
    /// `P × d` query coordinates shared by every function.
    pub coords: Array2<f64>,
    /// `N × P` solution values.
    pub targets: Array2<f64>,
}

impl OperatorDataset {
    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, model: &OperatorModel) -> Result<()> {
        if self.inputs.len() != model.n_branches() {
            return Err(Error::ShapeError(format!(
                "dataset has {} input channels, network has {} branches",
                self.inputs.len(),
                model.n_branches()
            )));
        }
        for inp in &self.inputs {
            if inp.nrows() != self.len() || inp.ncols() != model.n_sensors() {
                return Err(Error::ShapeError("input matrix does not match sensors/targets".into()));
            }
        }
        if self.coords.nrows() != self.targets.ncols() || self.coords.ncols() != model.coord_dim() {
            return Err(Error::ShapeError("coordinates do not match targets/trunk".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub iterations: usize,
    /// Functions per minibatch.
    pub batch_size: usize,
    /// Coordinates per minibatch (all of them when absent).
    pub points_per_batch: Option<usize>,
    pub lr: f64,
    /// Multiply the learning rate by `decay_factor` every `decay_every`
    /// iterations (0 disables).
    pub decay_every: usize,
    pub decay_factor: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            iterations: 20_000,
            batch_size: 64,
            points_per_batch: None,
            lr: 1e-3,
            decay_every: 0,
            decay_factor: 0.5,
            log_every: 100,
            seed: 0,
        }
    }
}

/// Predictions for the whole dataset (`N × P`).
pub fn predict_dataset(model: &OperatorModel, data: &OperatorDataset) -> Result<Array2<f64>> {
    data.check(model)?;
    let trunk = model.trunk_features(data.coords.view())?;
    let mut comb = model.branch(0).forward_batch(data.inputs[0].view());
    for (i, inp) in data.inputs.iter().enumerate().skip(1) {
        comb *= &model.branch(i).forward_batch(inp.view());
    }
    Ok(comb.dot(&trunk.t()) + model.bias())
}

/// `(mse, mean relative L2)` of the model on a dataset.
pub fn evaluate(model: &OperatorModel, data: &OperatorDataset) -> Result<(f64, Option<f64>)> {
    if data.is_empty() {
        return Ok((0.0, None));
    }
    let pred = predict_dataset(model, data)?;
    let diff = &pred - &data.targets;
    let mse = diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
    let mut rel = Vec::new();
    for (d, t) in diff.outer_iter().zip(data.targets.outer_iter()) {
        let nt = t.dot(&t).sqrt();
        if nt > 0.0 {
            rel.push(d.dot(&d).sqrt() / nt);
        }
    }
    let rel = (!rel.is_empty()).then(|| rel.iter().sum::<f64>() / rel.len() as f64);
    Ok((mse, rel))
}

/// Minibatch Adam on the mean squared error between predictions and
/// solutions. Test metrics go into the returned model's metadata.
pub fn train_operator(
    spec: &NetworkSpec,
    train: &OperatorDataset,
    test: &OperatorDataset,
    cfg: &TrainSettings,
) -> Result<OperatorModel> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut model = OperatorModel::new(spec.clone(), spec.init_params(cfg.seed), train.sensors.clone())?;
    train.check(&model)?;
    if !test.is_empty() {
        test.check(&model)?;
    }
    let n = train.len();
    let p_all = train.coords.nrows();
    let bsz = cfg.batch_size.clamp(1, n);
    let q = cfg.points_per_batch.unwrap_or(p_all).clamp(1, p_all);
    let mut opt = Adam::new(model.params.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1e);
    let mut grad = vec![0.0; model.params.len()];
    let mut history = Vec::new();

    for it in 0..cfg.iterations {
        if cfg.decay_every > 0 && it > 0 && it % cfg.decay_every == 0 {
            opt.lr *= cfg.decay_factor;
        }
        let rows = sample(&mut rng, n, bsz).into_vec();
        let cols: Vec<usize> = if q == p_all {
            (0..p_all).collect()
        } else {
            sample(&mut rng, p_all, q).into_vec()
        };
        let loss = batch_loss_grad(&model, train, &rows, &cols, &mut grad);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration: it });
        }
        if cfg.log_every > 0 && it % cfg.log_every == 0 {
            history.push((it, loss));
        }
        opt.step(&mut model.params.values, &grad)
            .map_err(|_| Error::TrainingDiverged { iteration: it })?;
    }

    let (test_mse, test_rel_l2) = evaluate(&model, test)?;
    model.meta = TrainingMeta {
        iterations: cfg.iterations,
        seed: cfg.seed,
        n_train: n,
        n_test: test.len(),
        loss_history: history,
        test_mse,
        test_rel_l2,
    };
    Ok(model)
}

/// Minibatch MSE over `rows × cols` of the dataset; writes its gradient with
/// respect to the model parameters into `grad`.
fn batch_loss_grad(
    model: &OperatorModel,
    train: &OperatorDataset,
    rows: &[usize],
    cols: &[usize],
    grad: &mut [f64],
) -> f64 {
    let spec = &model.spec;
    let nb = model.n_branches();
    let params = &model.params.values;
    let coords = train.coords.select(Axis(0), cols);
    let target = train.targets.select(Axis(0), rows).select(Axis(1), cols);
    let branches: Vec<_> = (0..nb).map(|i| model.subnet_at(params, i)).collect();
    let trunk_net = model.subnet_at(params, nb);
    let b_caches: Vec<_> = (0..nb)
        .map(|i| branches[i].forward_cached(train.inputs[i].select(Axis(0), rows).view(), None))
        .collect();
    let t_cache = trunk_net.forward_cached(coords.view(), None);
    let mut comb = b_caches[0].output().clone();
    for c in &b_caches[1..] {
        comb *= c.output();
    }
    let pred = comb.dot(&t_cache.output().t()) + model.bias();
    let diff = pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
    let d_pred = diff * (2.0 / (rows.len() * cols.len()) as f64);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let d_comb = d_pred.dot(t_cache.output());
    let d_trunk = d_pred.t().dot(&comb);
    let mut off = 0;
    for i in 0..nb {
        let mut d_b = d_comb.clone();
        for (j, c) in b_caches.iter().enumerate() {
            if j != i {
                d_b *= c.output();
            }
        }
        let len = spec.subnets[i].n_params();
        branches[i].backward(&b_caches[i], d_b.view(), Some(&mut grad[off..off + len]), false);
        off += len;
    }
    let len = spec.subnets[nb].n_params();
    trunk_net.backward(&t_cache, d_trunk.view(), Some(&mut grad[off..off + len]), false);
    if spec.output_bias {
        *grad.last_mut().unwrap() = d_pred.sum();
    }
    loss
}

/// Split rows `[0, n_train)` / `[n_train, N)` of a full dataset.
pub fn split_dataset(data: &OperatorDataset, n_train: usize) -> (OperatorDataset, OperatorDataset) {
    let n_train = n_train.min(data.len());
    let part = |r: std::ops::Range<usize>| OperatorDataset {
        sensors: data.sensors.clone(),
        inputs: data.inputs.iter().map(|a| a.slice(s![r.clone(), ..]).to_owned()).collect(),
        coords: data.coords.clone(),
        targets: data.targets.slice(s![r, ..]).to_owned(),
    };
    (part(0..n_train), part(n_train..data.len()))
}
