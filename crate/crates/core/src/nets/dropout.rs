use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Adam, NetKind, NetworkSpec, ParamVector, Subnet};
use crate::error::{Error, Result};

/// Settings for fitting an MLP with dropout on every hidden layer.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DropoutTraining {
    pub rate: f64,
    pub iterations: usize,
    pub lr: f64,
    /// Coefficient of `½‖θ‖²` added to the mean squared error.
    pub weight_decay: f64,
    pub seed: u64,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn mlp_subnet<'a>(spec: &'a NetworkSpec, params: &'a ParamVector) -> Result<Subnet<'a>> {
    if spec.kind != NetKind::Mlp {
        return Err(Error::ShapeError("dropout needs a plain MLP".into()));
    }
    if params.layout != spec.layout() {
        return Err(Error::ShapeError("parameter layout does not match the network".into()));
    }
    Subnet::new(&spec.subnets[0], &params.values)
}

/// Inverted-dropout keep mask: `1/(1−rate)` with probability `1−rate`, else 0.
fn draw_mask(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rate > 0.0 && rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// `m` stochastic forward passes over the rows of `x`. Each pass draws one
/// mask per hidden unit and applies it to every row, so a pass is one sampled
/// function. Returns `m` arrays of shape `rows × outputs`.
pub fn dropout_predict(
    spec: &NetworkSpec,
    params: &ParamVector,
    x: ArrayView2<f64>,
    rate: f64,
    m: usize,
    seed: u64,
) -> Result<Vec<Array2<f64>>> {
    check_rate(rate)?;
    let net = mlp_subnet(spec, params)?;
    let widths = &net.spec().widths;
    let hidden = &widths[1..widths.len() - 1];
    let n_out = *widths.last().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let masks: Vec<Vec<f64>> = hidden.iter().map(|&w| draw_mask(&mut rng, w, rate)).collect();
        let mut y = Array2::zeros((x.nrows(), n_out));
        for (row, mut yr) in x.outer_iter().zip(y.outer_iter_mut()) {
            let v = net.forward_masked(&row.to_vec(), Some(&masks))?;
            yr.assign(&ndarray::ArrayView1::from(&v));
        }
        out.push(y);
    }
    Ok(out)
}

/// Full-batch Adam on the mean squared error with fresh dropout masks per
/// sample and iteration.
pub fn train_mlp_dropout(
    spec: &NetworkSpec,
    init: &ParamVector,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    cfg: &DropoutTraining,
) -> Result<ParamVector> {
    check_rate(cfg.rate)?;
    mlp_subnet(spec, init)?;
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::ShapeError(format!("{} inputs for {} targets", x.nrows(), y.nrows())));
    }
    let sub = &spec.subnets[0];
    let hidden = &sub.widths[1..sub.widths.len() - 1];
    let n = x.nrows();
    let mut params = init.clone();
    let mut opt = Adam::new(params.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grad = vec![0.0; params.len()];
    for it in 0..cfg.iterations {
        let masks: Vec<Array2<f64>> = hidden
            .iter()
            .map(|&w| Array2::from_shape_vec((n, w), draw_mask(&mut rng, n * w, cfg.rate)).unwrap())
            .collect();
        let net = Subnet::new(sub, &params.values)?;
        let cache = net.forward_cached(x, Some(masks));
        let d_out = (cache.output() - &y) * (2.0 / n as f64);
        grad.iter_mut().zip(&params.values).for_each(|(g, p)| *g = cfg.weight_decay * p);
        net.backward(&cache, d_out.view(), Some(&mut grad), false);
        opt.step(&mut params.values, &grad)
            .map_err(|_| Error::TrainingDiverged { iteration: it })?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{mlp_forward, Activation};
    use ndarray::Array2;

    #[test]
    fn zero_rate_matches_plain_forward() {
        let spec = NetworkSpec::scalar_mlp(&[8, 8], Activation::Tanh);
        let p = spec.init_params(3);
        let x = Array2::from_shape_fn((5, 1), |(i, _)| i as f64 * 0.3 - 0.6);
        let outs = dropout_predict(&spec, &p, x.view(), 0.0, 4, 9).unwrap();
        for o in &outs {
            for i in 0..5 {
                assert_eq!(o[[i, 0]], mlp_forward(&spec, &p, &[x[[i, 0]]]).unwrap()[0]);
            }
        }
    }

    #[test]
    fn inverted_dropout_is_unbiased_for_linear_hidden_layer() {
        // 1 -> 4 (relu, positive pre-activations so it is linear) -> 1
        let spec = NetworkSpec::scalar_mlp(&[4], Activation::Relu);
        let values = vec![1.0, 0.5, 2.0, 1.5, 0.1, 0.2, 0.3, 0.4, 1.0, -1.0, 0.5, 2.0, 0.25];
        let p = ParamVector::new(values, spec.layout()).unwrap();
        let x = Array2::from_elem((1, 1), 0.7);
        let det = mlp_forward(&spec, &p, &[0.7]).unwrap()[0];
        let m = 100_000;
        let outs = dropout_predict(&spec, &p, x.view(), 0.5, m, 11).unwrap();
        let s: Vec<f64> = outs.iter().map(|o| o[[0, 0]]).collect();
        let mean = s.iter().sum::<f64>() / m as f64;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((mean - det).abs() < 3.0 * se, "mean {mean} det {det} se {se}");
    }

    #[test]
    fn same_seed_same_samples_and_rate_check() {
        let spec = NetworkSpec::scalar_mlp(&[6], Activation::Tanh);
        let p = spec.init_params(1);
        let x = Array2::from_elem((3, 1), 0.2);
        let a = dropout_predict(&spec, &p, x.view(), 0.3, 10, 5).unwrap();
        let b = dropout_predict(&spec, &p, x.view(), 0.3, 10, 5).unwrap();
        assert_eq!(a, b);
        assert!(matches!(dropout_predict(&spec, &p, x.view(), 1.0, 1, 5), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn dropout_training_reduces_error() {
        let spec = NetworkSpec::scalar_mlp(&[16, 16], Activation::Tanh);
        let p0 = spec.init_params(2);
        let x = Array2::from_shape_fn((32, 1), |(i, _)| -1.0 + 2.0 * i as f64 / 31.0);
        let y = x.mapv(|v| (2.0 * v).sin());
        let cfg = DropoutTraining {
            rate: 0.02,
            iterations: 2000,
            lr: 1e-2,
            weight_decay: 0.0,
            seed: 4,
        };
        let mse = |p: &ParamVector| {
            x.iter()
                .zip(y.iter())
                .map(|(a, b)| (mlp_forward(&spec, p, &[*a]).unwrap()[0] - b).powi(2))
                .sum::<f64>()
                / 32.0
        };
        let p = train_mlp_dropout(&spec, &p0, x.view(), y.view(), &cfg).unwrap();
        assert!(mse(&p) < 0.1 * mse(&p0));
    }
}
