use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{DenseCache, NetKind, NetworkSpec, ParamVector, Subnet};
use crate::error::{Error, Result};

/// Provenance of a trained operator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// `(iteration, minibatch loss)` samples.
    pub loss_history: Vec<(usize, f64)>,
    pub test_mse: f64,
    /// Mean per-function relative L2 error on the test split (absent when
    /// every test target is identically zero).
    pub test_rel_l2: Option<f64>,
}

/// A pretrained (vanilla or multi-input) DeepONet with its sensor grid.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorModel {
    pub spec: NetworkSpec,
    pub params: ParamVector,
    /// Sensor locations on which every input function is sampled.
    pub sensors: Vec<f64>,
    pub meta: TrainingMeta,
}

/// Branch activations for one set of input functions.
#[derive(Clone, Debug)]
pub struct BranchEval {
    caches: Vec<DenseCache>,
    feats: Vec<Array1<f64>>,
    combined: Array1<f64>,
}

impl BranchEval {
    /// Elementwise product of all branch feature vectors.
    pub fn combined(&self) -> &Array1<f64> {
        &self.combined
    }
}

impl OperatorModel {
    pub fn new(spec: NetworkSpec, params: ParamVector, sensors: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if spec.kind == NetKind::Mlp {
            return Err(Error::ShapeError("an operator model needs a DeepONet spec".into()));
        }
        if params.layout != spec.layout() {
            return Err(Error::ShapeError("parameter layout does not match the network".into()));
        }
        for b in &spec.subnets[..spec.subnets.len() - 1] {
            if b.input_width() != sensors.len() {
                return Err(Error::ShapeError(format!(
                    "branch expects {} sensors, grid has {}",
                    b.input_width(),
                    sensors.len()
                )));
            }
        }
        Ok(OperatorModel {
            spec,
            params,
            sensors,
            meta: TrainingMeta::default(),
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn n_branches(&self) -> usize {
        self.spec.subnets.len() - 1
    }

    pub fn coord_dim(&self) -> usize {
        self.spec.subnets.last().unwrap().input_width()
    }

    fn subnet_offset(&self, i: usize) -> usize {
        self.spec.subnets[..i].iter().map(|s| s.n_params()).sum()
    }

    pub(crate) fn subnet_at<'a>(&'a self, params: &'a [f64], i: usize) -> Subnet<'a> {
        let off = self.subnet_offset(i);
        let spec = &self.spec.subnets[i];
        Subnet::new(spec, &params[off..off + spec.n_params()]).expect("layout checked at construction")
    }

    pub fn branch(&self, i: usize) -> Subnet<'_> {
        self.subnet_at(&self.params.values, i)
    }

    pub fn trunk(&self) -> Subnet<'_> {
        self.subnet_at(&self.params.values, self.n_branches())
    }

    pub fn bias(&self) -> f64 {
        if self.spec.output_bias {
            *self.params.values.last().unwrap()
        } else {
            0.0
        }
    }

    /// Trunk features for a batch of coordinates (`P × p`).
    pub fn trunk_features(&self, coords: ArrayView2<f64>) -> Result<Array2<f64>> {
        if coords.ncols() != self.coord_dim() {
            return Err(Error::ShapeError(format!(
                "coordinates have {} columns, trunk expects {}",
                coords.ncols(),
                self.coord_dim()
            )));
        }
        Ok(self.trunk().forward_batch(coords))
    }

    fn check_inputs(&self, inputs: &[&[f64]]) -> Result<()> {
        if inputs.len() != self.n_branches() {
            return Err(Error::ShapeError(format!(
                "{} input functions for {} branches",
                inputs.len(),
                self.n_branches()
            )));
        }
        for v in inputs {
            if v.len() != self.n_sensors() {
                return Err(Error::ShapeError(format!(
                    "input function has {} values, sensor grid has {}",
                    v.len(),
                    self.n_sensors()
                )));
            }
        }
        Ok(())
    }

    /// Evaluate every branch on one set of input functions.
    pub fn branch_eval(&self, inputs: &[&[f64]]) -> Result<BranchEval> {
        self.check_inputs(inputs)?;
        let mut caches = Vec::with_capacity(inputs.len());
        let mut feats = Vec::with_capacity(inputs.len());
        for (i, v) in inputs.iter().enumerate() {
            let x = ArrayView2::from_shape((1, v.len()), v).unwrap();
            let cache = self.branch(i).forward_cached(x, None);
            feats.push(cache.output().row(0).to_owned());
            caches.push(cache);
        }
        let mut combined = feats[0].clone();
        for f in &feats[1..] {
            combined *= f;
        }
        Ok(BranchEval {
            caches,
            feats,
            combined,
        })
    }

    /// `G(v)(x_j)` for every row `j` of precomputed trunk features.
    pub fn predict_from(&self, be: &BranchEval, trunk_feats: ArrayView2<f64>) -> Array1<f64> {
        trunk_feats.dot(&be.combined) + self.bias()
    }

    /// Gradient of `Σ_j d_pred[j]·G(v)(x_j)` with respect to each input
    /// function.
    pub fn input_grad(&self, be: &BranchEval, trunk_feats: ArrayView2<f64>, d_pred: &[f64]) -> Vec<Vec<f64>> {
        let d = ndarray::ArrayView1::from(d_pred);
        let d_comb = trunk_feats.t().dot(&d);
        (0..self.n_branches())
            .map(|i| {
                let mut d_feat = d_comb.clone();
                for (j, f) in be.feats.iter().enumerate() {
                    if j != i {
                        d_feat *= f;
                    }
                }
                let d_out = d_feat.insert_axis(ndarray::Axis(0));
                let dx = self.branch(i).backward(&be.caches[i], d_out.view(), None, true).unwrap();
                dx.row(0).to_vec()
            })
            .collect()
    }

    /// Single evaluation `G(inputs)(x)`.
    pub fn eval(&self, inputs: &[&[f64]], x: &[f64]) -> Result<f64> {
        self.check_inputs(inputs)?;
        if x.len() != self.coord_dim() {
            return Err(Error::ShapeError(format!(
                "coordinate has {} entries, trunk expects {}",
                x.len(),
                self.coord_dim()
            )));
        }
        let mut combined: Option<Vec<f64>> = None;
        for (i, v) in inputs.iter().enumerate() {
            let b = self.branch(i).forward(v)?;
            combined = Some(match combined {
                None => b,
                Some(c) => c.iter().zip(&b).map(|(a, b)| a * b).collect(),
            });
        }
        let t = self.trunk().forward(x)?;
        let mut acc = 0.0;
        for (c, tk) in combined.unwrap().iter().zip(&t) {
            acc += c * tk;
        }
        Ok(acc + self.bias())
    }
}

/// Vanilla DeepONet: `Σ_k branch_k(v)·trunk_k(x) + bias`.
pub fn deeponet_forward(model: &OperatorModel, v: &[f64], x: &[f64]) -> Result<f64> {
    if model.spec.kind != NetKind::Deeponet {
        return Err(Error::ShapeError(format!("expected a DeepONet, got {:?}", model.spec.kind)));
    }
    model.eval(&[v], x)
}

/// Multi-input DeepONet: `Σ_k branch1_k(k)·branch2_k(f)·trunk_k(x) + bias`.
pub fn mio_deeponet_forward(model: &OperatorModel, k: &[f64], f: &[f64], x: &[f64]) -> Result<f64> {
    if model.spec.kind != NetKind::MioDeeponet {
        return Err(Error::ShapeError(format!(
            "expected a multi-input DeepONet, got {:?}",
            model.spec.kind
        )));
    }
    model.eval(&[k, f], x)
}
