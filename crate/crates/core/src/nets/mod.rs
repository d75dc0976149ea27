//! Network definitions, flat parameter layouts, and training.
//!
//! Every network stores its parameters in one flat `f64` array. A
//! [`Layout`] names the slices of that array: per-layer weights (row-major,
//! `out × in`) followed by biases, plus any extra blocks an inference problem
//! appends (latent coordinates, latent scalars).

mod adam;
mod checkpoint;
mod deeponet;
mod dropout;
mod mlp;
mod train;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use deeponet::{deeponet_forward, mio_deeponet_forward, BranchEval, OperatorModel, TrainingMeta};
pub use dropout::{dropout_predict, train_mlp_dropout, DropoutTraining};
pub use mlp::{mlp_forward, mlp_jet_forward, mlp_jet_on_tape, DenseCache, Subnet};
pub use train::{evaluate, predict_dataset, split_dataset, train_operator, OperatorDataset, TrainSettings};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a = σ(z)`.
    #[inline]
    pub fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetKind {
    Mlp,
    Deeponet,
    MioDeeponet,
}

/// A fully connected subnetwork: `widths[0]` inputs, `widths.last()` outputs,
/// activation on every hidden layer, final layer affine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubnetSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl SubnetSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Self {
        SubnetSpec { widths, activation }
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetKind,
    /// `[mlp]`, `[branch, trunk]`, or `[branch1, branch2, trunk]`.
    pub subnets: Vec<SubnetSpec>,
    /// Inner-product width `p` of a DeepONet (0 for a plain MLP).
    pub latent_width: usize,
    /// Trainable scalar added to DeepONet outputs.
    pub output_bias: bool,
}

impl NetworkSpec {
    pub fn mlp(widths: Vec<usize>, activation: Activation) -> Self {
        NetworkSpec {
            kind: NetKind::Mlp,
            subnets: vec![SubnetSpec::new(widths, activation)],
            latent_width: 0,
            output_bias: false,
        }
    }

    /// Scalar-input scalar-output MLP with the given hidden widths.
    pub fn scalar_mlp(hidden: &[usize], activation: Activation) -> Self {
        let mut widths = vec![1];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self::mlp(widths, activation)
    }

    pub fn deeponet(branch: SubnetSpec, trunk: SubnetSpec, output_bias: bool) -> Result<Self> {
        let p = branch.output_width();
        let spec = NetworkSpec {
            kind: NetKind::Deeponet,
            subnets: vec![branch, trunk],
            latent_width: p,
            output_bias,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mio_deeponet(
        branch1: SubnetSpec,
        branch2: SubnetSpec,
        trunk: SubnetSpec,
        output_bias: bool,
    ) -> Result<Self> {
        let p = trunk.output_width();
        let spec = NetworkSpec {
            kind: NetKind::MioDeeponet,
            subnets: vec![branch1, branch2, trunk],
            latent_width: p,
            output_bias,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let expect = match self.kind {
            NetKind::Mlp => 1,
            NetKind::Deeponet => 2,
            NetKind::MioDeeponet => 3,
        };
        if self.subnets.len() != expect {
            return Err(Error::ShapeError(format!(
                "{:?} needs {expect} subnetworks, got {}",
                self.kind,
                self.subnets.len()
            )));
        }
        for s in &self.subnets {
            if s.widths.len() < 2 || s.widths.contains(&0) {
                return Err(Error::ShapeError(format!("invalid layer widths {:?}", s.widths)));
            }
        }
        if self.kind != NetKind::Mlp {
            for s in &self.subnets {
                if s.output_width() != self.latent_width {
                    return Err(Error::ShapeError(format!(
                        "subnetwork output width {} differs from p = {}",
                        s.output_width(),
                        self.latent_width
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn subnet_names(&self) -> &'static [&'static str] {
        match self.kind {
            NetKind::Mlp => &["mlp"],
            NetKind::Deeponet => &["branch", "trunk"],
            NetKind::MioDeeponet => &["branch1", "branch2", "trunk"],
        }
    }

    pub fn layout(&self) -> Layout {
        let mut layout = Layout::default();
        for (name, sub) in self.subnet_names().iter().zip(&self.subnets) {
            for (l, w) in sub.widths.windows(2).enumerate() {
                layout.push(format!("{name}.{l}.w"), w[0] * w[1]);
                layout.push(format!("{name}.{l}.b"), w[1]);
            }
        }
        if self.kind != NetKind::Mlp && self.output_bias {
            layout.push("bias", 1);
        }
        layout
    }

    pub fn n_params(&self) -> usize {
        self.layout().total()
    }

    /// Seeded initialization: every weight and bias drawn from
    /// `U(−1/√fan_in, 1/√fan_in)`; the DeepONet output bias starts at 0.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let layout = self.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layout.total());
        for sub in &self.subnets {
            for w in sub.widths.windows(2) {
                let a = 1.0 / (w[0] as f64).sqrt();
                for _ in 0..(w[0] * w[1] + w[1]) {
                    values.push(rng.random_range(-a..a));
                }
            }
        }
        if self.kind != NetKind::Mlp && self.output_bias {
            values.push(0.0);
        }
        ParamVector { values, layout }
    }
}

/// A named slice of a flat parameter array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, disjoint, covering sequence of named blocks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, len: usize) -> std::ops::Range<usize> {
        let offset = self.total();
        self.blocks.push(Block {
            name: name.into(),
            offset,
            len,
        });
        offset..offset + len
    }

    /// Append every block of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &Layout) -> usize {
        let base = self.total();
        for b in &other.blocks {
            self.push(format!("{prefix}{}", b.name), b.len);
        }
        base
    }

    pub fn total(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.offset..b.offset + b.len)
    }

    /// One column name per coordinate (`name[i]`, or `name` for scalars).
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.total());
        for b in &self.blocks {
            if b.len == 1 {
                out.push(b.name.clone());
            } else {
                out.extend((0..b.len).map(|i| format!("{}[{i}]", b.name)));
            }
        }
        out
    }

    /// Blocks must tile `0..total` without gaps.
    pub fn is_consistent(&self) -> bool {
        let mut next = 0;
        for b in &self.blocks {
            if b.offset != next {
                return false;
            }
            next += b.len;
        }
        true
    }
}

/// Flat parameters with their layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.total() || !layout.is_consistent() {
            return Err(Error::ShapeError(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        ParamVector {
            values: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.range(name).map(|r| &self.values[r])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.layout.range(name).map(move |r| &mut self.values[r])
    }

    /// Split into one owned vector per block.
    pub fn unflatten(&self) -> Vec<(String, Vec<f64>)> {
        self.layout
            .blocks()
            .iter()
            .map(|b| (b.name.clone(), self.values[b.offset..b.offset + b.len].to_vec()))
            .collect()
    }

    /// Inverse of [`ParamVector::unflatten`].
    pub fn flatten(blocks: &[(String, Vec<f64>)]) -> Self {
        let mut layout = Layout::default();
        let mut values = Vec::new();
        for (name, v) in blocks {
            layout.push(name.clone(), v.len());
            values.extend_from_slice(v);
        }
        ParamVector { values, layout }
    }
}
