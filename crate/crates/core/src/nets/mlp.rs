use ndarray::{Array2, ArrayView2, Axis};

use super::{NetKind, NetworkSpec, ParamVector, SubnetSpec};
use crate::error::{Error, Result};
use crate::jet::{Jet3, Node, Tape};

/// Borrowed view of one fully connected subnetwork and its parameters.
#[derive(Clone, Copy, Debug)]
pub struct Subnet<'a> {
    spec: &'a SubnetSpec,
    params: &'a [f64],
}

/// Activations saved by [`Subnet::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct DenseCache {
    /// `inputs[l]` is the (masked) input of layer `l`; the last entry is the
    /// network output.
    inputs: Vec<Array2<f64>>,
    /// Unmasked hidden activations, kept only when dropout masks were used.
    unmasked: Vec<Array2<f64>>,
    masks: Option<Vec<Array2<f64>>>,
}

impl DenseCache {
    pub fn output(&self) -> &Array2<f64> {
        self.inputs.last().unwrap()
    }
}

impl<'a> Subnet<'a> {
    pub fn new(spec: &'a SubnetSpec, params: &'a [f64]) -> Result<Self> {
        if params.len() != spec.n_params() {
            return Err(Error::ShapeError(format!(
                "subnetwork {:?} needs {} parameters, got {}",
                spec.widths,
                spec.n_params(),
                params.len()
            )));
        }
        Ok(Subnet { spec, params })
    }

    pub fn spec(&self) -> &SubnetSpec {
        self.spec
    }

    fn n_layers(&self) -> usize {
        self.spec.widths.len() - 1
    }

    /// Offsets of the weight matrix and bias vector of layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let w = &self.spec.widths;
        let off: usize = (0..l).map(|k| w[k] * w[k + 1] + w[k + 1]).sum();
        (off, off + w[l] * w[l + 1])
    }

    fn layer(&self, l: usize) -> (ArrayView2<'a, f64>, &'a [f64]) {
        let (n_in, n_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
        let (wo, bo) = self.offsets(l);
        let w = ArrayView2::from_shape((n_out, n_in), &self.params[wo..wo + n_in * n_out]).unwrap();
        (w, &self.params[bo..bo + n_out])
    }

    /// Single-input forward pass with a fixed left-to-right summation order
    /// (identical to the value channel of the jet path).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_masked(x, None)
    }

    /// [`Subnet::forward`] with `masks[l]` multiplying the output of hidden
    /// layer `l`.
    pub fn forward_masked(&self, x: &[f64], masks: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_width() {
            return Err(Error::ShapeError(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.spec.input_width()
            )));
        }
        let mut h = x.to_vec();
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut out = Vec::with_capacity(b.len());
            for (row, bj) in w.outer_iter().zip(b) {
                let mut acc = *bj;
                for (wk, hk) in row.iter().zip(&h) {
                    acc += wk * hk;
                }
                out.push(if l < last { self.spec.activation.apply(acc) } else { acc });
            }
            if let (Some(m), true) = (masks, l < last) {
                for (o, mk) in out.iter_mut().zip(&m[l]) {
                    *o *= mk;
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// Batched forward pass (rows are samples).
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.n_layers() - 1;
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            h = self.affine(l, h.view());
            if l < last {
                let act = self.spec.activation;
                h.mapv_inplace(|z| act.apply(z));
            }
        }
        h
    }

    fn affine(&self, l: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let (w, b) = self.layer(l);
        let mut z = x.dot(&w.t());
        for mut row in z.rows_mut() {
            for (zj, bj) in row.iter_mut().zip(b) {
                *zj += bj;
            }
        }
        z
    }

    /// Batched forward pass keeping what [`Subnet::backward`] needs.
    /// `masks[l]` multiplies the output of hidden layer `l` (inverted-dropout
    /// scaling is the caller's business).
    pub fn forward_cached(&self, x: ArrayView2<f64>, masks: Option<Vec<Array2<f64>>>) -> DenseCache {
        let last = self.n_layers() - 1;
        let mut inputs = Vec::with_capacity(self.n_layers() + 1);
        let mut unmasked = Vec::new();
        inputs.push(x.to_owned());
        for l in 0..self.n_layers() {
            let mut h = self.affine(l, inputs[l].view());
            if l < last {
                let act = self.spec.activation;
                h.mapv_inplace(|z| act.apply(z));
                if let Some(m) = &masks {
                    let masked = &h * &m[l];
                    unmasked.push(h);
                    h = masked;
                }
            }
            inputs.push(h);
        }
        DenseCache {
            inputs,
            unmasked,
            masks,
        }
    }

    /// Reverse pass. Adds parameter gradients into `grad` (when given) and
    /// returns the gradient with respect to the batch inputs when `want_dx`.
    pub fn backward(
        &self,
        cache: &DenseCache,
        d_out: ArrayView2<f64>,
        mut grad: Option<&mut [f64]>,
        want_dx: bool,
    ) -> Option<Array2<f64>> {
        let act = self.spec.activation;
        let mut d = d_out.to_owned();
        for l in (0..self.n_layers()).rev() {
            let (w, _) = self.layer(l);
            if let Some(g) = grad.as_deref_mut() {
                let (wo, bo) = self.offsets(l);
                let gw = d.t().dot(&cache.inputs[l]);
                for (gi, v) in g[wo..wo + gw.len()].iter_mut().zip(gw.iter()) {
                    *gi += v;
                }
                let gb = d.sum_axis(Axis(0));
                for (gi, v) in g[bo..bo + gb.len()].iter_mut().zip(gb.iter()) {
                    *gi += v;
                }
            }
            if l == 0 && !want_dx {
                return None;
            }
            let mut d_in = d.dot(&w);
            if l > 0 {
                match &cache.masks {
                    Some(m) => {
                        d_in *= &m[l - 1];
                        let h = &cache.unmasked[l - 1];
                        d_in.zip_mut_with(h, |di, &a| *di *= act.deriv_from_output(a));
                    }
                    None => {
                        let h = &cache.inputs[l];
                        d_in.zip_mut_with(h, |di, &a| *di *= act.deriv_from_output(a));
                    }
                }
            }
            d = d_in;
        }
        Some(d)
    }
}

/// Record a subnetwork's forward pass on `tape`. The subnetwork's parameters
/// are `tape.vars()[offset..offset + spec.n_params()]`.
pub fn mlp_jet_on_tape(tape: &mut Tape, spec: &SubnetSpec, offset: usize, input: &[Node]) -> Vec<Node> {
    let w = &spec.widths;
    let last = w.len() - 2;
    let mut h = input.to_vec();
    let mut off = offset;
    for l in 0..w.len() - 1 {
        let (n_in, n_out) = (w[l], w[l + 1]);
        let bias = off + n_in * n_out;
        let z = tape.dense(&h, n_out, off, Some(bias));
        off = bias + n_out;
        h = if l < last {
            match spec.activation {
                super::Activation::Tanh => z.into_iter().map(|n| tape.tanh(n)).collect(),
                super::Activation::Relu => z.into_iter().map(|n| tape.relu(n)).collect(),
            }
        } else {
            z
        };
    }
    h
}

fn scalar_mlp<'a>(spec: &'a NetworkSpec, params: &ParamVector) -> Result<&'a SubnetSpec> {
    if spec.kind != NetKind::Mlp {
        return Err(Error::ShapeError(format!("expected an MLP, got {:?}", spec.kind)));
    }
    if params.layout != spec.layout() {
        return Err(Error::ShapeError("parameter layout does not match the network".into()));
    }
    Ok(&spec.subnets[0])
}

/// Plain MLP evaluation.
pub fn mlp_forward(spec: &NetworkSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    let sub = scalar_mlp(spec, params)?;
    Subnet::new(sub, &params.values)?.forward(x)
}

/// `(u(x), u'(x), u''(x), u'''(x))` of a scalar-input scalar-output MLP.
pub fn mlp_jet_forward(spec: &NetworkSpec, params: &ParamVector, x: f64) -> Result<Jet3> {
    let sub = scalar_mlp(spec, params)?;
    if sub.input_width() != 1 || sub.output_width() != 1 {
        return Err(Error::ShapeError(format!(
            "jet evaluation needs a scalar-to-scalar network, got {:?}",
            sub.widths
        )));
    }
    let mut tape = Tape::new(&params.values);
    let seed = tape.lift_input(x)?;
    let out = mlp_jet_on_tape(&mut tape, sub, 0, &[seed]);
    tape.check()?;
    Ok(tape.value(out[0]))
}
