use super::{mul_adjoint, tanh_derivs, Jet3};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Node(u32);

impl Node {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Smooth unary maps with closed-form derivatives up to fourth order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Exp,
    Ln,
    Recip,
    Square,
    Cube,
}

impl UnaryKind {
    /// `f(a)` and its first four derivatives.
    fn derivs(self, a: f64) -> [f64; 5] {
        match self {
            UnaryKind::Tanh => tanh_derivs(a),
            UnaryKind::Exp => {
                let e = a.exp();
                [e; 5]
            }
            UnaryKind::Ln => {
                let r = 1.0 / a;
                [a.ln(), r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r]
            }
            UnaryKind::Recip => {
                let r = 1.0 / a;
                let r2 = r * r;
                [r, -r2, 2.0 * r2 * r, -6.0 * r2 * r2, 24.0 * r2 * r2 * r]
            }
            UnaryKind::Square => [a * a, 2.0 * a, 2.0, 0.0, 0.0],
            UnaryKind::Cube => [a * a * a, 3.0 * a * a, 6.0 * a, 6.0, 0.0],
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Const,
    /// Scalar leaf reading `vars[i]`.
    Var(u32),
    /// Derivative seed `(vars[i], 1, 0, 0)`.
    SeedVar(u32),
    /// Derivative seed at a constant coordinate; gradient reported per slot.
    SeedInput(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    /// `s·a + shift`.
    Lin(u32, f64),
    Unary(u32, UnaryKind),
    Relu(u32),
    /// `vars[bias] + Σ_k vars[weights + k] · operands[start + k]`.
    Affine {
        start: u32,
        len: u32,
        weights: u32,
        bias: u32,
    },
    Sum {
        start: u32,
        len: u32,
    },
    /// Scalar node holding component `k` of a jet.
    Component(u32, u8),
}

const NO_BIAS: u32 = u32::MAX;
const RELU_KINK_TOL: f64 = 1e-12;

/// Gradient of a scalar objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    /// `∂obj/∂vars[i]`.
    pub vars: Vec<f64>,
    /// `∂obj/∂x` for every input lifted with [`Tape::lift_input`], in lift order.
    pub inputs: Vec<f64>,
}

/// Reverse-mode tape over [`Jet3`] nodes.
///
/// The tape owns a copy of the differentiable scalars (`vars`: network
/// parameters, latent coordinates, latent physical constants). Operations
/// return [`Node`] handles and never fail eagerly: the first non-finite value
/// or illegal ReLU propagation is remembered and reported by
/// [`Tape::check`] and by the gradient calls.
#[derive(Debug, Default)]
pub struct Tape {
    vars: Vec<f64>,
    ops: Vec<Op>,
    vals: Vec<Jet3>,
    operands: Vec<u32>,
    n_inputs: u32,
    fault: Option<Error>,
    adj: Vec<Jet3>,
}

impl Tape {
    pub fn new(vars: &[f64]) -> Self {
        Tape {
            vars: vars.to_vec(),
            ..Default::default()
        }
    }

    /// Clear all nodes and load new variables, keeping allocations.
    pub fn reset(&mut self, vars: &[f64]) {
        self.vars.clear();
        self.vars.extend_from_slice(vars);
        self.ops.clear();
        self.vals.clear();
        self.operands.clear();
        self.n_inputs = 0;
        self.fault = None;
    }

    pub fn vars(&self) -> &[f64] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, n: Node) -> Jet3 {
        self.vals[n.index()]
    }

    /// First recorded fault, if any.
    pub fn check(&self) -> Result<()> {
        match &self.fault {
            None => Ok(()),
            Some(Error::NumericOverflow(m)) => Err(Error::NumericOverflow(m.clone())),
            Some(Error::InvalidInput(m)) => Err(Error::InvalidInput(m.clone())),
            Some(e) => Err(Error::TapeError(e.to_string())),
        }
    }

    fn push(&mut self, op: Op, val: Jet3) -> Node {
        if self.fault.is_none() && !val.is_finite() {
            self.fault = Some(Error::NumericOverflow(format!(
                "non-finite jet {:?} at node {} ({:?})",
                val.components(),
                self.ops.len(),
                op
            )));
        }
        let id = self.ops.len() as u32;
        self.ops.push(op);
        self.vals.push(val);
        Node(id)
    }

    fn val(&self, n: Node) -> Jet3 {
        self.vals[n.index()]
    }

    pub fn constant(&mut self, c: f64) -> Node {
        self.push(Op::Const, Jet3::constant(c))
    }

    /// Scalar leaf for `vars[i]` (zero derivative components).
    pub fn var(&mut self, i: usize) -> Node {
        let v = self.vars[i];
        self.push(Op::Var(i as u32), Jet3::constant(v))
    }

    /// Seed `(vars[i], 1, 0, 0)`: the jet expansion point is itself a
    /// differentiable variable (a latent coordinate).
    pub fn lift_var(&mut self, i: usize) -> Result<Node> {
        let x = self.vars[i];
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite latent coordinate {x}")));
        }
        Ok(self.push(Op::SeedVar(i as u32), Jet3::seed(x)))
    }

    /// Seed `(x, 1, 0, 0)` at a fixed coordinate. Its gradient is reported in
    /// [`Gradient::inputs`].
    pub fn lift_input(&mut self, x: f64) -> Result<Node> {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite input coordinate {x}")));
        }
        let slot = self.n_inputs;
        self.n_inputs += 1;
        Ok(self.push(Op::SeedInput(slot), Jet3::seed(x)))
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        let v = self.val(a) + self.val(b);
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Node {
        let v = self.val(a) - self.val(b);
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        let v = self.val(a) * self.val(b);
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn neg(&mut self, a: Node) -> Node {
        self.lin(a, -1.0, 0.0)
    }

    pub fn scale(&mut self, a: Node, s: f64) -> Node {
        self.lin(a, s, 0.0)
    }

    pub fn add_const(&mut self, a: Node, c: f64) -> Node {
        self.lin(a, 1.0, c)
    }

    /// `s·a + shift` with constant `s` and `shift`.
    pub fn lin(&mut self, a: Node, s: f64, shift: f64) -> Node {
        let v = self.val(a).affine(s, shift);
        self.push(Op::Lin(a.0, s), v)
    }

    pub fn unary(&mut self, a: Node, kind: UnaryKind) -> Node {
        let x = self.val(a);
        let v = x.compose(&kind.derivs(x.v()));
        self.push(Op::Unary(a.0, kind), v)
    }

    pub fn tanh(&mut self, a: Node) -> Node {
        self.unary(a, UnaryKind::Tanh)
    }

    pub fn exp(&mut self, a: Node) -> Node {
        self.unary(a, UnaryKind::Exp)
    }

    pub fn ln(&mut self, a: Node) -> Node {
        self.unary(a, UnaryKind::Ln)
    }

    pub fn recip(&mut self, a: Node) -> Node {
        self.unary(a, UnaryKind::Recip)
    }

    pub fn square(&mut self, a: Node) -> Node {
        self.unary(a, UnaryKind::Square)
    }

    pub fn cube(&mut self, a: Node) -> Node {
        self.unary(a, UnaryKind::Cube)
    }

    /// ReLU. Propagating nonzero derivative components through the kink
    /// (|v| ≤ 1e−12) is rejected, since ReLU has no classical derivatives
    /// there.
    pub fn relu(&mut self, a: Node) -> Node {
        let x = self.val(a);
        if self.fault.is_none()
            && x.v().abs() <= RELU_KINK_TOL
            && (x.d1() != 0.0 || x.d2() != 0.0 || x.d3() != 0.0)
        {
            self.fault = Some(Error::InvalidInput(format!(
                "derivative jet {:?} propagated through a ReLU kink",
                x.components()
            )));
        }
        self.push(Op::Relu(a.0), x.relu())
    }

    /// Scalar node `(component k of a, 0, 0, 0)`.
    pub fn component(&mut self, a: Node, k: usize) -> Node {
        assert!(k < 4, "jet component {k} out of range");
        let v = self.val(a).get(k);
        self.push(Op::Component(a.0, k as u8), Jet3::constant(v))
    }

    pub fn sum(&mut self, terms: &[Node]) -> Node {
        let start = self.operands.len() as u32;
        let mut acc = Jet3::ZERO;
        for t in terms {
            acc = acc + self.val(*t);
            self.operands.push(t.0);
        }
        self.push(
            Op::Sum {
                start,
                len: terms.len() as u32,
            },
            acc,
        )
    }

    /// Single affine unit `vars[bias] + Σ_k vars[weights+k]·inputs[k]`.
    pub fn affine(&mut self, inputs: &[Node], weights: usize, bias: Option<usize>) -> Node {
        let start = self.operands.len() as u32;
        self.operands.extend(inputs.iter().map(|n| n.0));
        self.affine_from(start, inputs.len() as u32, weights, bias)
    }

    /// A dense layer of `n_out` affine units sharing one operand list.
    /// Weights are read row-major (`n_out × inputs.len()`) from `vars`
    /// starting at `weights`, biases from `bias` (if any).
    pub fn dense(
        &mut self,
        inputs: &[Node],
        n_out: usize,
        weights: usize,
        bias: Option<usize>,
    ) -> Vec<Node> {
        let start = self.operands.len() as u32;
        self.operands.extend(inputs.iter().map(|n| n.0));
        let n_in = inputs.len();
        (0..n_out)
            .map(|j| self.affine_from(start, n_in as u32, weights + j * n_in, bias.map(|b| b + j)))
            .collect()
    }

    fn affine_from(&mut self, start: u32, len: u32, weights: usize, bias: Option<usize>) -> Node {
        let mut acc = Jet3::constant(bias.map_or(0.0, |b| self.vars[b]));
        let ops = &self.operands[start as usize..(start + len) as usize];
        let w = &self.vars[weights..weights + len as usize];
        for (wk, &o) in w.iter().zip(ops) {
            acc.add_scaled(*wk, &self.vals[o as usize]);
        }
        self.push(
            Op::Affine {
                start,
                len,
                weights: weights as u32,
                bias: bias.map_or(NO_BIAS, |b| b as u32),
            },
            acc,
        )
    }

    /// Full gradient of the value component of `obj`.
    pub fn gradient(&mut self, obj: Node) -> Result<Gradient> {
        let mut vars = vec![0.0; self.vars.len()];
        let mut inputs = vec![0.0; self.n_inputs as usize];
        self.sweep(obj, &mut vars, &mut inputs)?;
        Ok(Gradient { vars, inputs })
    }

    /// Write `∂obj/∂vars` into `grad` (overwriting it). Allocation-free apart
    /// from the reused adjoint buffer.
    pub fn gradient_into(&mut self, obj: Node, grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.vars.len() {
            return Err(Error::ShapeError(format!(
                "gradient buffer has {} entries, tape has {} vars",
                grad.len(),
                self.vars.len()
            )));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut inputs = [0.0; 0];
        self.sweep(obj, grad, &mut inputs)
    }

    fn sweep(&mut self, obj: Node, gvars: &mut [f64], ginputs: &mut [f64]) -> Result<()> {
        self.check()?;
        let n = self.ops.len();
        if obj.index() >= n {
            return Err(Error::TapeError(format!(
                "objective node {} is not on a tape of {} nodes",
                obj.index(),
                n
            )));
        }
        let mut adj = std::mem::take(&mut self.adj);
        adj.clear();
        adj.resize(obj.index() + 1, Jet3::ZERO);
        adj[obj.index()] = Jet3::constant(1.0);

        for i in (0..=obj.index()).rev() {
            let a = adj[i];
            if a == Jet3::ZERO {
                continue;
            }
            match self.ops[i] {
                Op::Const => {}
                Op::Var(k) | Op::SeedVar(k) => gvars[k as usize] += a.v(),
                Op::SeedInput(slot) => {
                    if let Some(g) = ginputs.get_mut(slot as usize) {
                        *g += a.v();
                    }
                }
                Op::Add(x, y) => {
                    adj[x as usize].add_scaled(1.0, &a);
                    adj[y as usize].add_scaled(1.0, &a);
                }
                Op::Sub(x, y) => {
                    adj[x as usize].add_scaled(1.0, &a);
                    adj[y as usize].add_scaled(-1.0, &a);
                }
                Op::Mul(x, y) => {
                    let gx = mul_adjoint(&self.vals[y as usize], &a);
                    let gy = mul_adjoint(&self.vals[x as usize], &a);
                    adj[x as usize].add_scaled(1.0, &gx);
                    adj[y as usize].add_scaled(1.0, &gy);
                }
                Op::Lin(x, s) => adj[x as usize].add_scaled(s, &a),
                Op::Unary(x, kind) => {
                    let xin = self.vals[x as usize];
                    let g = xin.compose_adjoint(&kind.derivs(xin.v()), &a);
                    adj[x as usize].add_scaled(1.0, &g);
                }
                Op::Relu(x) => {
                    if self.vals[x as usize].v() > 0.0 {
                        adj[x as usize].add_scaled(1.0, &a);
                    }
                }
                Op::Component(x, k) => {
                    let mut g = Jet3::ZERO;
                    g.c[k as usize] = a.v();
                    adj[x as usize].add_scaled(1.0, &g);
                }
                Op::Sum { start, len } => {
                    for &o in &self.operands[start as usize..(start + len) as usize] {
                        adj[o as usize].add_scaled(1.0, &a);
                    }
                }
                Op::Affine {
                    start,
                    len,
                    weights,
                    bias,
                } => {
                    let ops = &self.operands[start as usize..(start + len) as usize];
                    let w0 = weights as usize;
                    for (k, &o) in ops.iter().enumerate() {
                        let o = o as usize;
                        adj[o].add_scaled(self.vars[w0 + k], &a);
                        gvars[w0 + k] += self.vals[o].dot(&a);
                    }
                    if bias != NO_BIAS {
                        gvars[bias as usize] += a.v();
                    }
                }
            }
        }
        self.adj = adj;
        Ok(())
    }
}
