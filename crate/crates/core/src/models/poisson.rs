use serde::{Deserialize, Serialize};

use super::{normal_logpdf, InferenceMode, LogPostTerms, HALF_LN_2PI};
use crate::error::{Error, Result};
use crate::jet::{Node, Tape};
use crate::nets::{mlp_jet_on_tape, Layout, NetKind, NetworkSpec, SubnetSpec};
use crate::sampler::LogDensity;

/// Whether `λ` is a known constant or inferred through `ℓ = log λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaSpec {
    Known(f64),
    /// `ℓ ~ N(prior_mean, prior_std²)`, `λ = exp(ℓ)`.
    Latent { prior_mean: f64, prior_std: f64 },
}

/// Noisy measurements of `u` or `f`. A zero `sigma_in` marks clean inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonChannel {
    pub x_obs: Vec<f64>,
    pub y_obs: Vec<f64>,
    pub sigma_in: f64,
    pub sigma_out: f64,
}

impl PoissonChannel {
    fn validate(&self, name: &str) -> Result<()> {
        if self.x_obs.len() != self.y_obs.len() {
            return Err(Error::ShapeError(format!(
                "{name}: {} inputs for {} outputs",
                self.x_obs.len(),
                self.y_obs.len()
            )));
        }
        if !(self.sigma_out > 0.0) || !(self.sigma_in >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "{name}: need σ_o > 0 and σ_in ≥ 0 (got {} and {})",
                self.sigma_out, self.sigma_in
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonSetup {
    /// Scalar MLP inside the hard boundary encoding.
    pub spec: NetworkSpec,
    pub kappa: f64,
    pub lambda: LambdaSpec,
    /// Dirichlet values `u(0)`, `u(1)`.
    pub boundary: (f64, f64),
    pub f: PoissonChannel,
    pub u: Option<PoissonChannel>,
    pub theta_std: f64,
    pub chi_prior_std: Option<f64>,
    pub mode: InferenceMode,
}

/// `u_θ(s) = s(1−s)·N_θ(s) + (1−s)·u₀ + s·u₁` as a jet in `s`. The network's
/// parameters start at `tape.vars()[0]`.
pub fn poisson_u_jet(tape: &mut Tape, sub: &SubnetSpec, s: Node, boundary: (f64, f64)) -> Node {
    let n = mlp_jet_on_tape(tape, sub, 0, &[s])[0];
    let one_minus = tape.lin(s, -1.0, 1.0);
    let q = tape.mul(s, one_minus);
    let qn = tape.mul(q, n);
    let b = tape.lin(s, boundary.1 - boundary.0, boundary.0);
    tape.add(qn, b)
}

/// Gaussian log-density node for residual `r` and fixed variance.
fn gauss_fixed(tape: &mut Tape, r: Node, sd: f64) -> Node {
    let r2 = tape.square(r);
    tape.lin(r2, -0.5 / (sd * sd), -sd.ln() - HALF_LN_2PI)
}

/// Gaussian log-density node for residual `r` and variance node `var`.
fn gauss_var(tape: &mut Tape, r: Node, var: Node) -> Node {
    let r2 = tape.square(r);
    let iv = tape.recip(var);
    let q = tape.mul(r2, iv);
    let lv = tape.ln(var);
    let t = tape.add(q, lv);
    tape.lin(t, -0.5, -HALF_LN_2PI)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Target {
    U,
    F,
}

/// B-PINN log-posterior for `κu″ − λu³ = f` on `[0, 1]` with the boundary
/// values hard-encoded.
///
/// Parameter layout: `θ`, then in model mode latent coordinates for every
/// noisy-input `f` datum (`x_f`) and `u` datum (`x_u`), then `log λ` when
/// `λ` is inferred.
#[derive(Debug)]
pub struct PoissonPosterior {
    setup: PoissonSetup,
    layout: Layout,
    n_theta: usize,
    xf: Option<usize>,
    xu: Option<usize>,
    log_lambda: Option<usize>,
    tape: Tape,
}

impl PoissonPosterior {
    pub fn new(setup: PoissonSetup) -> Result<Self> {
        setup.spec.validate()?;
        let sub = &setup.spec.subnets[0];
        if setup.spec.kind != NetKind::Mlp || sub.input_width() != 1 || sub.output_width() != 1 {
            return Err(Error::ShapeError(format!("a PINN needs a scalar MLP, got {:?}", sub.widths)));
        }
        setup.f.validate("f data")?;
        if let Some(u) = &setup.u {
            u.validate("u data")?;
        }
        if !(setup.theta_std > 0.0) || setup.chi_prior_std.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::InvalidInput("prior standard deviations must be positive".into()));
        }
        match setup.lambda {
            LambdaSpec::Known(l) if !l.is_finite() => return Err(Error::InvalidInput(format!("λ = {l}"))),
            LambdaSpec::Latent { prior_std, .. } if !(prior_std > 0.0) => {
                return Err(Error::InvalidInput(format!("log λ prior std {prior_std} must be positive")))
            }
            _ => {}
        }
        let n_theta = setup.spec.n_params();
        let mut layout = Layout::default();
        layout.extend_prefixed("theta.", &setup.spec.layout());
        let model = setup.mode == InferenceMode::Model;
        let mut xf = None;
        let mut xu = None;
        if model && setup.f.sigma_in > 0.0 {
            xf = Some(layout.push("x_f", setup.f.x_obs.len()).start);
        }
        if let Some(u) = setup.u.as_ref().filter(|u| model && u.sigma_in > 0.0) {
            xu = Some(layout.push("x_u", u.x_obs.len()).start);
        }
        let log_lambda = match setup.lambda {
            LambdaSpec::Latent { .. } => Some(layout.push("log_lambda", 1).start),
            LambdaSpec::Known(_) => None,
        };
        Ok(PoissonPosterior {
            setup,
            layout,
            n_theta,
            xf,
            xu,
            log_lambda,
            tape: Tape::default(),
        })
    }

    pub fn setup(&self) -> &PoissonSetup {
        &self.setup
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    /// Index of `log λ` in the parameter vector, when inferred.
    pub fn log_lambda_index(&self) -> Option<usize> {
        self.log_lambda
    }

    /// `θ`, latent coordinates at their observed values, and `log λ` at its
    /// prior mean.
    pub fn initial_point(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.n_theta {
            return Err(Error::ShapeError(format!("θ has {} entries, network needs {}", theta.len(), self.n_theta)));
        }
        let mut x = theta.to_vec();
        if self.xf.is_some() {
            x.extend_from_slice(&self.setup.f.x_obs);
        }
        if let (Some(_), Some(u)) = (self.xu, &self.setup.u) {
            x.extend_from_slice(&u.x_obs);
        }
        if let LambdaSpec::Latent { prior_mean, .. } = self.setup.lambda {
            x.push(prior_mean);
        }
        Ok(x)
    }

    pub fn lambda(&self, params: &[f64]) -> f64 {
        match (self.setup.lambda, self.log_lambda) {
            (_, Some(i)) => params[i].exp(),
            (LambdaSpec::Known(l), None) => l,
            (LambdaSpec::Latent { .. }, None) => unreachable!(),
        }
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.total() {
            return Err(Error::InvalidInput(format!(
                "{} mode expects {} parameters, got {}",
                self.setup.mode,
                self.layout.total(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Record all data likelihood terms on `tape` (variables = `params`).
    fn record(&self, tape: &mut Tape, params: &[f64]) -> Result<Vec<Node>> {
        tape.reset(params);
        let st = &self.setup;
        let lam = match self.log_lambda {
            Some(i) => {
                let l = tape.var(i);
                tape.exp(l)
            }
            None => tape.constant(self.lambda(params)),
        };
        let mut terms = Vec::new();
        let mut channel = |tape: &mut Tape, ch: &PoissonChannel, latent: Option<usize>, target: Target| -> Result<()> {
            let recast = st.mode == InferenceMode::Recast && ch.sigma_in > 0.0;
            for (i, (x, y)) in ch.x_obs.iter().zip(&ch.y_obs).enumerate() {
                let s = match latent {
                    Some(off) => tape.lift_var(off + i)?,
                    None => tape.lift_input(*x)?,
                };
                let u = poisson_u_jet(tape, &st.spec.subnets[0], s, st.boundary);
                let c0 = tape.component(u, 0);
                let (pred, slope) = match target {
                    Target::U => (c0, if recast { Some(tape.component(u, 1)) } else { None }),
                    Target::F => {
                        let c2 = tape.component(u, 2);
                        let k2 = tape.scale(c2, st.kappa);
                        let cube = tape.cube(c0);
                        let lc = tape.mul(lam, cube);
                        let pred = tape.sub(k2, lc);
                        let slope = if recast {
                            let c1 = tape.component(u, 1);
                            let c3 = tape.component(u, 3);
                            let k3 = tape.scale(c3, st.kappa);
                            let sq = tape.square(c0);
                            let t = tape.mul(sq, c1);
                            let lt = tape.mul(lam, t);
                            let lt3 = tape.scale(lt, 3.0);
                            Some(tape.sub(k3, lt3))
                        } else {
                            None
                        };
                        (pred, slope)
                    }
                };
                let r = tape.lin(pred, -1.0, *y);
                let term = match slope {
                    Some(g) => {
                        let g2 = tape.square(g);
                        let var = tape.lin(g2, ch.sigma_in * ch.sigma_in, ch.sigma_out * ch.sigma_out);
                        gauss_var(tape, r, var)
                    }
                    None => gauss_fixed(tape, r, ch.sigma_out),
                };
                terms.push(term);
            }
            Ok(())
        };
        channel(tape, &st.f, self.xf, Target::F)?;
        if let Some(u) = &st.u {
            channel(tape, u, self.xu, Target::U)?;
        }
        Ok(terms)
    }

    /// Analytic priors and input likelihoods, with gradients added into
    /// `grad` when given.
    fn analytic_terms(&self, params: &[f64], mut grad: Option<&mut [f64]>) -> LogPostTerms {
        let st = &self.setup;
        let mut t = LogPostTerms::default();
        let ts = st.theta_std;
        for (i, w) in params[..self.n_theta].iter().enumerate() {
            t.prior_params += normal_logpdf(*w, 0.0, ts);
            if let Some(g) = grad.as_deref_mut() {
                g[i] -= w / (ts * ts);
            }
        }
        let mut latent = |off: Option<usize>, ch: &PoissonChannel, grad: &mut Option<&mut [f64]>| {
            let Some(off) = off else { return };
            let si = ch.sigma_in;
            for (i, xo) in ch.x_obs.iter().enumerate() {
                let c = params[off + i];
                t.input_likelihood += normal_logpdf(*xo, c, si);
                let mut d = (xo - c) / (si * si);
                if let Some(s) = st.chi_prior_std {
                    t.prior_latent += normal_logpdf(c, 0.0, s);
                    d -= c / (s * s);
                }
                if let Some(g) = grad.as_deref_mut() {
                    g[off + i] += d;
                }
            }
        };
        latent(self.xf, &st.f, &mut grad);
        if let Some(u) = &st.u {
            latent(self.xu, u, &mut grad);
        }
        if let (Some(i), LambdaSpec::Latent { prior_mean, prior_std }) = (self.log_lambda, st.lambda) {
            t.prior_physical = normal_logpdf(params[i], prior_mean, prior_std);
            if let Some(g) = grad {
                g[i] -= (params[i] - prior_mean) / (prior_std * prior_std);
            }
        }
        t
    }

    pub fn terms(&self, params: &[f64]) -> Result<LogPostTerms> {
        self.check(params)?;
        let mut tape = Tape::default();
        let nodes = self.record(&mut tape, params)?;
        tape.check()?;
        let mut t = self.analytic_terms(params, None);
        t.output_likelihood = nodes.iter().map(|n| tape.value(*n).v()).sum();
        if !t.output_likelihood.is_finite() {
            return Err(Error::NumericOverflow(format!("PDE likelihood is {}", t.output_likelihood)));
        }
        Ok(t)
    }

    /// `u_θ` and `F_λ[u_θ]` at clean coordinates.
    pub fn predict(&self, params: &[f64], xs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new(params);
        let lam = self.lambda(params);
        let mut u = Vec::with_capacity(xs.len());
        let mut f = Vec::with_capacity(xs.len());
        for x in xs {
            tape.reset(params);
            let s = tape.lift_input(*x)?;
            let node = poisson_u_jet(&mut tape, &self.setup.spec.subnets[0], s, self.setup.boundary);
            tape.check()?;
            let j = tape.value(node);
            u.push(j.v());
            f.push(self.setup.kappa * j.d2() - lam * j.v().powi(3));
        }
        Ok((u, f))
    }
}

impl LogDensity for PoissonPosterior {
    fn dim(&self) -> usize {
        self.layout.total()
    }

    fn logp_grad(&mut self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check(params)?;
        let mut tape = std::mem::take(&mut self.tape);
        let res = (|| -> Result<f64> {
            let nodes = self.record(&mut tape, params)?;
            let total = tape.sum(&nodes);
            tape.gradient_into(total, grad)?;
            Ok(tape.value(total).v())
        })();
        self.tape = tape;
        let ll = res?;
        let t = self.analytic_terms(params, Some(grad));
        let lp = ll + t.input_likelihood + t.prior_params + t.prior_latent + t.prior_physical;
        if !lp.is_finite() {
            return Err(Error::NumericOverflow(format!("PINN log-posterior is {lp}")));
        }
        Ok(lp)
    }
}
