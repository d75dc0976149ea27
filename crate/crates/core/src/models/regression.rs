use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{normal_logpdf, InferenceMode, LogPostTerms, HALF_LN_2PI};
use crate::error::{Error, Result};
use crate::jet::{Node, Tape};
use crate::nets::{mlp_jet_on_tape, Layout, NetKind, NetworkSpec, Subnet};
use crate::sampler::LogDensity;

/// Everything that defines a regression log-posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSetup {
    /// Scalar-input scalar-output MLP.
    pub spec: NetworkSpec,
    pub x_obs: Vec<f64>,
    pub y_obs: Vec<f64>,
    pub sigma_in: f64,
    pub sigma_out: f64,
    pub theta_std: f64,
    /// Standard deviation of the latent-input prior; `None` for a flat prior.
    pub chi_prior_std: Option<f64>,
    pub mode: InferenceMode,
}

/// `log p(θ, χ | D)` for `ỹ = H_θ(χ) + ε_o`, `χ̃ = χ + ε_in`.
///
/// Parameters are laid out as `θ` followed, in model mode, by one latent
/// input per datum.
#[derive(Debug)]
pub struct RegressionPosterior {
    setup: RegressionSetup,
    layout: Layout,
    n_theta: usize,
    tape: Tape,
}

impl RegressionPosterior {
    pub fn new(setup: RegressionSetup) -> Result<Self> {
        setup.spec.validate()?;
        let sub = &setup.spec.subnets[0];
        if setup.spec.kind != NetKind::Mlp || sub.input_width() != 1 || sub.output_width() != 1 {
            return Err(Error::ShapeError(format!("regression needs a scalar MLP, got {:?}", sub.widths)));
        }
        if setup.x_obs.len() != setup.y_obs.len() {
            return Err(Error::ShapeError(format!("{} inputs for {} outputs", setup.x_obs.len(), setup.y_obs.len())));
        }
        if !(setup.sigma_out > 0.0) || !(setup.sigma_in >= 0.0) || !(setup.theta_std > 0.0) {
            return Err(Error::InvalidInput(format!(
                "need σ_o > 0, σ_in ≥ 0 and a proper θ prior (σ_o = {}, σ_in = {}, θ std = {})",
                setup.sigma_out, setup.sigma_in, setup.theta_std
            )));
        }
        if setup.mode == InferenceMode::Model && !(setup.sigma_in > 0.0) {
            return Err(Error::InvalidInput("modeling input noise needs σ_in > 0".into()));
        }
        if let Some(s) = setup.chi_prior_std {
            if !(s > 0.0) {
                return Err(Error::InvalidInput(format!("latent-input prior std {s} must be positive")));
            }
        }
        let n_theta = setup.spec.n_params();
        let mut layout = Layout::default();
        layout.extend_prefixed("theta.", &setup.spec.layout());
        if setup.mode == InferenceMode::Model {
            layout.push("chi", setup.x_obs.len());
        }
        Ok(RegressionPosterior {
            setup,
            layout,
            n_theta,
            tape: Tape::default(),
        })
    }

    pub fn setup(&self) -> &RegressionSetup {
        &self.setup
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    fn n_latent(&self) -> usize {
        self.layout.total() - self.n_theta
    }

    /// `θ` followed by latent inputs started at their observed values.
    pub fn initial_point(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.n_theta {
            return Err(Error::ShapeError(format!("θ has {} entries, network needs {}", theta.len(), self.n_theta)));
        }
        let mut x = theta.to_vec();
        if self.setup.mode == InferenceMode::Model {
            x.extend_from_slice(&self.setup.x_obs);
        }
        Ok(x)
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.total() {
            return Err(Error::InvalidInput(format!(
                "{} mode expects {} parameters ({} latent inputs), got {}",
                self.setup.mode,
                self.layout.total(),
                self.n_latent(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Network predictions at `xs`.
    pub fn predict(&self, params: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
        let sub = Subnet::new(&self.setup.spec.subnets[0], &params[..self.n_theta])?;
        let x = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap();
        Ok(sub.forward_batch(x.view()).into_raw_vec_and_offset().0)
    }

    /// Gaussian output likelihood at inputs `xs`, with optional gradients
    /// with respect to `θ` and the inputs.
    fn output_loglik(&self, theta: &[f64], xs: &[f64], gtheta: Option<&mut [f64]>, gx: Option<&mut [f64]>) -> Result<f64> {
        let sub = Subnet::new(&self.setup.spec.subnets[0], theta)?;
        let x = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap();
        let cache = sub.forward_cached(x.view(), None);
        let pred = cache.output();
        let s = self.setup.sigma_out;
        let inv = 1.0 / (s * s);
        let mut ll = 0.0;
        let mut d = Array2::zeros((xs.len(), 1));
        for (i, y) in self.setup.y_obs.iter().enumerate() {
            ll += normal_logpdf(*y, pred[[i, 0]], s);
            d[[i, 0]] = (y - pred[[i, 0]]) * inv;
        }
        if gtheta.is_some() || gx.is_some() {
            let want_dx = gx.is_some();
            let dx = sub.backward(&cache, d.view(), gtheta, want_dx);
            if let (Some(g), Some(dx)) = (gx, dx) {
                for (gi, v) in g.iter_mut().zip(dx.iter()) {
                    *gi += v;
                }
            }
        }
        Ok(ll)
    }

    /// Record the recast likelihood on `tape` (whose variables are `θ`) and
    /// return the per-datum term nodes.
    fn recast_nodes(&self, tape: &mut Tape, theta: &[f64]) -> Result<Vec<Node>> {
        tape.reset(theta);
        let sub = &self.setup.spec.subnets[0];
        let (si2, so2) = (self.setup.sigma_in * self.setup.sigma_in, self.setup.sigma_out * self.setup.sigma_out);
        let mut terms = Vec::with_capacity(self.setup.x_obs.len());
        for (x, y) in self.setup.x_obs.iter().zip(&self.setup.y_obs) {
            let s = tape.lift_input(*x)?;
            let h = mlp_jet_on_tape(tape, sub, 0, &[s])[0];
            let v = tape.component(h, 0);
            let d = tape.component(h, 1);
            let d2 = tape.square(d);
            let var = tape.lin(d2, si2, so2);
            let r = tape.lin(v, -1.0, *y);
            let r2 = tape.square(r);
            let iv = tape.recip(var);
            let q = tape.mul(r2, iv);
            let lv = tape.ln(var);
            let t = tape.add(q, lv);
            terms.push(tape.lin(t, -0.5, -HALF_LN_2PI));
        }
        Ok(terms)
    }

    /// Per-datum recast log-likelihoods `log N(ỹ | H(χ̃), H′(χ̃)²σ_in² + σ_o²)`.
    pub fn recast_pointwise(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        let nodes = self.recast_nodes(&mut tape, &theta[..self.n_theta])?;
        tape.check()?;
        Ok(nodes.iter().map(|n| tape.value(*n).v()).collect())
    }

    /// The log-posterior split into likelihood and prior terms.
    pub fn terms(&self, params: &[f64]) -> Result<LogPostTerms> {
        self.check(params)?;
        let (theta, chi) = params.split_at(self.n_theta);
        let st = &self.setup;
        let mut t = LogPostTerms {
            prior_params: theta.iter().map(|w| normal_logpdf(*w, 0.0, st.theta_std)).sum(),
            ..Default::default()
        };
        match st.mode {
            InferenceMode::Ignore => t.output_likelihood = self.output_loglik(theta, &st.x_obs, None, None)?,
            InferenceMode::Model => {
                t.output_likelihood = self.output_loglik(theta, chi, None, None)?;
                t.input_likelihood = st.x_obs.iter().zip(chi).map(|(xo, c)| normal_logpdf(*xo, *c, st.sigma_in)).sum();
                if let Some(s) = st.chi_prior_std {
                    t.prior_latent = chi.iter().map(|c| normal_logpdf(*c, 0.0, s)).sum();
                }
            }
            InferenceMode::Recast => t.output_likelihood = self.recast_pointwise(theta)?.iter().sum(),
        }
        Ok(t)
    }
}

impl LogDensity for RegressionPosterior {
    fn dim(&self) -> usize {
        self.layout.total()
    }

    fn logp_grad(&mut self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check(params)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (theta, chi) = params.split_at(self.n_theta);
        let (gtheta, gchi) = grad.split_at_mut(self.n_theta);
        let ts = self.setup.theta_std;
        let mut lp = 0.0;
        for (g, w) in gtheta.iter_mut().zip(theta) {
            lp += normal_logpdf(*w, 0.0, ts);
            *g = -w / (ts * ts);
        }
        match self.setup.mode {
            InferenceMode::Ignore => lp += self.output_loglik(theta, &self.setup.x_obs, Some(gtheta), None)?,
            InferenceMode::Model => {
                lp += self.output_loglik(theta, chi, Some(gtheta), Some(gchi))?;
                let si = self.setup.sigma_in;
                for ((g, c), xo) in gchi.iter_mut().zip(chi).zip(&self.setup.x_obs) {
                    lp += normal_logpdf(*xo, *c, si);
                    *g += (xo - c) / (si * si);
                    if let Some(s) = self.setup.chi_prior_std {
                        lp += normal_logpdf(*c, 0.0, s);
                        *g -= c / (s * s);
                    }
                }
            }
            InferenceMode::Recast => {
                let mut tape = std::mem::take(&mut self.tape);
                let res = (|| -> Result<(f64, Vec<f64>)> {
                    let nodes = self.recast_nodes(&mut tape, theta)?;
                    let total = tape.sum(&nodes);
                    let mut g = vec![0.0; self.n_theta];
                    tape.gradient_into(total, &mut g)?;
                    Ok((tape.value(total).v(), g))
                })();
                self.tape = tape;
                let (ll, g) = res?;
                lp += ll;
                for (a, b) in gtheta.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        if !lp.is_finite() {
            return Err(Error::NumericOverflow(format!("regression log-posterior is {lp}")));
        }
        Ok(lp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(mode: InferenceMode, n: usize, seed: u64) -> RegressionSetup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x_obs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y_obs = x_obs.iter().map(|x| (3.0 * x as &f64).tanh() + rng.random_range(-0.1..0.1)).collect();
        RegressionSetup {
            spec: NetworkSpec::scalar_mlp(&[6, 5], Activation::Tanh),
            x_obs,
            y_obs,
            sigma_in: 0.03,
            sigma_out: 0.05,
            theta_std: 1.0,
            chi_prior_std: Some(100.0),
            mode,
        }
    }

    fn random_point(p: &RegressionPosterior, seed: u64) -> Vec<f64> {
        let theta = p.setup().spec.init_params(seed).values;
        let mut x = p.initial_point(&theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for v in x[p.n_theta()..].iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        x
    }

    #[test]
    fn gradients_match_finite_differences() {
        for mode in InferenceMode::ALL {
            let mut p = RegressionPosterior::new(setup(mode, 12, 1)).unwrap();
            let x = random_point(&p, 3);
            let mut g = vec![0.0; x.len()];
            let lp = p.logp_grad(&x, &mut g).unwrap();
            assert!((lp - p.terms(&x).unwrap().total()).abs() < 1e-9 * lp.abs().max(1.0));
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut scratch = vec![0.0; x.len()];
            for _ in 0..20 {
                let i = rng.random_range(0..x.len());
                let h = 1e-5;
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (p.logp_grad(&xp, &mut scratch).unwrap() - p.logp_grad(&xm, &mut scratch).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1.0), "{mode} coord {i}: fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn pinned_latents_give_the_input_normalization() {
        let st = setup(InferenceMode::Model, 10, 2);
        let p = RegressionPosterior::new(st.clone()).unwrap();
        let theta = st.spec.init_params(1).values;
        let x = p.initial_point(&theta).unwrap();
        let t = p.terms(&x).unwrap();
        let want = -10.0 * ((2.0 * std::f64::consts::PI).sqrt() * 0.03).ln();
        assert!((t.input_likelihood - want).abs() < 1e-12);
        let ign = RegressionPosterior::new(RegressionSetup { mode: InferenceMode::Ignore, ..st }).unwrap();
        let ti = ign.terms(&theta).unwrap();
        assert_eq!(t.output_likelihood, ti.output_likelihood);
        assert_eq!(t.prior_params, ti.prior_params);
    }

    #[test]
    fn terms_add_up_and_flat_prior_drops_out() {
        let mut st = setup(InferenceMode::Model, 8, 4);
        let p = RegressionPosterior::new(st.clone()).unwrap();
        let x = random_point(&p, 5);
        let t = p.terms(&x).unwrap();
        let (theta, chi) = x.split_at(p.n_theta());
        let prior: f64 = theta.iter().map(|w| normal_logpdf(*w, 0.0, 1.0)).sum();
        let latent: f64 = chi.iter().map(|c| normal_logpdf(*c, 0.0, 100.0)).sum();
        let pred = p.predict(&x, chi).unwrap();
        let out: f64 = pred.iter().zip(&st.y_obs).map(|(m, y)| normal_logpdf(*y, *m, 0.05)).sum();
        let inp: f64 = chi.iter().zip(&st.x_obs).map(|(c, xo)| normal_logpdf(*xo, *c, 0.03)).sum();
        assert!((t.prior_params - prior).abs() < 1e-10);
        assert!((t.prior_latent - latent).abs() < 1e-10);
        assert!((t.output_likelihood - out).abs() < 1e-10);
        assert!((t.input_likelihood - inp).abs() < 1e-10);
        st.chi_prior_std = None;
        let flat = RegressionPosterior::new(st).unwrap().terms(&x).unwrap();
        assert_eq!(flat.prior_latent, 0.0);
        assert_eq!(flat.output_likelihood, t.output_likelihood);
    }

    #[test]
    fn recast_is_exact_for_a_linear_map() {
        let mut st = setup(InferenceMode::Recast, 1000, 6);
        st.spec = NetworkSpec::mlp(vec![1, 1], Activation::Tanh);
        let (a, b) = (1.7, -0.4);
        let p = RegressionPosterior::new(st.clone()).unwrap();
        let ll = p.recast_pointwise(&[a, b]).unwrap();
        let var: f64 = a * a * 0.03 * 0.03 + 0.05 * 0.05;
        for ((l, x), y) in ll.iter().zip(&st.x_obs).zip(&st.y_obs) {
            let exact = normal_logpdf(*y, a * x + b, var.sqrt());
            assert!((l - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn recast_without_input_noise_is_ignore() {
        let mut st = setup(InferenceMode::Recast, 30, 7);
        st.sigma_in = 0.0;
        let theta = st.spec.init_params(2).values;
        let r = RegressionPosterior::new(st.clone()).unwrap().terms(&theta).unwrap();
        let i = RegressionPosterior::new(RegressionSetup { mode: InferenceMode::Ignore, ..st }).unwrap().terms(&theta).unwrap();
        assert!((r.output_likelihood - i.output_likelihood).abs() < 1e-12 * i.output_likelihood.abs().max(1.0));
    }

    #[test]
    fn shift_equivariance() {
        let st = setup(InferenceMode::Model, 15, 8);
        let p = RegressionPosterior::new(st.clone()).unwrap();
        let x = random_point(&p, 9);
        let c = 0.37;
        let mut shifted = st.clone();
        shifted.x_obs.iter_mut().for_each(|v| *v += c);
        let q = RegressionPosterior::new(shifted).unwrap();
        let mut y = x.clone();
        // H∘(·−c): first-layer bias b₁ ← b₁ − W₁c.
        let w0 = st.spec.subnets[0].widths[1];
        for j in 0..w0 {
            y[w0 + j] -= y[j] * c;
        }
        y[p.n_theta()..].iter_mut().for_each(|v| *v += c);
        let (a, b) = (p.terms(&x).unwrap(), q.terms(&y).unwrap());
        assert!((a.output_likelihood - b.output_likelihood).abs() < 1e-9);
        assert!((a.input_likelihood - b.input_likelihood).abs() < 1e-9);
    }

    #[test]
    fn mismatches_are_rejected() {
        let st = setup(InferenceMode::Model, 5, 1);
        let p = RegressionPosterior::new(st.clone()).unwrap();
        let theta = st.spec.init_params(0).values;
        assert!(matches!(p.terms(&theta), Err(Error::InvalidInput(_))));
        let mut bad = st.clone();
        bad.sigma_in = 0.0;
        assert!(RegressionPosterior::new(bad).is_err());
        let mut bad = st;
        bad.y_obs.pop();
        assert!(RegressionPosterior::new(bad).is_err());
    }
}
