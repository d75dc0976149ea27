use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{normal_logpdf, LogPostTerms, HALF_LN_2PI};
use crate::error::{Error, Result};
use crate::linalg::{check_cholesky, cholesky, solve_lower, solve_lower_transpose};
use crate::nets::{Layout, OperatorModel};
use crate::sampler::LogDensity;

/// Noisy point values of an input function at sensor-grid indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionObservations {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub sigma: f64,
}

impl FunctionObservations {
    pub fn none() -> Self {
        FunctionObservations {
            indices: vec![],
            values: vec![],
            sigma: 1.0,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(Error::ShapeError(format!("{} indices for {} values", self.indices.len(), self.values.len())));
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexError { index: bad, len: n });
        }
        if !self.indices.is_empty() && !(self.sigma > 0.0) {
            return Err(Error::InvalidInput(format!("input noise scale {} must be positive", self.sigma)));
        }
        Ok(())
    }

    fn loglik(&self, v: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut ll = 0.0;
        let s2 = self.sigma * self.sigma;
        let mut grad = grad;
        for (i, y) in self.indices.iter().zip(&self.values) {
            ll += normal_logpdf(*y, v[*i], self.sigma);
            if let Some(g) = grad.as_deref_mut() {
                g[*i] += (y - v[*i]) / s2;
            }
        }
        ll
    }
}

/// Noisy values of the operator output at arbitrary coordinates (`J × d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointObservations {
    pub coords: Array2<f64>,
    pub values: Vec<f64>,
    pub sigma: f64,
}

/// Log-posterior over discretized operator inputs.
///
/// Each input function `v_i` on the sensor grid has a Gaussian prior
/// `N(μ_i, L_i L_iᵀ)`. The sampler works in whitened coordinates
/// `z_i = L_i⁻¹(v_i − μ_i)`, where the prior is standard normal; the
/// reported density equals the `v`-space log-posterior.
#[derive(Clone, Debug)]
pub struct OperatorPosterior {
    model: Option<OperatorModel>,
    means: Vec<Array1<f64>>,
    chols: Vec<Array2<f64>>,
    inputs: Vec<FunctionObservations>,
    output: Option<PointObservations>,
    trunk: Option<Array2<f64>>,
    logdet: f64,
    layout: Layout,
}

impl OperatorPosterior {
    /// `model` is needed only when `output` data are used. One prior and one
    /// observation set per input function.
    pub fn new(
        model: Option<&OperatorModel>,
        priors: Vec<(Array1<f64>, Array2<f64>)>,
        inputs: Vec<FunctionObservations>,
        output: Option<PointObservations>,
    ) -> Result<Self> {
        if priors.is_empty() || priors.len() != inputs.len() {
            return Err(Error::ShapeError(format!("{} priors for {} observation sets", priors.len(), inputs.len())));
        }
        let n = priors[0].0.len();
        let mut layout = Layout::default();
        let mut logdet = 0.0;
        for (k, ((m, l), obs)) in priors.iter().zip(&inputs).enumerate() {
            check_cholesky(l.view())?;
            if m.len() != n || l.nrows() != n {
                return Err(Error::ShapeError(format!("prior {k} has dimension {} / {}, expected {n}", m.len(), l.nrows())));
            }
            obs.validate(n)?;
            logdet += l.diag().iter().map(|d| d.ln()).sum::<f64>();
            layout.push(format!("z{k}"), n);
        }
        let trunk = match (&output, model) {
            (Some(out), Some(model)) => {
                if model.n_branches() != priors.len() || model.n_sensors() != n {
                    return Err(Error::ShapeError(format!(
                        "operator takes {} functions on {} sensors; posterior has {} on {n}",
                        model.n_branches(),
                        model.n_sensors(),
                        priors.len()
                    )));
                }
                if out.coords.nrows() != out.values.len() {
                    return Err(Error::ShapeError(format!("{} coordinates for {} values", out.coords.nrows(), out.values.len())));
                }
                if !(out.sigma > 0.0) {
                    return Err(Error::InvalidInput(format!("output noise scale {} must be positive", out.sigma)));
                }
                Some(model.trunk_features(out.coords.view())?)
            }
            (Some(_), None) => return Err(Error::InvalidInput("output data need a pretrained operator".into())),
            (None, _) => None,
        };
        let (means, chols) = priors.into_iter().unzip();
        Ok(OperatorPosterior {
            model: model.cloned(),
            means,
            chols,
            inputs,
            output,
            trunk,
            logdet,
            layout,
        })
    }

    pub fn n_functions(&self) -> usize {
        self.means.len()
    }

    pub fn grid_len(&self) -> usize {
        self.means[0].len()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// `v_i = μ_i + L_i z_i`.
    pub fn functions(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let n = self.grid_len();
        (0..self.n_functions())
            .map(|k| {
                let zk = ArrayView1::from(&z[k * n..(k + 1) * n]);
                (&self.means[k] + &self.chols[k].dot(&zk)).to_vec()
            })
            .collect()
    }

    /// Inverse of [`OperatorPosterior::functions`].
    pub fn whiten(&self, v: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_functions(v)?;
        let mut z = Vec::with_capacity(self.layout.total());
        for (k, vk) in v.iter().enumerate() {
            let r = &ArrayView1::from(vk) - &self.means[k];
            z.extend(solve_lower(self.chols[k].view(), r.view()));
        }
        Ok(z)
    }

    fn check_functions(&self, v: &[Vec<f64>]) -> Result<()> {
        if v.len() != self.n_functions() || v.iter().any(|f| f.len() != self.grid_len()) {
            return Err(Error::ShapeError(format!(
                "expected {} functions on {} points",
                self.n_functions(),
                self.grid_len()
            )));
        }
        Ok(())
    }

    fn output_loglik(&self, v: &[Vec<f64>], dv: Option<&mut [Vec<f64>]>) -> Result<f64> {
        let (Some(out), Some(model), Some(trunk)) = (&self.output, &self.model, &self.trunk) else {
            return Ok(0.0);
        };
        let refs: Vec<&[f64]> = v.iter().map(|f| f.as_slice()).collect();
        let be = model.branch_eval(&refs)?;
        let pred = model.predict_from(&be, trunk.view());
        let s2 = out.sigma * out.sigma;
        let mut ll = 0.0;
        let mut d = vec![0.0; pred.len()];
        for (j, y) in out.values.iter().enumerate() {
            ll += normal_logpdf(*y, pred[j], out.sigma);
            d[j] = (y - pred[j]) / s2;
        }
        if let Some(dv) = dv {
            for (acc, g) in dv.iter_mut().zip(model.input_grad(&be, trunk.view(), &d)) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        Ok(ll)
    }

    /// Log-posterior of input-function discretizations `v`, term by term.
    pub fn terms_v(&self, v: &[Vec<f64>]) -> Result<LogPostTerms> {
        self.check_functions(v)?;
        let mut t = LogPostTerms {
            output_likelihood: self.output_loglik(v, None)?,
            ..Default::default()
        };
        for (k, vk) in v.iter().enumerate() {
            t.input_likelihood += self.inputs[k].loglik(vk, None);
            t.prior_params += super::mvn_logpdf(ArrayView1::from(vk), self.means[k].view(), self.chols[k].view())?;
        }
        Ok(t)
    }

    /// Predicted operator output at `coords` for whitened parameters `z`.
    pub fn predict_output(&self, z: &[f64], trunk_feats: ArrayView2<f64>) -> Result<Vec<f64>> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("no pretrained operator attached".into()))?;
        let v = self.functions(z);
        let refs: Vec<&[f64]> = v.iter().map(|f| f.as_slice()).collect();
        Ok(model.predict_from(&model.branch_eval(&refs)?, trunk_feats).to_vec())
    }
}

impl LogDensity for OperatorPosterior {
    fn dim(&self) -> usize {
        self.layout.total()
    }

    fn logp_grad(&mut self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        if z.len() != self.layout.total() {
            return Err(Error::ShapeError(format!("{} coordinates, expected {}", z.len(), self.layout.total())));
        }
        let n = self.grid_len();
        let v = self.functions(z);
        let mut dv = vec![vec![0.0; n]; self.n_functions()];
        let mut lp = self.output_loglik(&v, Some(&mut dv))?;
        for (k, vk) in v.iter().enumerate() {
            lp += self.inputs[k].loglik(vk, Some(&mut dv[k]));
        }
        let zz: f64 = z.iter().map(|a| a * a).sum();
        lp += -0.5 * zz - self.logdet - z.len() as f64 * HALF_LN_2PI;
        for (k, dvk) in dv.iter().enumerate() {
            let dz = self.chols[k].t().dot(&ArrayView1::from(dvk));
            for (i, g) in dz.iter().enumerate() {
                grad[k * n + i] = g - z[k * n + i];
            }
        }
        if !lp.is_finite() {
            return Err(Error::NumericOverflow(format!("operator log-posterior is {lp}")));
        }
        Ok(lp)
    }
}

/// Closed-form posterior `N(m, C)` of `v ~ N(μ, LLᵀ)` given noisy point
/// observations of `v`.
pub fn gaussian_conditional(
    mean: ArrayView1<f64>,
    chol: ArrayView2<f64>,
    obs: &FunctionObservations,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = mean.len();
    obs.validate(n)?;
    let cov = chol.dot(&chol.t());
    let k = obs.indices.len();
    if k == 0 {
        return Ok((mean.to_owned(), cov));
    }
    let s = Array2::from_shape_fn((k, k), |(a, b)| {
        cov[[obs.indices[a], obs.indices[b]]] + if a == b { obs.sigma * obs.sigma } else { 0.0 }
    });
    let ls = cholesky(s.view())?;
    let resid = Array1::from_shape_fn(k, |a| obs.values[a] - mean[obs.indices[a]]);
    let alpha = solve_lower_transpose(ls.view(), solve_lower(ls.view(), resid.view()).view());
    // Σ Hᵀ is the columns of Σ at the observed indices.
    let sh = Array2::from_shape_fn((n, k), |(i, a)| cov[[i, obs.indices[a]]]);
    let m = &mean + &sh.dot(&alpha);
    let mut c = cov.clone();
    for i in 0..n {
        let w = solve_lower(ls.view(), sh.row(i));
        for j in 0..=i {
            let wj = solve_lower(ls.view(), sh.row(j));
            let d = w.dot(&wj);
            c[[i, j]] -= d;
            if i != j {
                c[[j, i]] -= d;
            }
        }
    }
    Ok((m, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Activation, NetworkSpec, SubnetSpec};
    use crate::physics::GrfSpec;
    use crate::sampler::{hmc_sample, mc_standard_error, HmcConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prior(n: usize) -> (Array1<f64>, Array2<f64>) {
        let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let mut spec = GrfSpec::new(0.3, grid);
        spec.jitter = 1e-6;
        (Array1::zeros(n), spec.cholesky().unwrap())
    }

    fn model(n: usize, branches: usize, seed: u64) -> OperatorModel {
        let b = SubnetSpec::new(vec![n, 6, 4], Activation::Tanh);
        let t = SubnetSpec::new(vec![1, 6, 4], Activation::Tanh);
        let spec = match branches {
            1 => NetworkSpec::deeponet(b, t, true),
            _ => NetworkSpec::mio_deeponet(b.clone(), b, t, true),
        }
        .unwrap();
        let sensors = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        OperatorModel::new(spec.clone(), spec.init_params(seed), sensors).unwrap()
    }

    fn synergistic(n: usize, branches: usize) -> OperatorPosterior {
        let m = model(n, branches, 1);
        let obs = (0..branches)
            .map(|k| FunctionObservations {
                indices: vec![1 + k, 5],
                values: vec![0.3, -0.2],
                sigma: 0.1,
            })
            .collect();
        let out = PointObservations {
            coords: Array2::from_shape_vec((3, 1), vec![0.2, 0.5, 0.9]).unwrap(),
            values: vec![0.1, 0.0, -0.1],
            sigma: 0.05,
        };
        OperatorPosterior::new(Some(&m), vec![prior(n); branches], obs, Some(out)).unwrap()
    }

    #[test]
    fn whitened_density_equals_v_space_posterior() {
        let p = synergistic(8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = p.functions(&z);
        let back = p.whiten(&v).unwrap();
        assert!(back.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-8));
        let mut q = p.clone();
        let mut g = vec![0.0; 16];
        let lp = q.logp_grad(&z, &mut g).unwrap();
        let t = p.terms_v(&v).unwrap();
        assert!((lp - t.total()).abs() < 1e-7 * lp.abs().max(1.0), "{lp} vs {}", t.total());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for branches in [1, 2] {
            let mut p = synergistic(8, branches);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let z: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = vec![0.0; z.len()];
            p.logp_grad(&z, &mut g).unwrap();
            let mut s = vec![0.0; z.len()];
            for i in 0..z.len() {
                let h = 1e-6;
                let mut zp = z.clone();
                zp[i] += h;
                let mut zm = z.clone();
                zm[i] -= h;
                let fd = (p.logp_grad(&zp, &mut s).unwrap() - p.logp_grad(&zm, &mut s).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1.0), "coord {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn observed_values_give_the_normalization() {
        let p = synergistic(8, 1);
        let mut v = vec![vec![0.0; 8]];
        v[0][1] = 0.3;
        v[0][5] = -0.2;
        let t = p.terms_v(&v).unwrap();
        let want = -2.0 * ((2.0 * std::f64::consts::PI).sqrt() * 0.1).ln();
        assert!((t.input_likelihood - want).abs() < 1e-12);
    }

    #[test]
    fn non_synergistic_is_a_term_removal() {
        let n = 8;
        let syn = synergistic(n, 1);
        let only_v = OperatorPosterior::new(None, vec![prior(n)], vec![syn.inputs[0].clone()], None).unwrap();
        let only_u = OperatorPosterior::new(Some(&model(n, 1, 1)), vec![prior(n)], vec![FunctionObservations::none()], syn.output.clone()).unwrap();
        let v = vec![(0..n).map(|i| (i as f64 * 0.7).sin()).collect::<Vec<_>>()];
        let (a, b, c) = (syn.terms_v(&v).unwrap(), only_v.terms_v(&v).unwrap(), only_u.terms_v(&v).unwrap());
        assert_eq!(b.output_likelihood, 0.0);
        assert_eq!(c.input_likelihood, 0.0);
        assert!((a.total() - a.output_likelihood - b.total()).abs() < 1e-12);
        assert!((a.total() - a.input_likelihood - c.total()).abs() < 1e-12);
        let empty = OperatorPosterior::new(None, vec![prior(n)], vec![FunctionObservations::none()], None).unwrap();
        let t = empty.terms_v(&v).unwrap();
        assert_eq!(t.total(), t.prior_params);
    }

    #[test]
    fn flat_output_likelihood_reduces_to_input_only() {
        let n = 8;
        let mut syn = synergistic(n, 1);
        syn.output.as_mut().unwrap().sigma = 1e8;
        let obs = syn.inputs[0].clone();
        let mut only_v = OperatorPosterior::new(None, vec![prior(n)], vec![obs], None).unwrap();
        let z: Vec<f64> = (0..n).map(|i| 0.1 * i as f64).collect();
        let (mut g1, mut g2) = (vec![0.0; n], vec![0.0; n]);
        syn.logp_grad(&z, &mut g1).unwrap();
        only_v.logp_grad(&z, &mut g2).unwrap();
        assert!(g1.iter().zip(&g2).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn off_grid_index_is_an_error() {
        let obs = FunctionObservations {
            indices: vec![8],
            values: vec![0.0],
            sigma: 0.1,
        };
        assert!(matches!(
            OperatorPosterior::new(None, vec![prior(8)], vec![obs], None),
            Err(Error::IndexError { index: 8, len: 8 })
        ));
    }

    #[test]
    fn conjugate_posterior_mean_is_recovered_by_hmc() {
        let n = 12;
        let (mu, l) = prior(n);
        let obs = FunctionObservations {
            indices: vec![4],
            values: vec![0.8],
            sigma: 0.1,
        };
        let (m, _) = gaussian_conditional(mu.view(), l.view(), &obs).unwrap();
        let mut p = OperatorPosterior::new(None, vec![(mu, l)], vec![obs], None).unwrap();
        let cfg = HmcConfig {
            leapfrog_steps: 20,
            num_samples: 1000,
            burn_in: 500,
            init_step_size: 0.1,
            seed: 3,
            ..Default::default()
        };
        let s = hmc_sample(&mut p, &vec![0.0; n], &cfg).unwrap();
        let v = crate::models::predict_fields(s.draws.view(), |z| Ok(p.functions(z).remove(0))).unwrap();
        for i in 0..n {
            let col = v.column(i).to_vec();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let se = mc_standard_error(&col);
            assert!((mean - m[i]).abs() <= 3.0 * se + 1e-9, "coord {i}: {mean} vs {} (se {se})", m[i]);
        }
    }

    #[test]
    fn conditional_matches_dense_algebra() {
        let n = 5;
        let (mu, l) = prior(n);
        let obs = FunctionObservations {
            indices: vec![1, 3],
            values: vec![0.5, -0.4],
            sigma: 0.2,
        };
        let (m, c) = gaussian_conditional(mu.view(), l.view(), &obs).unwrap();
        // Information form: C⁻¹ = Σ⁻¹ + HᵀH/σ², m = C Hᵀy/σ².
        let sigma = l.dot(&l.t());
        let li = {
            let mut inv = Array2::zeros((n, n));
            for j in 0..n {
                let mut e = Array1::zeros(n);
                e[j] = 1.0;
                inv.column_mut(j).assign(&solve_lower(l.view(), e.view()));
            }
            inv
        };
        let mut prec = li.t().dot(&li);
        let mut b = Array1::zeros(n);
        for (i, y) in obs.indices.iter().zip(&obs.values) {
            prec[[*i, *i]] += 1.0 / 0.04;
            b[*i] += y / 0.04;
        }
        let m2 = c.dot(&b);
        assert!(m.iter().zip(m2.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
        let eye = c.dot(&prec);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[[i, j]] - want).abs() < 1e-6);
            }
        }
        assert!(sigma[[0, 0]] > c[[0, 0]]);
    }
}
