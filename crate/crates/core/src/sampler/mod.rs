//! Hamiltonian Monte Carlo with burn-in step-size adaptation, MAP
//! optimization, and chain diagnostics.

mod diagnostics;
mod hmc;
mod map;

pub use diagnostics::{effective_sample_size, mc_standard_error};
pub use hmc::{adapt_step_size, hmc_sample, leapfrog, HmcConfig, PosteriorSamples, StepSizeAdapter};
pub use map::{map_estimate, MapResult, MapSettings};

use crate::error::Result;

/// A differentiable log-density over a flat parameter vector.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// `log p(x)`, writing `∇ log p(x)` into `grad`.
    fn logp_grad(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64>;
}

impl<T: LogDensity + ?Sized> LogDensity for &mut T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn logp_grad(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        (**self).logp_grad(x, grad)
    }
}

/// Adapter turning a closure into a [`LogDensity`].
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnDensity { dim, f }
    }
}

impl<F> LogDensity for FnDensity<F>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn logp_grad(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        (self.f)(x, grad)
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::FnDensity;
    use crate::error::Result;

    /// Independent normal target `N(mu_i, sd_i²)`.
    pub fn normal(mu: Vec<f64>, sd: Vec<f64>) -> FnDensity<impl FnMut(&[f64], &mut [f64]) -> Result<f64>> {
        FnDensity::new(mu.len(), move |x: &[f64], g: &mut [f64]| {
            let mut lp = 0.0;
            for i in 0..x.len() {
                let z = (x[i] - mu[i]) / sd[i];
                lp -= 0.5 * z * z;
                g[i] = -z / sd[i];
            }
            Ok(lp)
        })
    }
}
