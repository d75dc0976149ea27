use eivuq::linalg::cholesky;
use eivuq::models::{gaussian_conditional, FunctionObservations, OperatorPosterior};
use eivuq::nets::{mlp_forward, mlp_jet_forward, Activation, NetworkSpec};
use eivuq::physics::{rd_solve_constant, se_kernel, sensor_grid};
use eivuq::sampler::{hmc_sample, map_estimate, HmcConfig, LogDensity, MapSettings};
use eivuq::Result;
use ndarray::Array1;

/// Outcome of one quick check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn jet_vs_differences() -> Result<Check> {
    let spec = NetworkSpec::scalar_mlp(&[16, 16], Activation::Tanh);
    let p = spec.init_params(3);
    let f = |x: f64| -> Result<f64> { Ok(mlp_forward(&spec, &p, &[x])?[0]) };
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let x = -0.9 + 0.2 * i as f64;
        let j = mlp_jet_forward(&spec, &p, x)?;
        let h = 1e-3;
        let d2 = (f(x + h)? - 2.0 * f(x)? + f(x - h)?) / (h * h);
        let k = mlp_jet_forward(&spec, &p, x + h)?.d2() - mlp_jet_forward(&spec, &p, x - h)?.d2();
        let d3 = k / (2.0 * h);
        let d1 = (f(x + h)? - f(x - h)?) / (2.0 * h);
        for (a, b) in [(j.d1(), d1), (j.d2(), d2), (j.d3(), d3)] {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    Ok(check("jet derivatives match finite differences", worst < 1e-4, format!("max rel err {worst:.2e}")))
}

struct StdNormal;

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        4
    }

    fn logp_grad(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
        }
        Ok(-0.5 * x.iter().map(|v| v * v).sum::<f64>())
    }
}

fn hmc_normal() -> Result<Check> {
    let cfg = HmcConfig {
        leapfrog_steps: 10,
        num_samples: 2000,
        burn_in: 500,
        init_step_size: 0.1,
        seed: 11,
        ..HmcConfig::default()
    };
    let s = hmc_sample(&mut StdNormal, &[0.5; 4], &cfg)?;
    let mean = s.draws.mean_axis(ndarray::Axis(0)).unwrap();
    let var = s.draws.var_axis(ndarray::Axis(0), 0.0);
    let ok = mean.iter().all(|m| m.abs() < 0.2) && var.iter().all(|v| (0.7..1.3).contains(v));
    Ok(check(
        "HMC recovers a standard normal",
        ok,
        format!("max |mean| {:.3}, var range [{:.3}, {:.3}], accept {:.2}", mean.iter().fold(0.0f64, |a, m| a.max(m.abs())), var.iter().cloned().fold(f64::MAX, f64::min), var.iter().cloned().fold(f64::MIN, f64::max), s.accept_rate()),
    ))
}

fn conjugate_map() -> Result<Check> {
    let grid = sensor_grid();
    let mut k = se_kernel(&grid, 0.2);
    for i in 0..grid.len() {
        k[[i, i]] += 1e-6;
    }
    let l = cholesky(k.view())?;
    let mean = Array1::zeros(grid.len());
    let obs = FunctionObservations {
        indices: vec![10, 40, 75],
        values: vec![0.3, -0.2, 0.5],
        sigma: 0.1,
    };
    let (cm, _) = gaussian_conditional(mean.view(), l.view(), &obs)?;
    let mut post = OperatorPosterior::new(None, vec![(mean, l)], vec![obs], None)?;
    let z0 = vec![0.0; post.dim()];
    let z = map_estimate(&mut post, &z0, &MapSettings { iterations: 3000, lr: 0.05 })?.params;
    let v = post.functions(&z).swap_remove(0);
    let err = v.iter().zip(cm.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(check("operator-input MAP equals the Gaussian conditional mean", err < 1e-3, format!("max abs err {err:.2e}")))
}

fn solver_runs() -> Result<Check> {
    let u = rd_solve_constant(&vec![1.0; 100])?;
    let ok = u.iter().all(|v| v.is_finite()) && u.first().is_some_and(|v| v.abs() < 1e-12) && u.last().is_some_and(|v| v.abs() < 1e-12);
    Ok(check("reaction-diffusion solver keeps zero boundaries", ok, format!("max u {:.4}", u.iter().cloned().fold(f64::MIN, f64::max))))
}

/// Quick oracle checks of the numerical core; takes a few seconds.
pub fn run_selftest() -> Result<Vec<Check>> {
    Ok(vec![jet_vs_differences()?, hmc_normal()?, conjugate_map()?, solver_runs()?])
}
