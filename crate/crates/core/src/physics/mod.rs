//! Ground truths, reaction-diffusion solvers, Gaussian random fields, noisy
//! measurement datasets, and operator-training corpora.

mod corpus;
mod data;
mod grf;
mod rd;

pub use corpus::{build_operator_corpus, corpus_items, derive_seed, solution_coords, Corpus, CorpusProblem};
pub use data::{make_noisy, write_measurements_csv, NoiseModel, NoisyDataset};
pub use grf::{grf_sample, se_kernel, GrfSampler, GrfSpec};
pub use rd::{rd_solve_constant, rd_solve_hetero, RdSolver, RD_DIFFUSION, RD_DT, RD_KAPPA, RD_RECORD_EVERY};

/// `κ` of the Poisson problem.
pub const POISSON_KAPPA: f64 = 0.01;
/// `λ` of the Poisson forward problem.
pub const POISSON_LAMBDA: f64 = 0.1;

const A: f64 = 2.0 * std::f64::consts::PI;

/// `u = cos³(2πx)` and its first three derivatives.
pub fn poisson_u_derivs(x: f64) -> [f64; 4] {
    let (s, c) = (A * x).sin_cos();
    [
        c * c * c,
        -3.0 * A * c * c * s,
        6.0 * A * A * c * s * s - 3.0 * A * A * c * c * c,
        21.0 * A * A * A * c * c * s - 6.0 * A * A * A * s * s * s,
    ]
}

/// `(u, f)` with `u = cos³(2πx)` and `f = κu″ − λu³`.
pub fn poisson_truth_with(x: f64, kappa: f64, lambda: f64) -> (f64, f64) {
    let d = poisson_u_derivs(x);
    (d[0], kappa * d[2] - lambda * d[0] * d[0] * d[0])
}

/// [`poisson_truth_with`] at the forward-problem constants.
pub fn poisson_truth(x: f64) -> (f64, f64) {
    poisson_truth_with(x, POISSON_KAPPA, POISSON_LAMBDA)
}

/// The regression target `0.1cos(2πx) + tanh(3πx)`.
pub fn regression_truth(x: f64) -> f64 {
    0.1 * (A * x).cos() + (1.5 * A * x).tanh()
}

/// `n` equispaced points on `[a, b]` (endpoints included).
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// The 100-point sensor grid on `[0, 1]`.
pub fn sensor_grid() -> Vec<f64> {
    linspace(0.0, 1.0, 100)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_at_zero_and_quarter() {
        let (u, f) = poisson_truth(0.0);
        assert_eq!(u, 1.0);
        let expect = 0.01 * (-3.0 * 4.0 * std::f64::consts::PI.powi(2)) - 0.1;
        assert!((f - expect).abs() < 1e-12);
        assert!((f + 1.284352528).abs() < 1e-8);
        let (u, f) = poisson_truth(0.25);
        assert!(u.abs() < 1e-15 && f.abs() < 1e-12);
    }

    #[test]
    fn poisson_f_matches_finite_differences() {
        let h = 1e-4;
        for i in 0..50 {
            let x = 0.013 + 0.0197 * i as f64;
            let u = |x: f64| poisson_truth(x).0;
            let upp = (u(x + h) - 2.0 * u(x) + u(x - h)) / (h * h);
            let fd = 0.01 * upp - 0.1 * u(x).powi(3);
            let f = poisson_truth(x).1;
            assert!((fd - f).abs() <= 1e-6 * f.abs().max(1.0), "x={x}: {fd} vs {f}");
        }
    }

    #[test]
    fn poisson_derivatives_chain() {
        let h = 1e-5;
        for &x in &[0.1, 0.37, 0.8] {
            let d = poisson_u_derivs(x);
            let (p, m) = (poisson_u_derivs(x + h), poisson_u_derivs(x - h));
            for k in 0..3 {
                let fd = (p[k] - m[k]) / (2.0 * h);
                assert!((fd - d[k + 1]).abs() < 1e-6 * d[k + 1].abs().max(1.0));
            }
        }
    }

    #[test]
    fn poisson_residual_is_zero() {
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            let d = poisson_u_derivs(x);
            let (_, f) = poisson_truth(x);
            assert!((0.01 * d[2] - 0.1 * d[0].powi(3) - f).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_helpers() {
        let g = sensor_grid();
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[99], 1.0);
        assert!((regression_truth(0.0) - 0.1).abs() < 1e-15);
    }
}
