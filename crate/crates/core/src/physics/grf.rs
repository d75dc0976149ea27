use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::cholesky;

/// Squared-exponential Gaussian random field on a fixed grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub length_scale: f64,
    pub grid: Vec<f64>,
    pub jitter: f64,
}

impl GrfSpec {
    pub fn new(length_scale: f64, grid: Vec<f64>) -> Self {
        GrfSpec {
            length_scale,
            grid,
            jitter: 1e-10,
        }
    }

    /// `K_ij = exp(−(x_i − x_j)²/(2l²))`.
    pub fn kernel(&self) -> Array2<f64> {
        se_kernel(&self.grid, self.length_scale)
    }

    /// Lower Cholesky factor of `K + jitter·I`.
    pub fn cholesky(&self) -> Result<Array2<f64>> {
        let mut k = self.kernel();
        k.diag_mut().mapv_inplace(|d| d + self.jitter);
        cholesky(k.view())
    }
}

pub fn se_kernel(grid: &[f64], l: f64) -> Array2<f64> {
    let n = grid.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let d = grid[i] - grid[j];
        (-d * d / (2.0 * l * l)).exp()
    })
}

/// Reusable sampler holding the Cholesky factor.
#[derive(Clone, Debug)]
pub struct GrfSampler {
    chol: Array2<f64>,
}

impl GrfSampler {
    pub fn new(spec: &GrfSpec) -> Result<Self> {
        Ok(GrfSampler { chol: spec.cholesky()? })
    }

    pub fn chol(&self) -> &Array2<f64> {
        &self.chol
    }

    /// `L·z` with `z` standard normal drawn from `rng`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z: Array1<f64> = (0..self.chol.nrows()).map(|_| rng.sample(StandardNormal)).collect();
        self.chol.dot(&z).to_vec()
    }
}

/// One field draw with its own seed.
pub fn grf_sample(spec: &GrfSpec, seed: u64) -> Result<Vec<f64>> {
    let s = GrfSampler::new(spec)?;
    Ok(s.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::physics::sensor_grid;

    #[test]
    fn kernel_diagonal_is_one() {
        let k = se_kernel(&[0.0, 0.3, 0.31, 0.9], 0.2);
        assert!(k.diag().iter().all(|d| *d == 1.0));
    }

    #[test]
    fn sensor_grid_factorizes() {
        GrfSpec::new(0.2, sensor_grid()).cholesky().unwrap();
    }

    #[test]
    fn empirical_covariance_matches_kernel() {
        let grid: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let spec = GrfSpec::new(0.2, grid);
        let s = GrfSampler::new(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let mut cov = Array2::<f64>::zeros((12, 12));
        for _ in 0..n {
            let v = Array1::from(s.sample(&mut rng));
            for i in 0..12 {
                for j in 0..12 {
                    cov[[i, j]] += v[i] * v[j];
                }
            }
        }
        cov /= n as f64;
        let k = spec.kernel();
        for (a, b) in cov.iter().zip(k.iter()) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn huge_length_scale_gives_flat_fields() {
        let spec = GrfSpec {
            length_scale: 1e6,
            grid: (0..20).map(|i| i as f64 / 19.0).collect(),
            jitter: 1e-10,
        };
        for seed in 0..5 {
            let v = grf_sample(&spec, seed).unwrap();
            let (lo, hi) = v.iter().fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(*x), b.max(*x)));
            assert!(hi - lo < 1e-3);
        }
    }

    proptest::proptest! {
        /// A zero-mean Gaussian law is fixed by its covariance: sampling on a
        /// permuted grid and unpermuting has covariance `K` of the original grid.
        #[test]
        fn law_is_invariant_to_grid_order(seed in 0u64..500) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
            let mut perm: Vec<usize> = (0..15).collect();
            perm.shuffle(&mut rng);
            let pgrid: Vec<f64> = perm.iter().map(|&i| grid[i]).collect();
            let spec = GrfSpec { length_scale: 0.2, grid: pgrid, jitter: 1e-6 };
            let l = spec.cholesky().unwrap();
            let cov_p = l.dot(&l.t());
            let k = se_kernel(&grid, 0.2);
            for a in 0..15 {
                for b in 0..15 {
                    let jit = if a == b { 1e-6 } else { 0.0 };
                    proptest::prop_assert!((cov_p[[a, b]] - k[[perm[a], perm[b]]] - jit).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tiny_jitter_on_duplicate_points_fails() {
        let spec = GrfSpec {
            length_scale: 0.2,
            grid: vec![0.5, 0.5],
            jitter: 0.0,
        };
        assert!(matches!(spec.cholesky(), Err(Error::CholeskyFailure { .. })));
    }
}
