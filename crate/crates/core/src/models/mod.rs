//! Joint log-posteriors for errors-in-variables regression, physics-informed
//! networks, and pretrained operators, plus posterior predictive summaries.

mod operator;
mod poisson;
mod regression;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_cholesky, solve_lower, solve_lower_transpose};

pub use operator::{gaussian_conditional, FunctionObservations, OperatorPosterior, PointObservations};
pub use poisson::{poisson_u_jet, LambdaSpec, PoissonChannel, PoissonPosterior, PoissonSetup};
pub use regression::{RegressionPosterior, RegressionSetup};

/// `½ ln 2π`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// How noise in the inputs is treated by the likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    /// Plug the observed inputs in as if they were exact.
    #[serde(alias = "ignore_input_noise")]
    Ignore,
    /// Treat the actual inputs as latent variables.
    #[serde(alias = "model_input_noise")]
    Model,
    /// First-order Taylor recast into heteroscedastic output noise.
    #[serde(alias = "recast_taylor")]
    Recast,
}

impl InferenceMode {
    pub const ALL: [InferenceMode; 3] = [InferenceMode::Ignore, InferenceMode::Model, InferenceMode::Recast];

    pub fn name(self) -> &'static str {
        match self {
            InferenceMode::Ignore => "ignore",
            InferenceMode::Model => "model",
            InferenceMode::Recast => "recast",
        }
    }
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ignore" | "ignore_input_noise" => Ok(InferenceMode::Ignore),
            "model" | "model_input_noise" => Ok(InferenceMode::Model),
            "recast" | "recast_taylor" => Ok(InferenceMode::Recast),
            _ => Err(Error::InvalidInput(format!("unknown inference mode {s:?}"))),
        }
    }
}

/// `log N(x | μ, σ²)`.
#[inline]
pub fn normal_logpdf(x: f64, mu: f64, sd: f64) -> f64 {
    let r = (x - mu) / sd;
    -0.5 * r * r - sd.ln() - HALF_LN_2PI
}

/// `log N(x | μ, LLᵀ)` through a triangular solve.
pub fn mvn_logpdf(x: ArrayView1<f64>, mean: ArrayView1<f64>, chol: ArrayView2<f64>) -> Result<f64> {
    check_mvn_shapes(x, mean, chol)?;
    check_cholesky(chol)?;
    let z = solve_lower(chol, (&x - &mean).view());
    let logdet: f64 = chol.diag().iter().map(|d| d.ln()).sum();
    Ok(-0.5 * z.dot(&z) - logdet - x.len() as f64 * HALF_LN_2PI)
}

/// `∇ₓ log N(x | μ, LLᵀ) = −Σ⁻¹(x − μ)`.
pub fn mvn_logpdf_grad(x: ArrayView1<f64>, mean: ArrayView1<f64>, chol: ArrayView2<f64>) -> Result<Array1<f64>> {
    check_mvn_shapes(x, mean, chol)?;
    check_cholesky(chol)?;
    let z = solve_lower(chol, (&x - &mean).view());
    Ok(-solve_lower_transpose(chol, z.view()))
}

fn check_mvn_shapes(x: ArrayView1<f64>, mean: ArrayView1<f64>, chol: ArrayView2<f64>) -> Result<()> {
    if x.len() != mean.len() || chol.nrows() != x.len() {
        return Err(Error::ShapeError(format!(
            "point has {} entries, mean {}, Cholesky factor {}×{}",
            x.len(),
            mean.len(),
            chol.nrows(),
            chol.ncols()
        )));
    }
    Ok(())
}

/// Gaussian prior on a block of parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GaussianPrior {
    IidNormal { mean: f64, std: f64 },
    Multivariate { mean: Array1<f64>, chol: Array2<f64> },
}

impl GaussianPrior {
    pub fn iid(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidInput(format!("prior N({mean}, {std}²) is not proper")));
        }
        Ok(GaussianPrior::IidNormal { mean, std })
    }

    pub fn multivariate(mean: Array1<f64>, chol: Array2<f64>) -> Result<Self> {
        check_cholesky(chol.view())?;
        if mean.len() != chol.nrows() {
            return Err(Error::ShapeError(format!("mean has {} entries, covariance is {}×{}", mean.len(), chol.nrows(), chol.ncols())));
        }
        Ok(GaussianPrior::Multivariate { mean, chol })
    }

    /// Log-density of `x`; adds its gradient into `grad` when given.
    pub fn logpdf(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        match self {
            GaussianPrior::IidNormal { mean, std } => {
                let mut lp = 0.0;
                let inv = 1.0 / (std * std);
                for v in x {
                    lp += normal_logpdf(*v, *mean, *std);
                }
                if let Some(g) = grad {
                    for (gi, v) in g.iter_mut().zip(x) {
                        *gi -= (v - mean) * inv;
                    }
                }
                Ok(lp)
            }
            GaussianPrior::Multivariate { mean, chol } => {
                let xv = ArrayView1::from(x);
                let lp = mvn_logpdf(xv, mean.view(), chol.view())?;
                if let Some(g) = grad {
                    let d = mvn_logpdf_grad(xv, mean.view(), chol.view())?;
                    for (gi, v) in g.iter_mut().zip(d.iter()) {
                        *gi += v;
                    }
                }
                Ok(lp)
            }
        }
    }
}

/// Log-posterior decomposed into its independently computable pieces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LogPostTerms {
    /// Output (or PDE-residual) likelihood.
    pub output_likelihood: f64,
    /// `Σ log N(x̃ | x, σ_in²)` over latent inputs.
    pub input_likelihood: f64,
    /// Prior on network parameters or input-function discretizations.
    pub prior_params: f64,
    /// Prior on latent inputs.
    pub prior_latent: f64,
    /// Prior on latent physical constants.
    pub prior_physical: f64,
}

impl LogPostTerms {
    pub fn total(&self) -> f64 {
        self.output_likelihood + self.input_likelihood + self.prior_params + self.prior_latent + self.prior_physical
    }
}

/// Pointwise posterior predictive mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PredictiveSummary {
    /// Pointwise moments of the rows of an `M × P` matrix of predicted fields.
    pub fn from_fields(fields: ArrayView2<f64>) -> Result<Self> {
        let m = fields.nrows();
        if m < 2 {
            return Err(Error::InvalidInput(format!("{m} posterior draws; at least 2 are needed")));
        }
        let mut mean = vec![0.0; fields.ncols()];
        for row in fields.rows() {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        let mut var = vec![0.0; fields.ncols()];
        for row in fields.rows() {
            for ((s, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        let std = var.into_iter().map(|s| (s / m as f64).sqrt()).collect();
        Ok(PredictiveSummary { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Share of points where `|mean − reference| ≤ 2·std`.
    pub fn coverage(&self, reference: &[f64]) -> Result<f64> {
        coverage(&self.mean, &self.std, reference)
    }

    /// Average predictive standard deviation.
    pub fn mean_std(&self) -> f64 {
        self.std.iter().sum::<f64>() / self.std.len().max(1) as f64
    }
}

/// Share of points where `|mean − reference| ≤ 2·std`.
pub fn coverage(mean: &[f64], std: &[f64], reference: &[f64]) -> Result<f64> {
    if mean.len() != reference.len() || std.len() != reference.len() || reference.is_empty() {
        return Err(Error::ShapeError(format!(
            "coverage over {} means, {} stds, {} references",
            mean.len(),
            std.len(),
            reference.len()
        )));
    }
    let hit = mean
        .iter()
        .zip(std)
        .zip(reference)
        .filter(|((m, s), r)| (*m - *r).abs() <= 2.0 * *s)
        .count();
    Ok(hit as f64 / reference.len() as f64)
}

/// Push every posterior draw through `predictor` and summarize the fields.
pub fn predict_summary(
    draws: ArrayView2<f64>,
    mut predictor: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<PredictiveSummary> {
    if draws.nrows() < 2 {
        return Err(Error::InvalidInput(format!("{} posterior draws; at least 2 are needed", draws.nrows())));
    }
    let mut fields: Option<Array2<f64>> = None;
    for (i, row) in draws.rows().into_iter().enumerate() {
        let row = row.to_vec();
        let field = predictor(&row)?;
        let f = fields.get_or_insert_with(|| Array2::zeros((draws.nrows(), field.len())));
        if field.len() != f.ncols() {
            return Err(Error::ShapeError(format!("draw {i} predicted {} values, draw 0 predicted {}", field.len(), f.ncols())));
        }
        f.row_mut(i).assign(&ArrayView1::from(&field));
    }
    PredictiveSummary::from_fields(fields.unwrap().view())
}

/// Exact per-draw field matrix (`M × P`) for callers that need it besides the
/// summary.
pub fn predict_fields(draws: ArrayView2<f64>, mut predictor: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Array2<f64>> {
    let mut out: Option<Array2<f64>> = None;
    for (i, row) in draws.rows().into_iter().enumerate() {
        let field = predictor(&row.to_vec())?;
        let f = out.get_or_insert_with(|| Array2::zeros((draws.nrows(), field.len())));
        if field.len() != f.ncols() {
            return Err(Error::ShapeError(format!("draw {i} predicted {} values, draw 0 predicted {}", field.len(), f.ncols())));
        }
        f.row_mut(i).assign(&ArrayView1::from(&field));
    }
    out.ok_or_else(|| Error::InvalidInput("no posterior draws".into()))
}
