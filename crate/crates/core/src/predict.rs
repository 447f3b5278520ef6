//! Linearised-Laplace predictive and the evaluation metrics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::model::{Hyperparams, MlpArchitecture, ParamVector};
use crate::tangent::GgnFactor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveGaussian {
    pub mean: f64,
    /// Includes the observation noise `1/β`.
    pub variance: f64,
}

impl PredictiveGaussian {
    pub fn log_density(&self, y: f64) -> f64 {
        let r = y - self.mean;
        -0.5 * ((2.0 * PI * self.variance).ln() + r * r / self.variance)
    }

    /// Maps a prediction made in standardised target units back to original
    /// units `y = mean_y + std_y · z`.
    pub fn destandardise(&self, target_mean: f64, target_std: f64) -> Self {
        Self { mean: self.mean * target_std + target_mean, variance: self.variance * target_std * target_std }
    }
}

/// Which mean to report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictiveMean<'a> {
    /// The network output `f(x*; w)`.
    Network,
    /// The tangent model's `h(v; x*) = f(x*; w) + j(x*)ᵀ(v − w)`.
    Tangent(&'a ParamVector),
}

/// Predictive at every row of `x_star`. `g` must be the GGN at `w` with
/// hyperparameters `m`.
pub fn predict_batch(
    arch: &MlpArchitecture,
    w: &ParamVector,
    g: &GgnFactor,
    x_star: &DenseMatrix,
    m: Hyperparams,
    mean: PredictiveMean<'_>,
) -> Result<Vec<PredictiveGaussian>> {
    if g.hyper() != m {
        return Err(Error::InvalidConfig("GGN factor was built with different hyperparameters".into()));
    }
    let pass = arch.forward_pass(w, x_star)?;
    let jac = arch.jacobian_from_pass(w, x_star, &pass);
    if jac.cols() != g.dim() {
        return Err(Error::DimensionMismatch(format!("GGN of dim {} for {} parameters", g.dim(), jac.cols())));
    }
    let shift: Option<Vec<f64>> = match mean {
        PredictiveMean::Network => None,
        PredictiveMean::Tangent(v) => {
            if v.len() != w.len() {
                return Err(Error::DimensionMismatch("tangent mean parameters".into()));
            }
            Some(v.iter().zip(w.iter()).map(|(a, b)| a - b).collect())
        }
    };
    (0..x_star.rows())
        .map(|i| {
            let j = jac.row(i);
            let mut mu = pass.output[i];
            if let Some(dv) = &shift {
                mu += dot(j, dv);
            }
            let variance = g.inverse_quadratic_form(j)? + 1.0 / m.beta;
            Ok(PredictiveGaussian { mean: mu, variance })
        })
        .collect()
}

/// Predictive at a single input `x_star` (length `d_x`), with the network mean.
pub fn predict(
    arch: &MlpArchitecture,
    w: &ParamVector,
    g: &GgnFactor,
    x_star: &[f64],
    m: Hyperparams,
) -> Result<PredictiveGaussian> {
    let x = DenseMatrix::from_row_major(1, x_star.len(), x_star.to_vec())?;
    Ok(predict_batch(arch, w, g, &x, m, PredictiveMean::Network)?[0])
}

/// Mean per-point Gaussian log-likelihood.
pub fn log_likelihood(preds: &[PredictiveGaussian], y: &[f64]) -> Result<f64> {
    if preds.len() != y.len() || y.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} targets", preds.len(), y.len())));
    }
    Ok(preds.iter().zip(y).map(|(p, &t)| p.log_density(t)).sum::<f64>() / y.len() as f64)
}

pub fn rmse(means: &[f64], y: &[f64]) -> Result<f64> {
    if means.len() != y.len() || y.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} targets", means.len(), y.len())));
    }
    let mse = means.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}
