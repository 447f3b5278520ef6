//! Hyperparameter objectives, all in nats and summed over the dataset:
//!
//! * `elbo(μ)`: lower bound on the tangent model's log evidence, with a
//!   Gaussian variational posterior `N(μ, H⁻¹)`;
//! * `laplace_evidence_lf`: the Laplace evidence at the linearisation point,
//!   i.e. the ELBO at `μ = w_t`;
//! * `tangent_evidence_lh`: the mode-corrected evidence, i.e. the ELBO at
//!   `μ = v*`, which is exact for the tangent model;
//! * `exact_marginal_oracle`: the tangent model's log marginal computed as a
//!   Gaussian density, used to check the above.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, norm_sq, DenseMatrix};
use crate::model::{sq_residual, Hyperparams, ParamVector};
use crate::tangent::{gauss_newton_map, GgnFactor, TangentModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBreakdown {
    pub total: f64,
    /// `(d_w/2) log α`
    pub prior_logdet: f64,
    /// `(n/2) log β`
    pub noise_logdet: f64,
    /// `−(β/2)‖y − ŷ‖²`
    pub data_fit: f64,
    /// `−(α/2)‖μ‖²`
    pub prior_fit: f64,
    /// `−½ log det H`
    pub curvature: f64,
    /// `−(n/2) log 2π`
    pub constant: f64,
}

impl EvidenceBreakdown {
    fn assemble(n: usize, d: usize, m: Hyperparams, sq_res: f64, mu_sq: f64, log_det: f64) -> Self {
        let prior_logdet = 0.5 * d as f64 * m.alpha.ln();
        let noise_logdet = 0.5 * n as f64 * m.beta.ln();
        let data_fit = -0.5 * m.beta * sq_res;
        let prior_fit = -0.5 * m.alpha * mu_sq;
        let curvature = -0.5 * log_det;
        let constant = -0.5 * n as f64 * (2.0 * PI).ln();
        let total = prior_logdet + noise_logdet + data_fit + prior_fit + curvature + constant;
        Self { total, prior_logdet, noise_logdet, data_fit, prior_fit, curvature, constant }
    }

    pub fn per_datapoint(&self, n: usize) -> f64 {
        self.total / n as f64
    }
}

fn check(t: &TangentModel, g: &GgnFactor, y: &[f64], m: Hyperparams) -> Result<()> {
    if y.len() != t.num_data() {
        return Err(Error::DimensionMismatch(format!("{} targets for {} data points", y.len(), t.num_data())));
    }
    if g.dim() != t.num_params() {
        return Err(Error::DimensionMismatch(format!(
            "GGN of dim {} for a model with {} parameters",
            g.dim(),
            t.num_params()
        )));
    }
    if g.hyper() != m {
        return Err(Error::InvalidConfig("GGN factor was built with different hyperparameters".into()));
    }
    Ok(())
}

/// `ℒ(ℳ; μ, w_t)`.
pub fn elbo(t: &TangentModel, g: &GgnFactor, mu: &[f64], y: &[f64], m: Hyperparams) -> Result<EvidenceBreakdown> {
    check(t, g, y, m)?;
    let h_mu = t.predict(mu)?;
    Ok(EvidenceBreakdown::assemble(
        t.num_data(),
        t.num_params(),
        m,
        sq_residual(&h_mu, y),
        norm_sq(mu),
        g.log_det(),
    ))
}

/// `ℒ_f(ℳ; w_t)`, the Laplace evidence at the linearisation point. `g` must be
/// the GGN at `w_t`.
pub fn laplace_evidence_lf(t: &TangentModel, g: &GgnFactor, y: &[f64], m: Hyperparams) -> Result<EvidenceBreakdown> {
    check(t, g, y, m)?;
    let w_t = t.linearization_point();
    Ok(EvidenceBreakdown::assemble(
        t.num_data(),
        t.num_params(),
        m,
        sq_residual(t.base_predictions(), y),
        norm_sq(w_t),
        g.log_det(),
    ))
}

/// `ℒ_h(ℳ; w_t)` together with the `v*` it was evaluated at.
pub fn tangent_evidence_with_map(
    t: &TangentModel,
    g: &GgnFactor,
    y: &[f64],
    m: Hyperparams,
) -> Result<(EvidenceBreakdown, ParamVector)> {
    check(t, g, y, m)?;
    let v_star = gauss_newton_map(t, m, g, y)?;
    let e = elbo(t, g, &v_star, y, m)?;
    Ok((e, v_star))
}

/// `ℒ_h(ℳ; w_t)`.
pub fn tangent_evidence_lh(t: &TangentModel, g: &GgnFactor, y: &[f64], m: Hyperparams) -> Result<EvidenceBreakdown> {
    Ok(tangent_evidence_with_map(t, g, y, m)?.0)
}

/// `log N(y; f(w_t) − J w_t, β⁻¹Iₙ + α⁻¹JJᵀ)`.
///
/// Uses the `n × n` covariance directly when `n < d_w`; otherwise goes
/// through the `d_w × d_w` precision via the matrix determinant lemma and
/// Woodbury identity. Neither route shares code with [`elbo`].
pub fn exact_marginal_oracle(t: &TangentModel, y: &[f64], m: Hyperparams) -> Result<f64> {
    let n = t.num_data();
    let d = t.num_params();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{} targets for {} data points", y.len(), n)));
    }
    let j = t.jacobian();
    let jw = j.matvec(t.linearization_point())?;
    let r: Vec<f64> = (0..n).map(|i| y[i] - (t.base_predictions()[i] - jw[i])).collect();
    let log2pi = (2.0 * PI).ln();
    if n < d {
        let mut cov = j.outer_gram();
        cov.scale(1.0 / m.alpha);
        cov.add_diagonal(1.0 / m.beta);
        let f = cholesky(&cov, 0.0)?;
        let mut z = r.clone();
        f.forward_substitute(&mut z);
        Ok(-0.5 * (n as f64 * log2pi + f.log_det() + norm_sq(&z)))
    } else {
        // Σ = β⁻¹I + α⁻¹JJᵀ
        // log det Σ = log det(αI + βJᵀJ) − d log α − n log β
        // Σ⁻¹ = βI − β² J (αI + βJᵀJ)⁻¹ Jᵀ
        let mut prec = DenseMatrix::zeros(d, d);
        for i in 0..n {
            let row = j.row(i);
            for p in 0..d {
                let s = m.beta * row[p];
                if s != 0.0 {
                    for q in 0..d {
                        prec.set(p, q, prec.get(p, q) + s * row[q]);
                    }
                }
            }
        }
        prec.add_diagonal(m.alpha);
        let f = cholesky(&prec, 0.0)?;
        let log_det_cov = f.log_det() - d as f64 * m.alpha.ln() - n as f64 * m.beta.ln();
        let mut jtr = j.tr_matvec(&r)?;
        f.forward_substitute(&mut jtr);
        let quad = m.beta * dot(&r, &r) - m.beta * m.beta * norm_sq(&jtr);
        Ok(-0.5 * (n as f64 * log2pi + log_det_cov + quad))
    }
}
