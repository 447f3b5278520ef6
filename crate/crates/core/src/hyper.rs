//! MacKay's closed-form evidence update
//!
//! ```text
//! γ = d_w − α Tr(H⁻¹),   α ← γ / ‖μ‖²,   β ← (n − γ) / ‖y − ŷ‖²
//! ```
//!
//! with `(μ, ŷ) = (w, f(w))` for online Laplace and `(v*, h(v*))` for the
//! online linear model. `H` is the GGN built with the current `(α, β)`, and
//! both sub-updates read the same snapshot of it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::model::{sq_residual, Hyperparams, ParamVector};
use crate::tangent::{gauss_newton_map, ggn, GgnFactor, TangentModel};

pub const GAMMA_MARGIN: f64 = 1e-3;
pub const HYPER_FLOOR: f64 = 1e-6;
pub const HYPER_CEILING: f64 = 1e8;
/// Squared norms below this are treated as zero.
pub const NORM_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// Online Laplace: `μ = w`, `ŷ = f(w)`.
    Ol,
    /// Online linear model: `μ = v*`, `ŷ = h(v*)`.
    Lm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaDiagnostic {
    pub gamma: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// `‖μ‖²`
    Mean,
    /// `‖y − ŷ‖²`
    Residual,
}

/// The update could not divide by a vanishing norm. `fallback` carries the
/// update with the affected precision pinned to [`HYPER_CEILING`].
#[derive(Debug, Clone, Copy, Error)]
#[error("degenerate {which:?} norm in MacKay update")]
pub struct DegenerateNorm {
    pub which: NormKind,
    pub fallback: Hyperparams,
    pub gamma: GammaDiagnostic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MackayTarget {
    pub hyper: Hyperparams,
    pub gamma: GammaDiagnostic,
}

fn clamp_hyper(v: f64) -> f64 {
    v.clamp(HYPER_FLOOR, HYPER_CEILING)
}

fn effective_dimensions(g: &GgnFactor, n: usize) -> GammaDiagnostic {
    let d = g.dim();
    let raw = d as f64 - g.hyper().alpha * g.trace_inverse();
    let hi = d.min(n) as f64 - GAMMA_MARGIN;
    let lo = GAMMA_MARGIN.min(hi);
    let gamma = raw.clamp(lo, hi.max(lo));
    GammaDiagnostic { gamma, clamped: gamma != raw }
}

/// One MacKay step. Returns the new hyperparameters (clamped to
/// `[HYPER_FLOOR, HYPER_CEILING]`) and the effective dimension count.
pub fn mackay_update(
    g: &GgnFactor,
    mu: &[f64],
    y: &[f64],
    y_hat: &[f64],
    m: Hyperparams,
) -> std::result::Result<MackayTarget, MackayError> {
    if mu.len() != g.dim() || y.len() != y_hat.len() {
        return Err(MackayError::Shape(format!(
            "mean length {} vs GGN dim {}, {} targets vs {} predictions",
            mu.len(),
            g.dim(),
            y.len(),
            y_hat.len()
        )));
    }
    if g.hyper() != m {
        return Err(MackayError::Shape("GGN factor was built with different hyperparameters".into()));
    }
    let n = y.len();
    let gamma = effective_dimensions(g, n);
    let mu_sq = norm_sq(mu);
    let res_sq = sq_residual(y_hat, y);
    if !mu_sq.is_finite() || !res_sq.is_finite() {
        return Err(MackayError::Shape("non-finite norm".into()));
    }
    let alpha = if mu_sq > NORM_FLOOR { Some(clamp_hyper(gamma.gamma / mu_sq)) } else { None };
    let beta = if res_sq > NORM_FLOOR { Some(clamp_hyper((n as f64 - gamma.gamma) / res_sq)) } else { None };
    match (alpha, beta) {
        (Some(alpha), Some(beta)) => Ok(MackayTarget { hyper: Hyperparams { alpha, beta }, gamma }),
        (a, b) => Err(MackayError::Degenerate(DegenerateNorm {
            which: if a.is_none() { NormKind::Mean } else { NormKind::Residual },
            fallback: Hyperparams { alpha: a.unwrap_or(HYPER_CEILING), beta: b.unwrap_or(HYPER_CEILING) },
            gamma,
        })),
    }
}

#[derive(Debug, Clone, Error)]
pub enum MackayError {
    #[error(transparent)]
    Degenerate(DegenerateNorm),
    #[error("{0}")]
    Shape(String),
}

impl MackayError {
    /// Clamped fallback when the failure is a degenerate norm.
    pub fn fallback(&self) -> Option<MackayTarget> {
        match self {
            MackayError::Degenerate(d) => Some(MackayTarget { hyper: d.fallback, gamma: d.gamma }),
            MackayError::Shape(_) => None,
        }
    }
}

impl From<MackayError> for Error {
    fn from(e: MackayError) -> Self {
        Error::InvalidConfig(e.to_string())
    }
}

/// MacKay step that resolves degenerate norms by clamping to the ceiling.
pub fn mackay_update_clamped(
    g: &GgnFactor,
    mu: &[f64],
    y: &[f64],
    y_hat: &[f64],
    m: Hyperparams,
) -> Result<MackayTarget> {
    match mackay_update(g, mu, y, y_hat, m) {
        Ok(t) => Ok(t),
        Err(e) => e.fallback().ok_or_else(|| e.into()),
    }
}

/// `max(|α − α'|/α, |β − β'|/β)` for the MacKay target `(α', β')`.
pub fn fixed_point_residual(g: &GgnFactor, mu: &[f64], y: &[f64], y_hat: &[f64], m: Hyperparams) -> Result<f64> {
    let target = mackay_update_clamped(g, mu, y, y_hat, m)?;
    Ok(((m.alpha - target.hyper.alpha).abs() / m.alpha).max((m.beta - target.hyper.beta).abs() / m.beta))
}

/// Log-space convex combination `exp((1−ρ)·log old + ρ·log new)`; `ρ = 1` is
/// the plain update and `ρ = 0` freezes the hyperparameters.
pub fn damp(old: Hyperparams, new: Hyperparams, damping: f64) -> Hyperparams {
    if damping >= 1.0 {
        return new;
    }
    if damping <= 0.0 {
        return old;
    }
    let mix = |a: f64, b: f64| ((1.0 - damping) * a.ln() + damping * b.ln()).exp();
    Hyperparams { alpha: mix(old.alpha, new.alpha), beta: mix(old.beta, new.beta) }
}

/// Substitution `(μ, ŷ)` for the given mode; `v_star` is required for LM.
pub fn substitution<'a>(
    mode: UpdateMode,
    t: &'a TangentModel,
    v_star: Option<&'a ParamVector>,
) -> Result<(&'a [f64], Vec<f64>)> {
    match mode {
        UpdateMode::Ol => Ok((t.linearization_point(), t.base_predictions().to_vec())),
        UpdateMode::Lm => {
            let v = v_star.ok_or_else(|| Error::InvalidConfig("LM substitution needs v*".into()))?;
            Ok((v, t.predict(v)?))
        }
    }
}

/// Result of iterating MacKay updates on a frozen tangent model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointIteration {
    pub hyper: Hyperparams,
    pub gamma: GammaDiagnostic,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Iterates MacKay updates on a frozen tangent model until the fixed-point
/// residual drops below `tol` or `max_iter` updates have been applied.
pub fn iterate_fixed_point(
    t: &TangentModel,
    y: &[f64],
    mode: UpdateMode,
    init: Hyperparams,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointIteration> {
    let mut m = init;
    let mut iterations = 0;
    loop {
        let g = ggn(t, m, 0.0)?;
        let v_star = match mode {
            UpdateMode::Lm => Some(gauss_newton_map(t, m, &g, y)?),
            UpdateMode::Ol => None,
        };
        let (mu, y_hat) = substitution(mode, t, v_star.as_ref())?;
        let target = mackay_update_clamped(&g, mu, y, &y_hat, m)?;
        let residual = ((m.alpha - target.hyper.alpha).abs() / m.alpha)
            .max((m.beta - target.hyper.beta).abs() / m.beta);
        if residual < tol || iterations >= max_iter {
            return Ok(FixedPointIteration {
                hyper: m,
                gamma: target.gamma,
                iterations,
                residual,
                converged: residual < tol,
            });
        }
        m = target.hyper;
        iterations += 1;
    }
}
