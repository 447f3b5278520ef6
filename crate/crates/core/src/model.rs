//! Single-hidden-layer tanh MLP regressor, its regularised squared-error
//! loss, the loss gradient and the parameter Jacobian at a set of inputs.
//!
//! Flat parameter layout for `d_x` inputs and `h` hidden units:
//!
//! | block | length   | meaning                                  |
//! |-------|----------|------------------------------------------|
//! | `W1`  | `h·d_x`  | input→hidden weights, row `j` = unit `j` |
//! | `b1`  | `h`      | hidden biases                            |
//! | `w2`  | `h`      | hidden→output weights                    |
//! | `b2`  | `1`      | output bias                              |

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm_sq, DenseMatrix};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub activation: Activation,
}

pub const DEFAULT_HIDDEN_UNITS: usize = 50;

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_units: usize) -> Result<Self> {
        if hidden_units == 0 {
            return Err(Error::InvalidConfig("hidden_units must be at least 1".into()));
        }
        Ok(Self { input_dim, hidden_units, activation: Activation::Tanh })
    }

    /// Number of parameters `d_w`.
    pub fn num_params(&self) -> usize {
        (self.input_dim + 1) * self.hidden_units + self.hidden_units + 1
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden_units * self.input_dim;
        let b1 = w1 + self.hidden_units;
        let w2 = b1 + self.hidden_units;
        (w1, b1, w2)
    }

    /// Zero biases, weights i.i.d. `N(0, 1/fan_in)`.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = CounterRng::derive(seed, "init", 0);
        let mut w = vec![0.0; self.num_params()];
        let (w1_end, b1_end, w2_end) = self.offsets();
        let s1 = 1.0 / (self.input_dim.max(1) as f64).sqrt();
        for v in &mut w[..w1_end] {
            *v = s1 * rng.normal();
        }
        let s2 = 1.0 / (self.hidden_units as f64).sqrt();
        for v in &mut w[b1_end..w2_end] {
            *v = s2 * rng.normal();
        }
        ParamVector(w)
    }

    fn check(&self, w: &[f64], x: &DenseMatrix) -> Result<()> {
        if w.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has length {}, architecture needs {}",
                w.len(),
                self.num_params()
            )));
        }
        if x.cols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {} columns, architecture expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn hidden_activations(&self, w: &[f64], x: &DenseMatrix) -> DenseMatrix {
        let (w1_end, b1_end, _) = self.offsets();
        let h = self.hidden_units;
        let w1 = DenseMatrix::from_vec_unchecked(h, self.input_dim, w[..w1_end].to_vec());
        // (n×d_x)·(d_x×h) via W1ᵀ.
        let mut pre = x.matmul(&w1.transpose()).expect("checked shapes");
        let b1 = &w[w1_end..b1_end];
        for i in 0..pre.rows() {
            for (a, b) in pre.row_mut(i).iter_mut().zip(b1) {
                *a = (*a + b).tanh();
            }
        }
        pre
    }

    /// Full forward pass, keeping hidden activations for the backward sweep.
    pub fn forward_pass(&self, w: &[f64], x: &DenseMatrix) -> Result<ForwardPass> {
        self.check(w, x)?;
        let hidden = self.hidden_activations(w, x);
        let (_, b1_end, w2_end) = self.offsets();
        let w2 = &w[b1_end..w2_end];
        let b2 = w[w2_end];
        let output = (0..hidden.rows()).map(|i| dot(hidden.row(i), w2) + b2).collect();
        Ok(ForwardPass { hidden, output })
    }

    pub fn forward(&self, w: &[f64], x: &DenseMatrix) -> Result<Vec<f64>> {
        Ok(self.forward_pass(w, x)?.output)
    }

    /// `(β/2)‖y − f(w)‖² + (α/2)‖w‖²`.
    pub fn loss(&self, w: &[f64], x: &DenseMatrix, y: &[f64], m: Hyperparams) -> Result<f64> {
        let f = self.forward(w, x)?;
        check_targets(y, f.len())?;
        Ok(regularised_loss(&f, y, w, m))
    }

    /// `∂ℓ_f/∂w = β Jᵀ(f(w) − y) + αw`, by backpropagation.
    pub fn loss_gradient(&self, w: &[f64], x: &DenseMatrix, y: &[f64], m: Hyperparams) -> Result<ParamVector> {
        Ok(self.loss_and_gradient(w, x, y, m)?.1)
    }

    pub fn loss_and_gradient(
        &self,
        w: &[f64],
        x: &DenseMatrix,
        y: &[f64],
        m: Hyperparams,
    ) -> Result<(f64, ParamVector)> {
        let pass = self.forward_pass(w, x)?;
        check_targets(y, pass.output.len())?;
        let loss = regularised_loss(&pass.output, y, w, m);
        let h = self.hidden_units;
        let dx = self.input_dim;
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w2 = &w[b1_end..w2_end];

        let mut grad = vec![0.0; w.len()];
        // delta_i = β (f_i − y_i)
        let delta: Vec<f64> = pass.output.iter().zip(y).map(|(f, t)| m.beta * (f - t)).collect();
        // Hidden-layer error signal δ_ij = delta_i · w2_j · (1 − a_ij²).
        let n = delta.len();
        let mut hidden_err = DenseMatrix::zeros(n, h);
        for i in 0..n {
            let a = pass.hidden.row(i);
            let di = delta[i];
            axpy(di, a, &mut grad[b1_end..w2_end]);
            let e = hidden_err.row_mut(i);
            for j in 0..h {
                e[j] = di * w2[j] * (1.0 - a[j] * a[j]);
            }
        }
        grad[w2_end] = delta.iter().sum();
        for i in 0..n {
            axpy(1.0, hidden_err.row(i), &mut grad[w1_end..b1_end]);
        }
        // gW1 = δᵀ X  (h×d_x)
        let g_w1 = hidden_err.transpose().matmul(x)?;
        grad[..w1_end].copy_from_slice(g_w1.as_slice());
        debug_assert_eq!(g_w1.as_slice().len(), h * dx);
        axpy(m.alpha, w, &mut grad);
        Ok((loss, ParamVector(grad)))
    }

    /// `J = ∂f/∂w` at each input row, shape `n × d_w`.
    pub fn jacobian(&self, w: &[f64], x: &DenseMatrix) -> Result<DenseMatrix> {
        let pass = self.forward_pass(w, x)?;
        Ok(self.jacobian_from_pass(w, x, &pass))
    }

    pub fn jacobian_from_pass(&self, w: &[f64], x: &DenseMatrix, pass: &ForwardPass) -> DenseMatrix {
        let h = self.hidden_units;
        let dx = self.input_dim;
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w2 = &w[b1_end..w2_end];
        let n = x.rows();
        let mut jac = DenseMatrix::zeros(n, self.num_params());
        for i in 0..n {
            let a = pass.hidden.row(i);
            let xi = x.row(i);
            let row = jac.row_mut(i);
            for j in 0..h {
                let s = w2[j] * (1.0 - a[j] * a[j]);
                row[w1_end + j] = s;
                let block = &mut row[j * dx..(j + 1) * dx];
                for (b, xv) in block.iter_mut().zip(xi) {
                    *b = s * xv;
                }
            }
            row[b1_end..w2_end].copy_from_slice(a);
            row[w2_end] = 1.0;
        }
        jac
    }
}

/// Hidden activations (`n × h`) and outputs (`n`) of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub hidden: DenseMatrix,
    pub output: Vec<f64>,
}

fn check_targets(y: &[f64], n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{} targets for {} inputs", y.len(), n)));
    }
    Ok(())
}

pub(crate) fn sq_residual(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (t - p) * (t - p)).sum()
}

pub(crate) fn regularised_loss(pred: &[f64], y: &[f64], w: &[f64], m: Hyperparams) -> f64 {
    0.5 * m.beta * sq_residual(pred, y) + 0.5 * m.alpha * norm_sq(w)
}

/// Flat parameter vector (NN weights, a variational mean, or tangent-model
/// parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Prior precision `alpha` and noise precision `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub beta: f64,
}

impl Hyperparams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(alpha) || !ok(beta) {
            return Err(Error::InvalidHyperparams { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }
}
