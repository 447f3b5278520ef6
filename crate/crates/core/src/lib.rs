//! Online hyperparameter tuning for small MLP regressors through the Laplace
//! evidence and the tangent linear model.
//!
//! The pieces, bottom-up:
//!
//! - [`linalg`]: dense SPD factorisation, solves, log-determinants.
//! - [`model`]: the tanh MLP, its regularised loss, gradient and Jacobian.
//! - [`tangent`]: the linearised model `h(v) = f(w_t) + J(v − w_t)`, its GGN and
//!   Gauss-Newton MAP.
//! - [`evidence`]: Laplace evidence, tangent evidence, the ELBO that links
//!   them, and an exact Gaussian-marginal oracle.
//! - [`hyper`]: MacKay's closed-form `(α, β)` update.
//! - [`train`]: full-batch Adam and the online/offline procedures.
//! - [`predict`]: linearised-Laplace predictives and metrics.
//! - [`data`]: tabular loading, standardisation and seeded splits.
//! - [`verify`]: self-contained property suites used by the `verify` command.

pub mod data;
pub mod error;
pub mod evidence;
pub mod hyper;
pub mod linalg;
pub mod model;
pub mod predict;
pub mod rng;
pub mod tangent;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SpdFactor};
pub use model::{Hyperparams, MlpArchitecture, ParamVector};
pub use tangent::{GgnFactor, TangentModel};
