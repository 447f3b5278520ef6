//! One training run: data split, training, final evaluation, artifacts.

use std::path::{Path, PathBuf};

use online_laplace::data::{make_split, Dataset, Split, SplitSpec, Standardizer};
use online_laplace::predict::{log_likelihood, predict_batch, rmse, PredictiveMean};
use online_laplace::linalg::norm;
use online_laplace::tangent::{gauss_newton_map, ggn, linearize};
use online_laplace::train::{
    posthoc_hyperopt, run_offline_with, run_online_with, Objective, PosthocResult, Procedure, TrainData,
};
use online_laplace::{Error as CoreError, Hyperparams, MlpArchitecture, ParamVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{dataset_checksum, RunManifest};
use crate::trace::{EvalRow, TraceWriter};

pub const TRACE_FILE: &str = "trace.csv";
pub const MODEL_FILE: &str = "model.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BREAKDOWN_FILE: &str = "breakdown.json";

/// Final model artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub input_dim: usize,
    pub hidden_units: usize,
    /// Step whose weights these are.
    pub step: usize,
    pub params: ParamVector,
    /// Hyperparameters the predictive uses.
    pub hyper: Hyperparams,
    /// Hyperparameters at the end of training (before any post-hoc fit).
    pub train_hyper: Hyperparams,
    pub posthoc: Option<PosthocSummary>,
    /// `‖w − v*‖/‖w‖` under `hyper` (see [`RunOutcome`]).
    pub rel_map_distance: Option<f64>,
    /// Coordinate distributions of `params` and of the tangent MAP under `hyper`.
    pub map_comparison: MapComparison,
    pub standardizer: Standardizer,
}

/// Quantile levels reported in [`MapComparison`].
pub const QUANTILE_LEVELS: [f64; 7] = [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapComparison {
    pub levels: Vec<f64>,
    pub params: Vec<f64>,
    pub tangent_map: Vec<f64>,
    /// Quantiles of `|w_i − v*_i|`.
    pub abs_difference: Vec<f64>,
}

/// Linear-interpolation quantiles of `values` at [`QUANTILE_LEVELS`].
pub fn quantiles(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    QUANTILE_LEVELS
        .iter()
        .map(|q| {
            let pos = q * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        })
        .collect()
}

fn tangent_map(arch: &MlpArchitecture, w: &ParamVector, m: Hyperparams, split: &Split) -> online_laplace::Result<ParamVector> {
    let t = linearize(arch, w, &split.train.x)?;
    let g = ggn(&t, m, 0.0)?;
    gauss_newton_map(&t, m, &g, &split.train.y)
}

pub fn map_comparison(arch: &MlpArchitecture, w: &ParamVector, m: Hyperparams, split: &Split) -> online_laplace::Result<MapComparison> {
    let v = tangent_map(arch, w, m, split)?;
    let diff: Vec<f64> = w.iter().zip(v.iter()).map(|(a, b)| (a - b).abs()).collect();
    Ok(MapComparison { levels: QUANTILE_LEVELS.to_vec(), params: quantiles(w), tangent_map: quantiles(&v), abs_difference: quantiles(&diff) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosthocSummary {
    pub objective: Objective,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

impl From<(Objective, PosthocResult)> for PosthocSummary {
    fn from((objective, r): (Objective, PosthocResult)) -> Self {
        Self { objective, iterations: r.iterations, residual: r.residual, converged: r.converged }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub eval: EvalRow,
    pub steps_run: usize,
    /// `‖w − v*‖/‖w‖`: online runs report the last recorded step; offline
    /// runs the selected snapshot under the post-hoc hyperparameters.
    pub final_rel_map_distance: Option<f64>,
}

struct Trained {
    params: ParamVector,
    /// Step of `params`.
    step: usize,
    steps_run: usize,
    hyper: Hyperparams,
    train_hyper: Hyperparams,
    posthoc: Option<PosthocSummary>,
    best: Option<(usize, f64)>,
    rel_map_distance: Option<f64>,
}

fn split_for(m: &RunManifest, ds: &Dataset) -> CliResult<Split> {
    Ok(make_split(ds, &SplitSpec::new(m.seed, m.split_index, m.use_validation))?)
}

/// Test metrics in original units under the linearised-Laplace predictive.
pub fn evaluate(
    arch: &MlpArchitecture,
    w: &ParamVector,
    m: Hyperparams,
    split: &Split,
    step: usize,
) -> CliResult<EvalRow> {
    let t = linearize(arch, w, &split.train.x)?;
    let g = ggn(&t, m, 0.0)?;
    let s = &split.standardizer;
    let preds: Vec<_> = predict_batch(arch, w, &g, &split.test.x, m, PredictiveMean::Network)?
        .iter()
        .map(|p| p.destandardise(s.target_mean, s.target_std))
        .collect();
    let y_test = s.inverse_y(&split.test.y);
    let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    let train_rmse = rmse(t.base_predictions(), &split.train.y)? * s.target_std;
    Ok(EvalRow {
        step,
        alpha: m.alpha,
        beta: m.beta,
        train_rmse,
        test_rmse: rmse(&means, &y_test)?,
        test_loglik: log_likelihood(&preds, &y_test)?,
    })
}

/// `‖w − v*‖/‖w‖` for the tangent model at `w` on the training portion.
pub fn rel_map_distance(arch: &MlpArchitecture, w: &ParamVector, m: Hyperparams, split: &Split) -> online_laplace::Result<f64> {
    let v = tangent_map(arch, w, m, split)?;
    let d: Vec<f64> = w.iter().zip(v.iter()).map(|(a, b)| a - b).collect();
    Ok(norm(&d) / norm(w).max(f64::MIN_POSITIVE))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serialisable") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Executes the run described by `m` on `ds`, writing artifacts under
/// `m.run_dir(out_dir)`.
pub fn execute(m: &RunManifest, ds: &Dataset, out_dir: &Path) -> CliResult<RunOutcome> {
    m.check()?;
    let checksum = dataset_checksum(ds);
    if checksum != m.dataset_sha256 {
        return Err(CliError::usage(format!(
            "dataset {} has checksum {checksum}, manifest expects {}",
            m.dataset, m.dataset_sha256
        )));
    }
    let split = split_for(m, ds)?;
    let arch = MlpArchitecture::new(ds.input_dim(), m.hidden_units)?;
    let dir = m.run_dir(out_dir);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_json(&dir.join(MANIFEST_FILE), m)?;
    let trace_path = dir.join(TRACE_FILE);
    let mut trace = TraceWriter::create(&trace_path, &m.digest())?;
    let data = TrainData::from_split(&split);

    // Sink errors are I/O failures; keep the original message.
    let mut sink_err: Option<CliError> = None;
    let mut sink = |r: &online_laplace::train::TraceRecord| {
        trace.step(r).map_err(|e| {
            let msg = e.message.clone();
            sink_err = Some(e);
            CoreError::Io { path: trace_path.display().to_string(), source: std::io::Error::other(msg) }
        })
    };

    let result = match m.procedure {
        Procedure::Ol | Procedure::Lm => run_online_with(&arch, data, &m.config, |_| {}, &mut sink).map(|o| Trained {
            step: o.steps_run,
            steps_run: o.steps_run,
            hyper: o.hyper,
            train_hyper: o.hyper,
            posthoc: None,
            best: None,
            rel_map_distance: o.trace.last().and_then(|r| r.rel_map_distance),
            params: o.params,
        }),
        Procedure::Offline => run_offline_with(&arch, data, &m.config, &mut sink).and_then(|o| {
            let objective = m.posthoc.unwrap_or(Objective::Lh);
            let fit = posthoc_hyperopt(&arch, &o.params, &split.train.x, &split.train.y, objective, o.hyper)?;
            let rel = rel_map_distance(&arch, &o.params, fit.hyper, &split)?;
            Ok(Trained {
                step: o.best_step,
                steps_run: o.trace.last().map_or(0, |r| r.step),
                hyper: fit.hyper,
                train_hyper: o.hyper,
                posthoc: Some((objective, fit).into()),
                best: Some((o.best_step, o.best_val_rmse)),
                rel_map_distance: Some(rel),
                params: o.params,
            })
        }),
    };
    drop(sink);
    if let Some(e) = sink_err {
        return Err(e);
    }
    let Trained { params, step, steps_run, hyper, train_hyper, posthoc, best, rel_map_distance } = match result {
        Ok(v) => v,
        Err(CoreError::NumericalBreakdown { step, reason, last_good }) => {
            write_json(&dir.join(BREAKDOWN_FILE), &*last_good)?;
            return Err(CliError::numeric(format!(
                "numerical breakdown at step {step}: {reason} (last good state in {})",
                dir.join(BREAKDOWN_FILE).display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    if let Some((best_step, val)) = best {
        trace.best(best_step, train_hyper.alpha, train_hyper.beta, val)?;
    }
    let eval = evaluate(&arch, &params, hyper, &split, step)?;
    if !(eval.test_rmse.is_finite() && eval.test_loglik.is_finite()) {
        return Err(CliError::numeric(format!("non-finite test metrics {eval:?}")));
    }
    trace.eval(&eval)?;
    let map_comparison = map_comparison(&arch, &params, hyper, &split)?;
    write_json(
        &dir.join(MODEL_FILE),
        &ModelFile {
            input_dim: ds.input_dim(),
            hidden_units: m.hidden_units,
            step,
            params,
            hyper,
            train_hyper,
            posthoc,
            rel_map_distance,
            map_comparison,
            standardizer: split.standardizer.clone(),
        },
    )?;
    Ok(RunOutcome { dir, eval, steps_run, final_rel_map_distance: rel_map_distance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate_between_order_statistics() {
        let q = quantiles(&[4.0, 0.0, 2.0, 1.0, 3.0]);
        assert_eq!(q, vec![0.0, 0.2, 1.0, 2.0, 3.0, 3.8, 4.0]);
        assert_eq!(quantiles(&[7.0]), vec![7.0; 7]);
    }
}
