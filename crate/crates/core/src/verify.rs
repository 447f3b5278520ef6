//! Property suites behind the `verify` command and the acceptance tests.
//!
//! Each suite draws its own random instances from a seeded generator and
//! checks an implementation route against an independent one: the Gaussian
//! marginal against the tangent evidence, central finite differences against
//! analytic derivatives, a log-grid search against MacKay's fixed point.

use std::time::{Duration, Instant};

use crate::data::{make_split, synthetic_teacher, SplitSpec};
use crate::evidence::{elbo, exact_marginal_oracle, laplace_evidence_lf, tangent_evidence_lh};
use crate::hyper::{fixed_point_residual, mackay_update};
use crate::linalg::{norm, DenseMatrix};
use crate::model::{Hyperparams, MlpArchitecture, ParamVector};
use crate::rng::CounterRng;
use crate::tangent::{gauss_newton_map, ggn, GgnFactor, TangentModel};
use crate::train::{run_online_observed, Procedure, TrainConfig, TrainData};

#[derive(Debug, Clone)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity and its threshold.
    pub detail: String,
    pub elapsed: Duration,
}

impl std::fmt::Display for PropertyOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:<28} {} ({:.2?})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed
        )
    }
}

/// Deliberate defects for checking that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Corruption {
    #[default]
    None,
    /// Step away from the tangent-model MAP instead of towards it
    /// (`v = w_t + H⁻¹∇ℓ`).
    FlipGaussNewtonSign,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random tangent models for the evidence suites.
    pub evidence_instances: usize,
    /// Random MLPs for the derivative suites.
    pub derivative_instances: usize,
    /// Frozen linear models for the MacKay suite.
    pub mackay_instances: usize,
    /// Recorded training steps for the gradient-matching suite.
    pub matching_steps: usize,
    pub corruption: Corruption,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            evidence_instances: 200,
            derivative_instances: 50,
            mackay_instances: 20,
            matching_steps: 100,
            corruption: Corruption::None,
        }
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> PropertyOutcome {
    let start = Instant::now();
    let (passed, detail) = f();
    PropertyOutcome { name, passed, detail, elapsed: start.elapsed() }
}

fn log_uniform(r: &mut CounterRng, lo: f64, hi: f64) -> f64 {
    r.uniform(lo.ln(), hi.ln()).exp()
}

/// Random tangent model with `n, d_w ≤ 50` and log-uniform `α, β ∈ [1e-2, 1e2]`.
pub struct EvidenceInstance {
    pub tangent: TangentModel,
    pub y: Vec<f64>,
    pub hyper: Hyperparams,
}

pub fn random_evidence_instance(r: &mut CounterRng) -> EvidenceInstance {
    let n = 1 + r.below(50) as usize;
    let d = 1 + r.below(50) as usize;
    let w: Vec<f64> = (0..d).map(|_| r.normal()).collect();
    let f: Vec<f64> = (0..n).map(|_| r.normal()).collect();
    let j: Vec<f64> = (0..n * d).map(|_| r.normal()).collect();
    let y: Vec<f64> = (0..n).map(|_| 2.0 * r.normal()).collect();
    let hyper = Hyperparams { alpha: log_uniform(r, 1e-2, 1e2), beta: log_uniform(r, 1e-2, 1e2) };
    let tangent = TangentModel::from_parts(ParamVector(w), f, DenseMatrix::from_row_major(n, d, j).expect("finite"))
        .expect("consistent shapes");
    EvidenceInstance { tangent, y, hyper }
}

/// Per-instance evidence quantities.
#[derive(Debug, Clone, Copy)]
pub struct EvidenceCheck {
    pub lf: f64,
    pub lh: f64,
    pub elbo_at_map: f64,
    pub elbo_at_base: f64,
    pub oracle: f64,
    /// `½ (v* − w_t)ᵀ H (v* − w_t)` from an explicit `H`.
    pub quadratic_gap: f64,
}

fn corrupted_map(t: &TangentModel, g: &GgnFactor, y: &[f64], m: Hyperparams, c: Corruption) -> ParamVector {
    let v = gauss_newton_map(t, m, g, y).expect("consistent shapes");
    match c {
        Corruption::None => v,
        Corruption::FlipGaussNewtonSign => {
            let w = t.linearization_point();
            ParamVector(w.iter().zip(v.iter()).map(|(w, v)| 2.0 * w - v).collect())
        }
    }
}

pub fn check_evidence_instance(inst: &EvidenceInstance, corruption: Corruption) -> EvidenceCheck {
    let (t, y, m) = (&inst.tangent, &inst.y, inst.hyper);
    let g = ggn(t, m, 0.0).expect("GGN is positive definite for positive alpha");
    let v = corrupted_map(t, &g, y, m, corruption);
    let lf = laplace_evidence_lf(t, &g, y, m).expect("shapes").total;
    let elbo_at_map = elbo(t, &g, &v, y, m).expect("shapes").total;
    let lh = elbo_at_map;
    let elbo_at_base = elbo(t, &g, t.linearization_point(), y, m).expect("shapes").total;
    let oracle = exact_marginal_oracle(t, y, m).expect("positive definite covariance");
    // Explicit H from the Jacobian, independent of the factor.
    let j = t.jacobian();
    let dv: Vec<f64> = v.iter().zip(t.linearization_point().iter()).map(|(a, b)| a - b).collect();
    let jdv = j.matvec(&dv).expect("shapes");
    let quadratic_gap = 0.5 * (m.beta * jdv.iter().map(|x| x * x).sum::<f64>() + m.alpha * dv.iter().map(|x| x * x).sum::<f64>());
    EvidenceCheck { lf, lh, elbo_at_map, elbo_at_base, oracle, quadratic_gap }
}

/// Recomputes `ℒ_h` independently of any corruption (for tightness checks).
fn true_lh(inst: &EvidenceInstance) -> f64 {
    let (t, y, m) = (&inst.tangent, &inst.y, inst.hyper);
    let g = ggn(t, m, 0.0).expect("positive definite");
    tangent_evidence_lh(t, &g, y, m).expect("shapes").total
}

pub fn evidence_suites(opts: &VerifyOptions) -> Vec<PropertyOutcome> {
    let start = Instant::now();
    let mut r = CounterRng::derive(opts.seed, "evidence", 0);
    let instances: Vec<EvidenceInstance> = (0..opts.evidence_instances).map(|_| random_evidence_instance(&mut r)).collect();
    let checks: Vec<(EvidenceCheck, f64)> =
        instances.iter().map(|i| (check_evidence_instance(i, opts.corruption), true_lh(i))).collect();
    let setup = start.elapsed();
    let count = checks.len();

    let mut out = Vec::new();
    out.push(timed("evidence_ordering", || {
        let worst = checks.iter().map(|(c, _)| c.lf - c.lh).fold(f64::NEG_INFINITY, f64::max);
        let ok = checks.iter().filter(|(c, _)| c.lf <= c.lh + 1e-10).count();
        (ok == count, format!("{ok}/{count} with Lf <= Lh + 1e-10, worst Lf-Lh {worst:.3e}"))
    }));
    out.push(timed("elbo_tightness", || {
        let worst = checks.iter().map(|(c, lh)| (c.elbo_at_map - lh).abs()).fold(0.0, f64::max);
        (worst < 1e-9, format!("max |ELBO(v*) - Lh| {worst:.3e} < 1e-9"))
    }));
    out.push(timed("elbo_recovers_laplace", || {
        let bad = checks.iter().filter(|(c, _)| c.elbo_at_base != c.lf).count();
        (bad == 0, format!("{bad}/{count} instances with ELBO(w_t) != Lf"))
    }));
    out.push(timed("oracle_equivalence", || {
        let worst = checks
            .iter()
            .map(|(c, _)| (c.lh - c.oracle).abs() / (1.0 + c.lh.abs()))
            .fold(0.0, f64::max);
        (worst < 1e-8, format!("max |Lh - oracle|/(1+|Lh|) {worst:.3e} < 1e-8"))
    }));
    out.push(timed("gap_formula", || {
        let worst = checks
            .iter()
            .map(|(c, _)| ((c.lh - c.lf) - c.quadratic_gap).abs() / c.quadratic_gap.abs().max(1.0))
            .fold(0.0, f64::max);
        (worst < 1e-8, format!("max relative |(Lh-Lf) - gap| {worst:.3e} < 1e-8"))
    }));
    if let Some(first) = out.first_mut() {
        first.elapsed += setup;
    }
    out
}

/// Normwise relative error `‖a − b‖∞ / ‖b‖∞`.
pub fn normwise_rel_error(approx: &[f64], exact: &[f64]) -> f64 {
    let diff = approx.iter().zip(exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = exact.iter().map(|b| b.abs()).fold(0.0, f64::max);
    diff / scale.max(f64::MIN_POSITIVE)
}

pub struct MlpInstance {
    pub arch: MlpArchitecture,
    pub w: ParamVector,
    pub x: DenseMatrix,
    pub y: Vec<f64>,
    pub hyper: Hyperparams,
}

pub fn random_mlp_instance(r: &mut CounterRng) -> MlpInstance {
    let dx = 1 + r.below(8) as usize;
    let h = 1 + r.below(10) as usize;
    let n = 1 + r.below(20) as usize;
    let arch = MlpArchitecture::new(dx, h).expect("h >= 1");
    let w = ParamVector((0..arch.num_params()).map(|_| r.normal()).collect());
    let x = DenseMatrix::from_row_major(n, dx, (0..n * dx).map(|_| r.normal()).collect()).expect("finite");
    let y = (0..n).map(|_| r.normal()).collect();
    let hyper = Hyperparams { alpha: log_uniform(r, 1e-2, 1e1), beta: log_uniform(r, 1e-1, 1e2) };
    MlpInstance { arch, w, x, y, hyper }
}

const FD_EPS: f64 = 1e-5;

/// Worst normwise relative error of the loss gradient against central
/// differences.
pub fn gradient_fd_error(inst: &MlpInstance) -> f64 {
    let an = inst.arch.loss_gradient(&inst.w, &inst.x, &inst.y, inst.hyper).expect("shapes");
    let mut fd = vec![0.0; an.len()];
    let mut w = inst.w.to_vec();
    for p in 0..w.len() {
        let orig = w[p];
        w[p] = orig + FD_EPS;
        let lp = inst.arch.loss(&w, &inst.x, &inst.y, inst.hyper).expect("shapes");
        w[p] = orig - FD_EPS;
        let lm = inst.arch.loss(&w, &inst.x, &inst.y, inst.hyper).expect("shapes");
        w[p] = orig;
        fd[p] = (lp - lm) / (2.0 * FD_EPS);
    }
    normwise_rel_error(&fd, &an)
}

/// Worst row-wise normwise relative error of the Jacobian against central
/// differences of the forward pass.
pub fn jacobian_fd_error(inst: &MlpInstance) -> f64 {
    let jac = inst.arch.jacobian(&inst.w, &inst.x).expect("shapes");
    let (n, d) = (jac.rows(), jac.cols());
    let mut fd = DenseMatrix::zeros(n, d);
    let mut w = inst.w.to_vec();
    for p in 0..d {
        let orig = w[p];
        w[p] = orig + FD_EPS;
        let fp = inst.arch.forward(&w, &inst.x).expect("shapes");
        w[p] = orig - FD_EPS;
        let fm = inst.arch.forward(&w, &inst.x).expect("shapes");
        w[p] = orig;
        for i in 0..n {
            fd.set(i, p, (fp[i] - fm[i]) / (2.0 * FD_EPS));
        }
    }
    (0..n).map(|i| normwise_rel_error(fd.row(i), jac.row(i))).fold(0.0, f64::max)
}

pub fn derivative_suites(opts: &VerifyOptions) -> Vec<PropertyOutcome> {
    let mut r = CounterRng::derive(opts.seed, "derivatives", 0);
    let instances: Vec<MlpInstance> = (0..opts.derivative_instances).map(|_| random_mlp_instance(&mut r)).collect();
    vec![
        timed("loss_gradient_fd", || {
            let worst = instances.iter().map(gradient_fd_error).fold(0.0, f64::max);
            (worst < 1e-5, format!("max relative error {worst:.3e} < 1e-5 over {} MLPs", instances.len()))
        }),
        timed("jacobian_fd", || {
            let worst = instances.iter().map(jacobian_fd_error).fold(0.0, f64::max);
            (worst < 1e-5, format!("max relative error {worst:.3e} < 1e-5 over {} MLPs", instances.len()))
        }),
    ]
}

/// Frozen exactly-linear model `f(w) = Xw` with a random linearisation point.
pub fn random_linear_model(r: &mut CounterRng) -> (TangentModel, Vec<f64>) {
    let d = 2 + r.below(7) as usize;
    let n = 3 * d + r.below(30) as usize;
    let x = DenseMatrix::from_row_major(n, d, (0..n * d).map(|_| r.normal()).collect()).expect("finite");
    let scale = log_uniform(r, 0.3, 3.0);
    let w_true: Vec<f64> = (0..d).map(|_| scale * r.normal()).collect();
    let noise = log_uniform(r, 0.1, 1.0);
    let mut y = x.matvec(&w_true).expect("shapes");
    for v in &mut y {
        *v += noise * r.normal();
    }
    let w_t: Vec<f64> = (0..d).map(|_| r.normal()).collect();
    let f = x.matvec(&w_t).expect("shapes");
    (TangentModel::from_parts(ParamVector(w_t), f, x).expect("shapes"), y)
}

/// Golden-section maximisation of a unimodal function on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Maximiser of the exact tangent-model evidence over `(log α, log β)`: a
/// 61×61 grid on `[-12, 12]²` followed by alternating golden-section sweeps.
pub fn grid_maximiser(t: &TangentModel, y: &[f64]) -> Hyperparams {
    let ev = |la: f64, lb: f64| {
        exact_marginal_oracle(t, y, Hyperparams { alpha: la.exp(), beta: lb.exp() }).unwrap_or(f64::NEG_INFINITY)
    };
    let (lo, hi, k) = (-12.0, 12.0, 61);
    let step = (hi - lo) / (k - 1) as f64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let (la, lb) = (lo + i as f64 * step, lo + j as f64 * step);
            let v = ev(la, lb);
            if v > best.0 {
                best = (v, la, lb);
            }
        }
    }
    let (mut la, mut lb) = (best.1, best.2);
    let mut width = step;
    for _ in 0..60 {
        let (pa, pb) = (la, lb);
        la = golden_max(|a| ev(a, lb), la - width, la + width, 1e-10);
        lb = golden_max(|b| ev(la, b), lb - width, lb + width, 1e-10);
        if (la - pa).abs() < 1e-9 && (lb - pb).abs() < 1e-9 {
            break;
        }
        width = (width * 0.7).max(((la - pa).abs() + (lb - pb).abs()) * 4.0).max(1e-3);
    }
    Hyperparams { alpha: la.exp(), beta: lb.exp() }
}

/// Outcome of iterating LM-substituted MacKay updates on one frozen model.
#[derive(Debug, Clone, Copy)]
pub struct MackayCheck {
    pub converged: bool,
    pub iterations: usize,
    /// Residual at the last iterate.
    pub residual: f64,
    pub fixed_point: Hyperparams,
    pub grid: Hyperparams,
    pub max_rel_diff: f64,
    pub max_log_gradient: f64,
}

pub fn check_mackay_instance(t: &TangentModel, y: &[f64]) -> MackayCheck {
    let mut m = Hyperparams::default();
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for it in 0..=500 {
        let g = ggn(t, m, 0.0).expect("positive definite");
        let v = gauss_newton_map(t, m, &g, y).expect("shapes");
        let y_hat = t.predict(&v).expect("shapes");
        let res = fixed_point_residual(&g, &v, y, &y_hat, m).expect("finite norms");
        iterations = it;
        residual = res;
        if res < 1e-6 {
            converged = true;
            break;
        }
        if it == 500 {
            break;
        }
        m = mackay_update(&g, &v, y, &y_hat, m).expect("non-degenerate norms").hyper;
    }
    let grid = grid_maximiser(t, y);
    let max_rel_diff = ((m.alpha - grid.alpha).abs() / grid.alpha).max((m.beta - grid.beta).abs() / grid.beta);
    let ev = |la: f64, lb: f64| exact_marginal_oracle(t, y, Hyperparams { alpha: la.exp(), beta: lb.exp() }).expect("pd");
    let (la, lb) = (m.alpha.ln(), m.beta.ln());
    let h = 1e-4;
    let ga = (ev(la + h, lb) - ev(la - h, lb)) / (2.0 * h);
    let gb = (ev(la, lb + h) - ev(la, lb - h)) / (2.0 * h);
    MackayCheck { converged, iterations, residual, fixed_point: m, grid, max_rel_diff, max_log_gradient: ga.abs().max(gb.abs()) }
}

pub fn mackay_suite(opts: &VerifyOptions) -> Vec<PropertyOutcome> {
    let mut r = CounterRng::derive(opts.seed, "mackay", 0);
    let checks: Vec<MackayCheck> = (0..opts.mackay_instances)
        .map(|_| {
            let (t, y) = random_linear_model(&mut r);
            check_mackay_instance(&t, &y)
        })
        .collect();
    let n = checks.len();
    vec![
        timed("mackay_convergence", || {
            let ok = checks.iter().filter(|c| c.converged).count();
            let worst = checks.iter().map(|c| c.iterations).max().unwrap_or(0);
            let stuck: Vec<String> = checks
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.converged)
                .map(|(i, c)| format!("#{i} residual {:.2e} at alpha {:.3e}", c.residual, c.fixed_point.alpha))
                .collect();
            let mut detail = format!("{ok}/{n} converged (residual < 1e-6), max {worst} iterations <= 500");
            if !stuck.is_empty() {
                detail += &format!(" [not converged: {}]", stuck.join(", "));
            }
            (ok == n, detail)
        }),
        timed("mackay_matches_grid", || {
            let worst = checks.iter().map(|c| c.max_rel_diff).fold(0.0, f64::max);
            (worst < 0.02, format!("max relative (alpha, beta) difference {worst:.3e} < 2e-2"))
        }),
        timed("mackay_stationary", || {
            let worst = checks.iter().map(|c| c.max_log_gradient).fold(0.0, f64::max);
            (worst < 1e-3, format!("max |dLh/dlog(alpha,beta)| {worst:.3e} < 1e-3"))
        }),
    ]
}

/// Gradient matching at recorded online steps: `‖∂_w ℓ_f(w_t) − ∂_v ℓ_h(w_t)‖`
/// relative to `1 + ‖∂_w ℓ_f‖`. Returns the per-step values.
pub fn gradient_matching_samples(opts: &VerifyOptions) -> Vec<f64> {
    let ds = synthetic_teacher(80, 5, 8, 0.1, opts.seed);
    let split = make_split(&ds, &SplitSpec::new(opts.seed, 0, false)).expect("80 rows");
    let arch = MlpArchitecture::new(5, 10).expect("h >= 1");
    let runs = 4;
    let per_run = opts.matching_steps.div_ceil(runs);
    let mut out = Vec::with_capacity(opts.matching_steps);
    for k in 0..runs {
        let proc = if k % 2 == 0 { Procedure::Ol } else { Procedure::Lm };
        let mut cfg = TrainConfig::new(proc, per_run * 3);
        cfg.seed = opts.seed.wrapping_add(k as u64);
        let data = TrainData::from_split(&split);
        let _ = run_online_observed(&arch, data, &cfg, |v| {
            if v.step % 3 != 0 || out.len() >= opts.matching_steps {
                return;
            }
            let gf = arch.loss_gradient(v.params, data.x, data.y, v.hyper).expect("shapes");
            let gh = v.tangent.loss_gradient(v.params, data.y, v.hyper).expect("shapes");
            let diff: Vec<f64> = gf.iter().zip(gh.iter()).map(|(a, b)| a - b).collect();
            out.push(norm(&diff) / (1.0 + norm(&gf)));
        });
    }
    out
}

pub fn gradient_matching_suite(opts: &VerifyOptions) -> Vec<PropertyOutcome> {
    vec![timed("gradient_matching", || {
        let samples = gradient_matching_samples(opts);
        let worst = samples.iter().copied().fold(0.0, f64::max);
        (
            samples.len() == opts.matching_steps && worst < 1e-10,
            format!("max relative mismatch {worst:.3e} < 1e-10 over {} steps", samples.len()),
        )
    })]
}

pub fn run_all(opts: &VerifyOptions) -> Vec<PropertyOutcome> {
    let mut out = evidence_suites(opts);
    out.extend(derivative_suites(opts));
    out.extend(mackay_suite(opts));
    out.extend(gradient_matching_suite(opts));
    out
}
