//! Tangent linear model `h(v) = f(w_t) + J (v − w_t)` at a linearisation
//! point, its GGN curvature `H = βJᵀJ + αI`, and the Gauss-Newton MAP `v*`.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{axpy, cholesky, norm_sq, DenseMatrix, SpdFactor};
use crate::model::{regularised_loss, Hyperparams, MlpArchitecture, ParamVector};

#[derive(Debug)]
pub struct TangentModel {
    w_t: ParamVector,
    f_wt: Vec<f64>,
    jacobian: Arc<DenseMatrix>,
    gram: OnceLock<DenseMatrix>,
    outer_gram: OnceLock<DenseMatrix>,
}

impl Clone for TangentModel {
    fn clone(&self) -> Self {
        let copy = |cell: &OnceLock<DenseMatrix>| {
            let out = OnceLock::new();
            if let Some(g) = cell.get() {
                let _ = out.set(g.clone());
            }
            out
        };
        Self {
            w_t: self.w_t.clone(),
            f_wt: self.f_wt.clone(),
            jacobian: Arc::clone(&self.jacobian),
            gram: copy(&self.gram),
            outer_gram: copy(&self.outer_gram),
        }
    }
}

/// Linearises the network at `w_t` over the rows of `x`.
pub fn linearize(arch: &MlpArchitecture, w_t: &ParamVector, x: &DenseMatrix) -> Result<TangentModel> {
    let pass = arch.forward_pass(w_t, x)?;
    let jacobian = arch.jacobian_from_pass(w_t, x, &pass);
    TangentModel::from_parts(w_t.clone(), pass.output, jacobian)
}

impl TangentModel {
    /// Builds a tangent model from an explicit base point, base predictions
    /// and Jacobian (e.g. for an exactly linear model).
    pub fn from_parts(w_t: ParamVector, f_wt: Vec<f64>, jacobian: DenseMatrix) -> Result<Self> {
        if jacobian.rows() != f_wt.len() || jacobian.cols() != w_t.len() {
            return Err(Error::DimensionMismatch(format!(
                "jacobian {}x{} with {} predictions and {} parameters",
                jacobian.rows(),
                jacobian.cols(),
                f_wt.len(),
                w_t.len()
            )));
        }
        Ok(Self { w_t, f_wt, jacobian: Arc::new(jacobian), gram: OnceLock::new(), outer_gram: OnceLock::new() })
    }

    pub fn linearization_point(&self) -> &ParamVector {
        &self.w_t
    }

    /// `f(w_t)`.
    pub fn base_predictions(&self) -> &[f64] {
        &self.f_wt
    }

    pub fn jacobian(&self) -> &DenseMatrix {
        &self.jacobian
    }

    pub fn num_data(&self) -> usize {
        self.f_wt.len()
    }

    pub fn num_params(&self) -> usize {
        self.w_t.len()
    }

    /// `JᵀJ`, computed once per tangent model.
    pub fn gram(&self) -> &DenseMatrix {
        self.gram.get_or_init(|| self.jacobian.gram())
    }

    /// `JJᵀ`, computed once per tangent model.
    pub fn outer_gram(&self) -> &DenseMatrix {
        self.outer_gram.get_or_init(|| self.jacobian.outer_gram())
    }

    fn check_params(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector of length {} for a tangent model with {} parameters",
                v.len(),
                self.num_params()
            )));
        }
        Ok(())
    }

    fn check_targets(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.num_data() {
            return Err(Error::DimensionMismatch(format!(
                "{} targets for a tangent model over {} points",
                y.len(),
                self.num_data()
            )));
        }
        Ok(())
    }

    /// `h(v)`.
    pub fn predict(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_params(v)?;
        let dv: Vec<f64> = v.iter().zip(self.w_t.iter()).map(|(a, b)| a - b).collect();
        let mut out = self.jacobian.matvec(&dv)?;
        for (o, f) in out.iter_mut().zip(&self.f_wt) {
            *o += f;
        }
        Ok(out)
    }

    /// `ℓ_h(v) = (β/2)‖y − h(v)‖² + (α/2)‖v‖²`.
    pub fn loss(&self, v: &[f64], y: &[f64], m: Hyperparams) -> Result<f64> {
        self.check_targets(y)?;
        let h = self.predict(v)?;
        Ok(regularised_loss(&h, y, v, m))
    }

    /// `∂_v ℓ_h(v) = βJᵀ(h(v) − y) + αv`.
    pub fn loss_gradient(&self, v: &[f64], y: &[f64], m: Hyperparams) -> Result<ParamVector> {
        self.check_targets(y)?;
        let h = self.predict(v)?;
        let r: Vec<f64> = h.iter().zip(y).map(|(a, b)| m.beta * (a - b)).collect();
        let mut g = self.jacobian.tr_matvec(&r)?;
        axpy(m.alpha, v, &mut g);
        Ok(ParamVector(g))
    }
}

/// Which system the GGN is factored through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GgnForm {
    /// Dual when `n < d_w`, primal otherwise.
    Auto,
    /// `d_w × d_w` Cholesky of `H` itself.
    Primal,
    /// `n × n` Cholesky of `K = (α/β)I + JJᵀ`, with `H⁻¹` by Woodbury.
    Dual,
}

#[derive(Debug, Clone)]
enum Repr {
    Primal(SpdFactor),
    Dual {
        k: SpdFactor,
        jacobian: Arc<DenseMatrix>,
        /// Effective prior precision after any jitter.
        alpha: f64,
        log_det: f64,
    },
}

/// Factorisation of the GGN `H = βJᵀJ + αI` for fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GgnFactor {
    hyper: Hyperparams,
    dim: usize,
    repr: Repr,
}

impl GgnFactor {
    pub fn hyper(&self) -> Hyperparams {
        self.hyper
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn form(&self) -> GgnForm {
        match self.repr {
            Repr::Primal(_) => GgnForm::Primal,
            Repr::Dual { .. } => GgnForm::Dual,
        }
    }

    /// Absolute diagonal shift actually added to `H`.
    pub fn jitter(&self) -> f64 {
        match &self.repr {
            Repr::Primal(f) => f.jitter(),
            Repr::Dual { alpha, .. } => alpha - self.hyper.alpha,
        }
    }

    /// `log det H`.
    pub fn log_det(&self) -> f64 {
        match &self.repr {
            Repr::Primal(f) => f.log_det(),
            Repr::Dual { log_det, .. } => *log_det,
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(format!("vector of length {} against GGN of dim {}", x.len(), self.dim)));
        }
        Ok(())
    }

    /// `H⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b)?;
        match &self.repr {
            Repr::Primal(f) => Ok(f.solve_vec(b)?),
            Repr::Dual { k, jacobian, alpha, .. } => {
                // H⁻¹ = (I − Jᵀ K⁻¹ J) / α
                let z = k.solve_vec(&jacobian.matvec(b)?)?;
                let mut x = jacobian.tr_matvec(&z)?;
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi = (bi - *xi) / alpha;
                }
                Ok(x)
            }
        }
    }

    /// `Tr(H⁻¹)`.
    pub fn trace_inverse(&self) -> f64 {
        match &self.repr {
            Repr::Primal(f) => crate::linalg::trace_inverse(f),
            Repr::Dual { k, alpha, .. } => {
                let n = k.dim();
                (self.dim as f64 - n as f64) / alpha + crate::linalg::trace_inverse(k) / self.hyper.beta
            }
        }
    }

    /// `xᵀ H⁻¹ x`.
    pub fn inverse_quadratic_form(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        match &self.repr {
            Repr::Primal(f) => {
                let mut z = x.to_vec();
                f.forward_substitute(&mut z);
                Ok(norm_sq(&z))
            }
            Repr::Dual { k, jacobian, alpha, .. } => {
                let mut z = jacobian.matvec(x)?;
                k.forward_substitute(&mut z);
                Ok(((norm_sq(x) - norm_sq(&z)) / alpha).max(0.0))
            }
        }
    }

    /// Dense `H` rebuilt from the factorisation (for diagnostics and tests).
    pub fn reconstruct(&self) -> DenseMatrix {
        match &self.repr {
            Repr::Primal(f) => f.reconstruct(),
            Repr::Dual { jacobian, alpha, .. } => {
                let mut h = jacobian.gram();
                h.scale(self.hyper.beta);
                h.add_diagonal(*alpha);
                h
            }
        }
    }
}

/// Factors `βJᵀJ + αI`, through the smaller of the primal and dual systems.
/// `jitter` is an absolute diagonal shift tried first; the relative jitter
/// ladder of [`cholesky`] applies after that.
pub fn ggn(t: &TangentModel, m: Hyperparams, jitter: f64) -> Result<GgnFactor> {
    ggn_with(t, m, jitter, GgnForm::Auto)
}

pub fn ggn_with(t: &TangentModel, m: Hyperparams, jitter: f64, form: GgnForm) -> Result<GgnFactor> {
    let (n, d) = (t.num_data(), t.num_params());
    let dual = match form {
        GgnForm::Auto => n < d,
        GgnForm::Primal => false,
        GgnForm::Dual => true,
    };
    if !dual {
        let mut h = t.gram().clone();
        h.scale(m.beta);
        h.add_diagonal(m.alpha);
        let factor = cholesky(&h, jitter)?;
        return Ok(GgnFactor { hyper: m, dim: d, repr: Repr::Primal(factor) });
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::InvalidConfig(format!("invalid jitter {jitter}")));
    }
    let mut k = t.outer_gram().clone();
    k.add_diagonal((m.alpha + jitter) / m.beta);
    let k = cholesky(&k, 0.0)?;
    // K's own ladder jitter ε shifts H by βε.
    let alpha = m.alpha + jitter + m.beta * k.jitter();
    // det H = α^(d−n) β^n det K
    let log_det = (d as f64 - n as f64) * alpha.ln() + n as f64 * m.beta.ln() + k.log_det();
    Ok(GgnFactor { hyper: m, dim: d, repr: Repr::Dual { k, jacobian: Arc::clone(&t.jacobian), alpha, log_det } })
}

/// `v* = w_t − H⁻¹(βJᵀ(f(w_t) − y) + αw_t)`, one Gauss-Newton step from `w_t`.
pub fn gauss_newton_map(t: &TangentModel, m: Hyperparams, g: &GgnFactor, y: &[f64]) -> Result<ParamVector> {
    if g.dim() != t.num_params() {
        return Err(Error::DimensionMismatch("GGN factor does not match tangent model".into()));
    }
    let grad = t.loss_gradient(&t.w_t, y, m)?;
    let step = g.solve(&grad)?;
    Ok(ParamVector(t.w_t.iter().zip(&step).map(|(w, s)| w - s).collect()))
}

/// `ℓ_h(v)`.
pub fn tangent_loss(t: &TangentModel, v: &[f64], y: &[f64], m: Hyperparams) -> Result<f64> {
    t.loss(v, y, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn scalar_model() -> TangentModel {
        TangentModel::from_parts(ParamVector(vec![0.0]), vec![0.0], DenseMatrix::from_rows(&[&[1.0]])).unwrap()
    }

    fn random_tangent(seed: u64, n: usize, d: usize) -> (TangentModel, Vec<f64>) {
        let mut r = CounterRng::new(seed);
        let w: Vec<f64> = (0..d).map(|_| r.normal()).collect();
        let f: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let j: Vec<f64> = (0..n * d).map(|_| r.normal()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let t = TangentModel::from_parts(ParamVector(w), f, DenseMatrix::from_row_major(n, d, j).unwrap()).unwrap();
        (t, y)
    }

    #[test]
    fn base_point_and_affinity() {
        let (t, _) = random_tangent(1, 6, 4);
        assert_eq!(t.predict(t.linearization_point()).unwrap(), t.base_predictions());
        let mut r = CounterRng::new(2);
        let v: Vec<f64> = (0..4).map(|_| r.normal()).collect();
        let hv = t.predict(&v).unwrap();
        let dv: Vec<f64> = v.iter().zip(t.linearization_point().iter()).map(|(a, b)| a - b).collect();
        let jdv = t.jacobian().matvec(&dv).unwrap();
        for i in 0..6 {
            assert!((hv[i] - t.base_predictions()[i] - jdv[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn linearising_a_linear_network_is_exact() {
        // A zero-hidden-weight "network" is not linear in w, so use an explicit
        // linear model f(w) = Xw with base point anywhere.
        let x = DenseMatrix::from_rows(&[&[1.0, 2.0], &[0.5, -1.0], &[3.0, 0.0]]);
        let w_t = ParamVector(vec![0.3, -0.7]);
        let f_wt = x.matvec(&w_t).unwrap();
        let t = TangentModel::from_parts(w_t, f_wt, x.clone()).unwrap();
        let v = [1.5, 2.5];
        let hv = t.predict(&v).unwrap();
        let xv = x.matvec(&v).unwrap();
        for (a, b) in hv.iter().zip(&xv) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn linearize_reproduces_network() {
        let arch = MlpArchitecture::new(3, 4).unwrap();
        let w = arch.init_params(3);
        let x = DenseMatrix::from_rows(&[&[0.1, 0.2, 0.3], &[1.0, -1.0, 0.5]]);
        let t = linearize(&arch, &w, &x).unwrap();
        assert_eq!(t.predict(&w).unwrap(), arch.forward(&w, &x).unwrap());
        assert_eq!(t.jacobian(), &arch.jacobian(&w, &x).unwrap());
    }

    #[test]
    fn ggn_examples() {
        let t = TangentModel::from_parts(ParamVector(vec![0.0; 3]), vec![0.0; 2], DenseMatrix::zeros(2, 3)).unwrap();
        let g = ggn(&t, Hyperparams::new(2.0, 5.0).unwrap(), 0.0).unwrap();
        assert!((g.log_det() - 3.0 * 2f64.ln()).abs() < 1e-14);

        let t = TangentModel::from_parts(ParamVector(vec![0.0; 2]), vec![0.0], DenseMatrix::from_rows(&[&[1.0, 2.0]])).unwrap();
        let g = ggn(&t, Hyperparams::new(1.0, 2.0).unwrap(), 0.0).unwrap();
        let h = g.reconstruct();
        let expect = DenseMatrix::from_rows(&[&[3.0, 4.0], &[4.0, 9.0]]);
        for (a, b) in h.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((g.log_det() - 11f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ggn_log_det_dominates_prior() {
        for seed in 0..10 {
            let (t, _) = random_tangent(seed, 5, 8);
            let m = Hyperparams::new(0.5, 2.0).unwrap();
            let g = ggn(&t, m, 0.0).unwrap();
            assert!(g.log_det() >= 8.0 * m.alpha.ln() - 1e-12);
        }
    }

    #[test]
    fn ggn_reconstructs_curvature() {
        let (t, _) = random_tangent(4, 7, 5);
        let m = Hyperparams::new(0.3, 1.9).unwrap();
        let g = ggn(&t, m, 0.0).unwrap();
        let mut expect = t.jacobian().gram();
        expect.scale(m.beta);
        expect.add_diagonal(m.alpha);
        let rec = g.reconstruct();
        let diff: f64 = rec.as_slice().iter().zip(expect.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-8 * expect.frobenius_norm());
    }

    #[test]
    fn gauss_newton_examples() {
        let t = TangentModel::from_parts(ParamVector(vec![0.0; 2]), vec![0.5, -0.2], DenseMatrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]])).unwrap();
        let m = Hyperparams::default();
        let g = ggn(&t, m, 0.0).unwrap();
        let v = gauss_newton_map(&t, m, &g, &[0.5, -0.2]).unwrap();
        assert!(v.iter().all(|&x| x.abs() < 1e-15));

        let t = scalar_model();
        let g = ggn(&t, m, 0.0).unwrap();
        let v = gauss_newton_map(&t, m, &g, &[2.0]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!((tangent_loss(&t, &v, &[2.0], m).unwrap() - 1.0).abs() < 1e-15);
    }

    /// Independent normal-equations oracle: (βJᵀJ + αI) v = βJᵀ(y − f + J w_t).
    fn normal_equations(t: &TangentModel, y: &[f64], m: Hyperparams) -> Vec<f64> {
        let j = t.jacobian();
        let (n, d) = (j.rows(), j.cols());
        let mut a = vec![vec![0.0; d + 1]; d];
        let jw = j.matvec(t.linearization_point()).unwrap();
        for p in 0..d {
            for q in 0..d {
                a[p][q] = m.beta * (0..n).map(|i| j.get(i, p) * j.get(i, q)).sum::<f64>();
            }
            a[p][p] += m.alpha;
            a[p][d] = m.beta * (0..n).map(|i| j.get(i, p) * (y[i] - t.base_predictions()[i] + jw[i])).sum::<f64>();
        }
        // Gaussian elimination with partial pivoting.
        for c in 0..d {
            let piv = (c..d).max_by(|&p, &q| a[p][c].abs().total_cmp(&a[q][c].abs())).unwrap();
            a.swap(c, piv);
            for r in c + 1..d {
                let f = a[r][c] / a[c][c];
                for k in c..=d {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        let mut x = vec![0.0; d];
        for r in (0..d).rev() {
            let s: f64 = (r + 1..d).map(|k| a[r][k] * x[k]).sum();
            x[r] = (a[r][d] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn gauss_newton_matches_normal_equations_and_is_stationary() {
        for seed in 0..20 {
            let (t, y) = random_tangent(50 + seed, 9, 6);
            let m = Hyperparams::new(0.2 + seed as f64 * 0.1, 1.5).unwrap();
            let g = ggn(&t, m, 0.0).unwrap();
            let v = gauss_newton_map(&t, m, &g, &y).unwrap();
            let oracle = normal_equations(&t, &y, m);
            for (a, b) in v.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
            }
            let res = t.loss_gradient(&v, &y, m).unwrap();
            assert!(norm_sq(&res).sqrt() / (1.0 + norm_sq(&v).sqrt()) < 1e-6);
            let lv = tangent_loss(&t, &v, &y, m).unwrap();
            let mut r = CounterRng::new(seed);
            for _ in 0..5 {
                let u: Vec<f64> = v.iter().map(|x| x + r.normal()).collect();
                assert!(lv <= tangent_loss(&t, &u, &y, m).unwrap());
            }
        }
    }

    #[test]
    fn tangent_loss_matches_network_loss_at_base_point() {
        let arch = MlpArchitecture::new(2, 3).unwrap();
        let w = arch.init_params(8);
        let x = DenseMatrix::from_rows(&[&[0.1, 0.2], &[1.0, -1.0], &[0.4, 0.4]]);
        let y = [0.3, -0.2, 1.1];
        let m = Hyperparams::new(0.9, 2.2).unwrap();
        let t = linearize(&arch, &w, &x).unwrap();
        assert_eq!(tangent_loss(&t, &w, &y, m).unwrap(), arch.loss(&w, &x, &y, m).unwrap());
        let gf = arch.loss_gradient(&w, &x, &y, m).unwrap();
        let gh = t.loss_gradient(&w, &y, m).unwrap();
        let scale = 1.0 + norm_sq(&gf).sqrt();
        for (a, b) in gf.iter().zip(gh.iter()) {
            assert!((a - b).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn tangent_loss_is_convex() {
        let (t, y) = random_tangent(77, 6, 5);
        let m = Hyperparams::new(0.5, 1.0).unwrap();
        let mut r = CounterRng::new(78);
        for _ in 0..20 {
            let a: Vec<f64> = (0..5).map(|_| 3.0 * r.normal()).collect();
            let b: Vec<f64> = (0..5).map(|_| 3.0 * r.normal()).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
            let la = tangent_loss(&t, &a, &y, m).unwrap();
            let lb = tangent_loss(&t, &b, &y, m).unwrap();
            assert!(tangent_loss(&t, &mid, &y, m).unwrap() <= 0.5 * (la + lb) + 1e-12);
        }
    }

    #[test]
    fn curvature_equals_ggn() {
        let (t, y) = random_tangent(90, 7, 6);
        let m = Hyperparams::new(0.8, 1.3).unwrap();
        let g = ggn(&t, m, 0.0).unwrap();
        let h = g.reconstruct();
        let eps = 1e-4;
        let v: Vec<f64> = t.linearization_point().to_vec();
        for q in 0..6 {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[q] += eps;
            vm[q] -= eps;
            let gp = t.loss_gradient(&vp, &y, m).unwrap();
            let gm = t.loss_gradient(&vm, &y, m).unwrap();
            for p in 0..6 {
                let fd = (gp[p] - gm[p]) / (2.0 * eps);
                assert!((fd - h.get(p, q)).abs() < 1e-7 * (1.0 + h.get(p, q).abs()));
            }
        }
    }

    #[test]
    fn dual_and_primal_forms_agree() {
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        // The dual form is only chosen for n < d; forcing it otherwise
        // cancels (d − n)/α against Tr(K⁻¹)/β, so the check is loose there.
        for (seed, n, d) in [(1, 3, 12), (2, 20, 40), (3, 40, 9), (4, 1, 1), (5, 7, 7)] {
            let (t, y) = random_tangent(seed, n, d);
            let tol = if n < d { 1.0 } else { 1e4 };
            for m in [Hyperparams { alpha: 0.01, beta: 100.0 }, Hyperparams { alpha: 3.0, beta: 0.5 }] {
                let p = ggn_with(&t, m, 0.0, GgnForm::Primal).unwrap();
                let q = ggn_with(&t, m, 0.0, GgnForm::Dual).unwrap();
                assert_eq!((p.form(), q.form()), (GgnForm::Primal, GgnForm::Dual));
                assert!(rel(q.log_det(), p.log_det()) < 1e-11 * tol, "log det {n}x{d}");
                assert!(rel(q.trace_inverse(), p.trace_inverse()) < 1e-10 * tol, "trace {n}x{d}");
                let b = t.loss_gradient(t.linearization_point(), &y, m).unwrap();
                let (xp, xq) = (p.solve(&b).unwrap(), q.solve(&b).unwrap());
                let scale = xp.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
                let err = xp.iter().zip(&xq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err / scale < 1e-9 * tol, "solve {n}x{d}: {err:e}");
                let qp = p.inverse_quadratic_form(&b).unwrap();
                assert!(rel(q.inverse_quadratic_form(&b).unwrap(), qp) < 1e-8 * tol);
                assert_eq!(ggn(&t, m, 0.0).unwrap().form(), if n < d { GgnForm::Dual } else { GgnForm::Primal });
            }
        }
    }

    #[test]
    fn dual_jitter_shifts_prior_precision() {
        let (t, _) = random_tangent(8, 4, 10);
        let m = Hyperparams { alpha: 0.5, beta: 2.0 };
        let shifted = ggn_with(&t, Hyperparams { alpha: 0.75, beta: 2.0 }, 0.0, GgnForm::Primal).unwrap();
        let q = ggn_with(&t, m, 0.25, GgnForm::Dual).unwrap();
        assert!((q.jitter() - 0.25).abs() < 1e-15);
        assert!((q.log_det() - shifted.log_det()).abs() < 1e-10);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        assert!(TangentModel::from_parts(ParamVector(vec![0.0; 2]), vec![0.0], DenseMatrix::zeros(2, 2)).is_err());
        let t = scalar_model();
        assert!(t.predict(&[1.0, 2.0]).is_err());
        assert!(tangent_loss(&t, &[1.0], &[1.0, 2.0], Hyperparams::default()).is_err());
    }
}
