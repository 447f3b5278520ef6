//! Public-API invariants, checked against closed forms on random instances.

use online_laplace::data::{make_split, synthetic_teacher, SplitSpec, Standardizer};
use online_laplace::evidence::{elbo, exact_marginal_oracle, laplace_evidence_lf, tangent_evidence_lh};
use online_laplace::hyper::{fixed_point_residual, mackay_update};
use online_laplace::rng::CounterRng;
use online_laplace::tangent::{gauss_newton_map, ggn, ggn_with, GgnForm};
use online_laplace::train::{run_online, Procedure, TrainConfig, TrainData};
use online_laplace::{DenseMatrix, Hyperparams, MlpArchitecture, ParamVector, TangentModel};
use proptest::prelude::*;

fn tangent(seed: u64, n: usize, d: usize) -> (TangentModel, Vec<f64>) {
    let mut r = CounterRng::new(seed);
    let j = DenseMatrix::from_row_major(n, d, (0..n * d).map(|_| r.normal()).collect()).unwrap();
    let w: Vec<f64> = (0..d).map(|_| r.normal()).collect();
    let f: Vec<f64> = (0..n).map(|_| r.normal()).collect();
    let y: Vec<f64> = (0..n).map(|_| 2.0 * r.normal()).collect();
    (TangentModel::from_parts(ParamVector(w), f, j).unwrap(), y)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tangent_evidence_matches_gaussian_marginal(
        seed in any::<u64>(), n in 1usize..30, d in 1usize..30,
        la in -4.0f64..4.0, lb in -4.0f64..4.0,
    ) {
        let (t, y) = tangent(seed, n, d);
        let m = Hyperparams::new(la.exp(), lb.exp()).unwrap();
        let g = ggn(&t, m, 0.0).unwrap();
        let lh = tangent_evidence_lh(&t, &g, &y, m).unwrap().total;
        let oracle = exact_marginal_oracle(&t, &y, m).unwrap();
        prop_assert!(rel(lh, oracle) < 1e-8, "Lh {lh} vs oracle {oracle}");
    }

    #[test]
    fn laplace_evidence_never_exceeds_tangent_evidence(
        seed in any::<u64>(), n in 1usize..30, d in 1usize..30,
        la in -4.0f64..4.0, lb in -4.0f64..4.0,
    ) {
        let (t, y) = tangent(seed, n, d);
        let m = Hyperparams::new(la.exp(), lb.exp()).unwrap();
        let g = ggn(&t, m, 0.0).unwrap();
        let lf = laplace_evidence_lf(&t, &g, &y, m).unwrap().total;
        let lh = tangent_evidence_lh(&t, &g, &y, m).unwrap().total;
        prop_assert!(lf <= lh + 1e-9 * (1.0 + lh.abs()), "Lf {lf} > Lh {lh}");
    }

    #[test]
    fn elbo_is_tight_at_the_tangent_map(seed in any::<u64>(), n in 1usize..30, d in 1usize..30) {
        let (t, y) = tangent(seed, n, d);
        let m = Hyperparams::new(0.7, 3.0).unwrap();
        let g = ggn(&t, m, 0.0).unwrap();
        let v = gauss_newton_map(&t, m, &g, &y).unwrap();
        let at_map = elbo(&t, &g, &v, &y, m).unwrap().total;
        let lh = tangent_evidence_lh(&t, &g, &y, m).unwrap().total;
        prop_assert!(rel(at_map, lh) < 1e-9);
        let at_wt = elbo(&t, &g, t.linearization_point(), &y, m).unwrap().total;
        prop_assert!(at_wt <= at_map + 1e-9 * (1.0 + lh.abs()));
    }

    #[test]
    fn primal_and_dual_ggn_agree(seed in any::<u64>(), n in 1usize..12, extra in 1usize..30) {
        let d = n + extra;
        let (t, _) = tangent(seed, n, d);
        let m = Hyperparams::new(0.5, 4.0).unwrap();
        let p = ggn_with(&t, m, 0.0, GgnForm::Primal).unwrap();
        let q = ggn_with(&t, m, 0.0, GgnForm::Dual).unwrap();
        prop_assert!(rel(q.log_det(), p.log_det()) < 1e-9);
        prop_assert!(rel(q.trace_inverse(), p.trace_inverse()) < 1e-9);
        let b: Vec<f64> = (0..d).map(|i| (i as f64).sin()).collect();
        let (xp, xq) = (p.solve(&b).unwrap(), q.solve(&b).unwrap());
        for (a, c) in xp.iter().zip(&xq) {
            prop_assert!((a - c).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn split_partitions_the_rows(seed in any::<u64>(), split in 0u32..10, val in any::<bool>()) {
        let ds = synthetic_teacher(60, 3, 4, 0.1, 5);
        let s = make_split(&ds, &SplitSpec::new(seed, split, val)).unwrap();
        let mut all: Vec<usize> = s.train.indices.iter().chain(&s.test.indices).copied().collect();
        if let Some(v) = &s.val {
            all.extend(&v.indices);
        }
        all.sort_unstable();
        prop_assert_eq!(all, (0..60).collect::<Vec<_>>());
        prop_assert_eq!(s.val.is_some(), val);
    }

    #[test]
    fn standardizer_round_trips_targets(ys in prop::collection::vec(-1e3f64..1e3, 2..40)) {
        let x = DenseMatrix::from_row_major(ys.len(), 1, ys.iter().map(|v| v * 0.5).collect()).unwrap();
        let s = Standardizer::fit(&x, &ys);
        let back = s.inverse_y(&s.transform_y(&ys));
        for (a, b) in ys.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn iterated_mackay_reaches_a_stationary_point_of_the_tangent_evidence() {
    let (t, y) = tangent(11, 40, 6);
    let mut m = Hyperparams::default();
    for _ in 0..500 {
        let g = ggn(&t, m, 0.0).unwrap();
        let v = gauss_newton_map(&t, m, &g, &y).unwrap();
        let yh = t.predict(&v).unwrap();
        if fixed_point_residual(&g, &v, &y, &yh, m).unwrap() < 1e-10 {
            break;
        }
        m = mackay_update(&g, &v, &y, &yh, m).unwrap().hyper;
    }
    let ev = |a: f64, b: f64| exact_marginal_oracle(&t, &y, Hyperparams::new(a.exp(), b.exp()).unwrap()).unwrap();
    let (la, lb, h) = (m.alpha.ln(), m.beta.ln(), 1e-4);
    assert!(((ev(la + h, lb) - ev(la - h, lb)) / (2.0 * h)).abs() < 1e-4);
    assert!(((ev(la, lb + h) - ev(la, lb - h)) / (2.0 * h)).abs() < 1e-4);
}

#[test]
fn online_training_is_deterministic_and_tracks_the_tangent_map() {
    let ds = synthetic_teacher(80, 3, 6, 0.1, 2);
    let split = make_split(&ds, &SplitSpec::new(0, 0, false)).unwrap();
    let arch = MlpArchitecture::new(3, 8).unwrap();
    for p in [Procedure::Ol, Procedure::Lm] {
        let mut cfg = TrainConfig::new(p, 1500);
        cfg.record_every = 500;
        let a = run_online(&arch, TrainData::from_split(&split), &cfg).unwrap();
        let b = run_online(&arch, TrainData::from_split(&split), &cfg).unwrap();
        assert_eq!(a.params.0, b.params.0, "{p:?} is not reproducible");
        let rel: Vec<f64> = a.trace.iter().map(|r| r.rel_map_distance.expect("online steps record it")).collect();
        assert!(rel.last() < rel.first(), "{p:?}: {rel:?}");
    }
}
