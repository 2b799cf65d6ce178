mod common;

use approx::assert_abs_diff_eq;
use common::*;
use nalgebra::{DMatrix, DVector};
use netfl::error::Error;
use netfl::optim::{
    contraction, gd_run, iters_needed, optimal_rate, perturbed_bound, projected_gd_run, GdEngine, LRSchedule,
    StopReason, StopRule,
};
use netfl::{LocalLoss, QuadLoss};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// PSD quadratic `wᵀQw + qᵀw` with eigenvalues in `[lo, hi]`.
fn random_quad(d: usize, lo: f64, hi: f64, seed: u64) -> QuadLoss {
    let mut r = rng(seed);
    let a = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let u = qr.q();
    let eig = DVector::from_fn(d, |_, _| r.random_range(lo..=hi));
    let q = &u * DMatrix::from_diagonal(&eig) * u.transpose();
    let q = (&q + q.transpose()) * 0.5;
    let qv = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
    QuadLoss::new(q, qv, 0.0).unwrap()
}

/// Ratios `d_{k+1}/d_k` while `d_k` is above the round-off floor: below
/// about 1e-6 relative, per-step rounding moves ratios by more than 1e-9.
fn ratios_above_floor(dists: &[f64], oracle: &DVector<f64>) -> Vec<f64> {
    let floor = 1e-6 * oracle.norm().max(1.0);
    dists.windows(2).filter(|p| p[0] >= floor).map(|p| p[1] / p[0]).collect()
}

fn dists(t: &netfl::optim::Trace) -> Vec<f64> {
    t.records.iter().map(|r| r.dist.unwrap()).collect()
}

fn extremes(q: &QuadLoss) -> (f64, f64) {
    let e = q.q_mat().clone().symmetric_eigen().eigenvalues;
    (e.min(), e.max())
}

#[test]
fn gd_examples() {
    let sq = QuadLoss::scalar(1.0, 0.0, 0.0).unwrap();
    let (w, t) = gd_run(&sq, &dv(&[3.0]), LRSchedule::Constant { eta: 0.5 }, StopRule::iters(1)).unwrap();
    assert_eq!(w[0], 0.0);
    assert_eq!(t.iterations(), 1);

    let err = gd_run(&sq, &dv(&[1.0]), LRSchedule::Constant { eta: 1.2 }, StopRule::iters(10_000)).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }));

    let q = QuadLoss::new(DMatrix::from_diagonal(&dv(&[1.0, 2.0])), dv(&[-2.0, 4.0]), 0.0).unwrap();
    let oracle = q.minimizer().unwrap();
    let (eta, kappa) = optimal_rate(1.0, 2.0).unwrap();
    assert_abs_diff_eq!(eta, 1.0 / 3.0, epsilon = 1e-15);
    let stop = StopRule::iters(40).with_oracle(oracle.clone(), None);
    let (_, t) = gd_run(&q, &dv(&[5.0, 5.0]), LRSchedule::Constant { eta }, stop).unwrap();
    let ratios = ratios_above_floor(&dists(&t), &oracle);
    assert!(ratios.len() >= 10);
    assert!(ratios.iter().all(|&r| r <= kappa + 1e-9));
}

#[test]
fn projected_examples() {
    let q = random_quad(3, 0.5, 2.0, 1);
    let id = |w: &DVector<f64>| w.clone();
    let stop = StopRule::iters(25);
    let sched = LRSchedule::Constant { eta: 0.2 };
    let a = gd_run(&q, &dv(&[1.0, 2.0, 3.0]), sched, stop.clone()).unwrap();
    let b = projected_gd_run(&q, &id, &dv(&[1.0, 2.0, 3.0]), sched, stop).unwrap();
    assert_eq!(a, b);

    // Two scalar blocks (w−0)², (w−2)² stacked, consensus projector.
    let pooled = QuadLoss::new(DMatrix::identity(2, 2), dv(&[0.0, -4.0]), 4.0).unwrap();
    let cons = |w: &DVector<f64>| DVector::from_element(2, w.mean());
    let (w, _) = projected_gd_run(&pooled, &cons, &dv(&[7.0, -3.0]), LRSchedule::Constant { eta: 0.25 }, StopRule::iters(200)).unwrap();
    assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-12);

    let box01 = |w: &DVector<f64>| w.map(|x| x.clamp(0.0, 1.0));
    let f = QuadLoss::scalar(1.0, -6.0, 9.0).unwrap();
    let (w, _) = projected_gd_run(&f, &box01, &dv(&[0.2]), LRSchedule::Constant { eta: 0.1 }, StopRule::iters(100)).unwrap();
    assert_eq!(w[0], 1.0);
}

#[test]
fn rate_examples() {
    assert_eq!(contraction(0.5, 1.0, 1.0), 0.0);
    assert_abs_diff_eq!(contraction(1.0 / 3.0, 1.0, 2.0), 1.0 / 3.0, epsilon = 1e-15);
    assert_eq!(contraction(0.3, 0.0, 2.0), 1.0);
    let (eta, kappa) = optimal_rate(2.0, 2.0).unwrap();
    assert_eq!((eta, kappa), (0.25, 0.0));
    let (eta, kappa) = optimal_rate(1.0, 9.0).unwrap();
    assert_abs_diff_eq!(eta, 0.1, epsilon = 1e-15);
    assert_abs_diff_eq!(kappa, 0.8, epsilon = 1e-15);
    assert!(optimal_rate(0.0, 1.0).is_err());
    for (l1, ld) in [(0.3, 0.7), (1.0, 50.0), (2.0, 2.5)] {
        let (eta, kappa) = optimal_rate(l1, ld).unwrap();
        assert_abs_diff_eq!(contraction(eta, l1, ld), kappa, epsilon = 1e-14);
    }
}

#[test]
fn iters_needed_examples() {
    assert_eq!(iters_needed(0.5, 1.0, 0.125).unwrap(), 3);
    assert_eq!(iters_needed(0.5, 2.0, 2.0).unwrap(), 0);
    assert_eq!(iters_needed(0.1, 1.0, 1e-6).unwrap(), 6);
    assert!(iters_needed(1.0, 1.0, 0.5).is_err());
}

#[test]
fn perturbed_bound_examples() {
    assert_abs_diff_eq!(perturbed_bound(0.5, 2.0, &[0.0; 4]), 2.0 * 0.5f64.powi(4), epsilon = 1e-15);
    assert_abs_diff_eq!(perturbed_bound(0.5, 1.0, &[0.1]), 0.55, epsilon = 1e-15);
    let (kappa, eps) = (0.6, 0.2);
    assert_abs_diff_eq!(perturbed_bound(kappa, 1.0, &[eps; 50]), eps * kappa / (1.0 - kappa), epsilon = 1e-6);
}

#[test]
fn diminishing_schedule_conditions() {
    let s = LRSchedule::Diminishing { c: 0.7 };
    assert!(s.is_diminishing());
    assert!(!LRSchedule::Constant { eta: 0.1 }.is_diminishing());
    // Limit 0, sum grows like c·ln K, squared sum stays below c²π²/6.
    assert!(s.rate(1_000_000) < 1e-6);
    let k = 100_000;
    let sum: f64 = (1..=k).map(|i| s.rate(i)).sum();
    let sq: f64 = (1..=k).map(|i| s.rate(i).powi(2)).sum();
    assert!(sum >= 0.7 * (k as f64).ln());
    assert!(sq <= 0.49 * std::f64::consts::PI.powi(2) / 6.0);
    assert!(LRSchedule::Constant { eta: 0.0 }.validate().is_err());
    assert!(LRSchedule::Diminishing { c: -1.0 }.validate().is_err());
}

#[test]
fn stop_rules() {
    let q = random_quad(2, 1.0, 1.0, 3);
    assert!(StopRule::iters(5).with_obj_tol(-1.0).validate().is_err());
    let mut no_oracle = StopRule::iters(5);
    no_oracle.dist_tol = Some(1e-3);
    assert!(no_oracle.validate().is_err());
    let (_, t) = gd_run(&q, &dv(&[4.0, 4.0]), LRSchedule::Constant { eta: 0.1 }, StopRule::iters(10_000).with_obj_tol(1e-12)).unwrap();
    assert_eq!(t.reason, StopReason::ObjTol);
    assert!(t.records.windows(2).all(|p| p[1].k == p[0].k + 1));
    let stop = StopRule::iters(10_000).with_oracle(q.minimizer().unwrap(), Some(1e-9));
    let (_, t) = gd_run(&q, &dv(&[4.0, 4.0]), LRSchedule::Constant { eta: 0.1 }, stop).unwrap();
    assert_eq!(t.reason, StopReason::DistTol);
    assert!(t.records.last().unwrap().dist.unwrap() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_rate_contracts(d in 1usize..6, lo in 0.05f64..2.0, spread in 1.0f64..20.0, seed in any::<u64>()) {
        let q = random_quad(d, lo, lo * spread, seed);
        let (l1, ld) = extremes(&q);
        let (eta, kappa) = optimal_rate(l1, ld).unwrap();
        let oracle = q.minimizer().unwrap();
        let stop = StopRule::iters(60).with_oracle(oracle.clone(), None);
        let (_, t) = gd_run(&q, &DVector::from_element(d, 3.0), LRSchedule::Constant { eta }, stop).unwrap();
        for r in ratios_above_floor(&dists(&t), &oracle) {
            prop_assert!(r <= kappa + 1e-9, "ratio {} > {}", r, kappa);
        }
    }

    #[test]
    fn singular_quadratic_objective_is_monotone(d in 2usize..5, seed in any::<u64>(), frac in 0.05f64..0.99) {
        // Rank-deficient Q: zero out one eigen direction, keep q in the range.
        let mut r = rng(seed);
        let a = DMatrix::from_fn(d, d - 1, |_, _| r.random_range(-1.0..1.0));
        let q_mat = &a * a.transpose();
        let q_mat = (&q_mat + q_mat.transpose()) * 0.5;
        let z = DVector::from_fn(d - 1, |_, _| r.random_range(-1.0..1.0));
        let loss = QuadLoss::new(q_mat.clone(), &a * z, 0.0).unwrap();
        let ld = q_mat.symmetric_eigen().eigenvalues.max();
        prop_assume!(ld > 1e-6);
        let eta = frac / ld;
        let (_, t) = gd_run(&loss, &DVector::from_element(d, 2.0), LRSchedule::Constant { eta }, StopRule::iters(200)).unwrap();
        for p in t.records.windows(2) {
            prop_assert!(p[1].objective <= p[0].objective + 1e-12);
        }
    }

    #[test]
    fn projected_gd_contracts_on_affine_subspace(n in 2usize..5, lo in 0.2f64..1.0, spread in 1.0f64..8.0, seed in any::<u64>()) {
        // Consensus subspace of n scalar blocks; oracle from the reduced problem.
        let q = random_quad(n, lo, lo * spread, seed);
        let (l1, ld) = extremes(&q);
        let (eta, kappa) = optimal_rate(l1, ld).unwrap();
        let ones = DVector::from_element(n, 1.0);
        let z = -ones.dot(q.q_vec()) / (2.0 * ones.dot(&(q.q_mat() * &ones)));
        let oracle = &ones * z;
        let proj = |w: &DVector<f64>| DVector::from_element(w.len(), w.mean());
        let stop = StopRule::iters(60).with_oracle(oracle.clone(), None);
        let (_, t) = projected_gd_run(&q, &proj, &DVector::from_fn(n, |i, _| i as f64), LRSchedule::Constant { eta }, stop).unwrap();
        for r in ratios_above_floor(&dists(&t), &oracle) {
            prop_assert!(r <= kappa + 1e-9);
        }
    }
}

#[test]
fn perturbed_gd_respects_bound() {
    for seed in 0..100u64 {
        let d = 1 + (seed % 4) as usize;
        let q = random_quad(d, 0.3, 3.0, seed);
        let (l1, ld) = extremes(&q);
        let (eta, kappa) = optimal_rate(l1, ld).unwrap();
        let oracle = q.minimizer().unwrap();
        let w0 = DVector::from_element(d, -2.0);
        let r0 = (&w0 - &oracle).norm();
        let mut r = rng(seed + 1000);
        let mut norms = Vec::new();
        let stop = StopRule::iters(40).with_oracle(oracle, None);
        let (_, t) = GdEngine::new(&q, LRSchedule::Constant { eta }, stop)
            .unwrap()
            .run_perturbed(&w0, |_, _| {
                let e = DVector::from_fn(d, |_, _| 0.05 * r.sample::<f64, _>(StandardNormal));
                norms.push(e.norm());
                Some(e)
            })
            .unwrap();
        for rec in &t.records {
            let bound = perturbed_bound(kappa, r0, &norms[..rec.k]);
            assert!(rec.dist.unwrap() <= bound * (1.0 + 1e-9) + 1e-12, "seed {seed} k {}", rec.k);
        }
        assert_eq!(q.dim(), d);
    }
}

