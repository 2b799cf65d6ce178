mod common;

use approx::assert_abs_diff_eq;
use common::*;
use nalgebra::{DMatrix, DVector};
use netfl::algorithms::{fedrelax_ops, NeighborView};
use netfl::graph::EmpGraph;
use netfl::gtvmin::GTVMinProblem;
use netfl::trust::{
    cross_cov_estimate, dp_noise, dp_test_bound, gaussian_sigma, geometric_median, is_projector, poison_dataset,
    private_feature_map, AttackKind, AttackSpec, DPMechanism, Replacement, RobustAgg,
};
use netfl::{LocalDataset, QuadLoss};
use proptest::prelude::*;
use rand::Rng;

fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
    v.iter().map(|&x| dv(&[x])).collect()
}

fn label_attack(delta: f64, fraction: f64, seed: u64) -> AttackSpec {
    AttackSpec { kind: AttackKind::LabelPoison { delta, fraction }, victims: vec![0], seed }
}

/// `‖Σ_{x ≠ y} (x − y)/‖x − y‖‖` minus the number of points at `y`.
fn residual_oracle(points: &[DVector<f64>], y: &DVector<f64>) -> f64 {
    let mut pull = DVector::zeros(y.len());
    let mut own = 0.0;
    for x in points {
        let d = (x - y).norm();
        if d <= 1e-10 {
            own += 1.0;
        } else {
            pull += (x - y) / d;
        }
    }
    (pull.norm() - own).max(0.0)
}

fn sum_dist(points: &[DVector<f64>], y: &DVector<f64>) -> f64 {
    points.iter().map(|x| (x - y).norm()).sum()
}

#[test]
fn aggregate_examples() {
    let t = RobustAgg::Trimmed { trim: 1 }.aggregate(&scalars(&[1.0, 2.0, 3.0, 100.0]), &[1.0; 4]).unwrap();
    assert_abs_diff_eq!(t[0], 2.5, epsilon = 1e-15);
    let c = RobustAgg::Clipped { lower: 0.0, upper: 10.0 }.aggregate(&scalars(&[-5.0, 3.0, 20.0]), &[1.0; 3]).unwrap();
    assert_abs_diff_eq!(c[0], 13.0 / 3.0, epsilon = 1e-15);
    let g = RobustAgg::GeoMedian { tol: 1e-9, max_iter: 100 }.aggregate(&scalars(&[0.0, 0.0, 10.0]), &[1.0; 3]).unwrap();
    assert_eq!(g[0], 0.0);
    assert!(RobustAgg::Trimmed { trim: 2 }.aggregate(&scalars(&[1.0, 2.0, 3.0, 4.0]), &[1.0; 4]).is_err());
    assert!(RobustAgg::Mean.aggregate(&[], &[]).is_err());
    assert!(RobustAgg::Clipped { lower: 1.0, upper: 0.0 }.validate().is_err());
}

#[test]
fn mean_aggregate_is_the_relaxation_average() {
    let g = EmpGraph::new(4, [(0, 1, 0.5), (0, 2, 2.0), (0, 3, 1.25)]).unwrap();
    let losses = vec![QuadLoss::zero(3), QuadLoss::zero(3), QuadLoss::zero(3), QuadLoss::zero(3)];
    let p = GTVMinProblem::quadratic(g.clone(), losses, 1.0).unwrap();
    let ops = fedrelax_ops(&p, RobustAgg::Mean).unwrap();
    let mut r = rng(4);
    let blocks: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_fn(3, |_, _| r.random_range(-5.0..5.0))).collect();
    let views: Vec<NeighborView> = g.neighbors(0).iter().zip(&blocks).map(|(&(j, a), b)| NeighborView { id: j, weight: a, block: b }).collect();
    let weights: Vec<f64> = g.neighbors(0).iter().map(|&(_, a)| a).collect();
    let avg = RobustAgg::Mean.aggregate(&blocks, &weights).unwrap();
    let out = ops[0].update(0, &DVector::zeros(3), &views, 0).unwrap();
    assert!((out - &avg).amax() <= 1e-15 * avg.amax().max(1.0));

    // Nothing to clip or trim: same average.
    let clipped = RobustAgg::Clipped { lower: -10.0, upper: 10.0 }.aggregate(&blocks, &weights).unwrap();
    assert_eq!(clipped, avg);
    let trimmed = RobustAgg::Trimmed { trim: 0 }.aggregate(&blocks, &weights).unwrap();
    assert!((trimmed - &avg).amax() <= 1e-14);
}

#[test]
fn geomedian_examples() {
    let same = vec![dv(&[1.5, -2.0]); 4];
    let g = geometric_median(&same, 1e-9, 100).unwrap();
    assert_eq!((g.point.clone(), g.residual), (dv(&[1.5, -2.0]), 0.0));

    let maj = vec![dv(&[0.0, 0.0]), dv(&[0.0, 0.0]), dv(&[10.0, 0.0])];
    assert_eq!(geometric_median(&maj, 1e-9, 100).unwrap().point, dv(&[0.0, 0.0]));

    let h = 3f64.sqrt() / 2.0;
    let tri = vec![dv(&[0.0, 0.0]), dv(&[1.0, 0.0]), dv(&[0.5, h])];
    let g = geometric_median(&tri, 1e-9, 10_000).unwrap();
    assert!(g.converged && g.residual <= 1e-6);
    assert!((g.point - dv(&[0.5, h / 3.0])).norm() <= 1e-6);

    assert!(geometric_median(&[], 1e-9, 10).is_err());
    let skew = vec![dv(&[0.0, 0.0]), dv(&[4.0, 0.0]), dv(&[0.3, 1.0])];
    let stuck = geometric_median(&skew, 0.0, 1).unwrap();
    assert!(!stuck.converged);
}

#[test]
fn dp_examples() {
    assert_abs_diff_eq!(gaussian_sigma(1.0, 1.0, 1e-5).unwrap(), (2.0 * 125_000f64.ln()).sqrt(), epsilon = 1e-12);
    assert_abs_diff_eq!(gaussian_sigma(1.0, 1.0, 1e-5).unwrap(), 4.8446, epsilon = 1e-3);
    assert_eq!(gaussian_sigma(0.0, 1.0, 1e-5).unwrap(), 0.0);
    assert_eq!(gaussian_sigma(2.0, 0.5, 0.01).unwrap(), 2.0 * gaussian_sigma(1.0, 0.5, 0.01).unwrap());
    assert!(gaussian_sigma(1.0, 0.0, 0.1).is_err());
    assert!(gaussian_sigma(1.0, 1.0, 1.0).is_err());

    let b = dv(&[1.0, -2.0, 3.0]);
    assert_eq!(dp_noise(&b, &DPMechanism::gaussian(0.0, 3), &[1, 2]), b);
    let m = DPMechanism::laplace(0.3, 9);
    assert_eq!(dp_noise(&b, &m, &[4]), dp_noise(&b, &m, &[4]));
    assert_ne!(dp_noise(&b, &m, &[4]), dp_noise(&b, &m, &[5]));

    assert!(dp_test_bound(0.0, 0.0, 0.5, 0.5, 0.0));
    assert!(!dp_test_bound(2.0, 0.5, 0.0, 0.0, 0.0));
    assert!(dp_test_bound(2.0, 1.0, 0.0, 0.0, 0.0));
}

#[test]
fn noise_moments_match_clt() {
    let n = 100_000u64;
    for (mech, var) in [(DPMechanism::gaussian(1.7, 1), 1.7f64 * 1.7), (DPMechanism::laplace(0.8, 2), 2.0 * 0.8 * 0.8)] {
        let draws: Vec<f64> = (0..n).map(|k| mech.sample(1, &[k])[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = var.sqrt();
        assert!(mean.abs() <= 3.0 * sd / (n as f64).sqrt(), "{mean}");
        let v = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v - var).abs() <= 0.03 * var, "{v} vs {var}");
    }
}

/// Threshold test between neighboring query values 0 and Δ = 1.
fn membership_errors(sigma: f64, runs: u64, seed: u64) -> (f64, f64) {
    let mech = DPMechanism::gaussian(sigma, seed);
    let mut false_alarm = 0;
    let mut miss = 0;
    for k in 0..runs {
        if dp_noise(&dv(&[0.0]), &mech, &[0, k])[0] > 0.5 {
            false_alarm += 1;
        }
        if dp_noise(&dv(&[1.0]), &mech, &[1, k])[0] <= 0.5 {
            miss += 1;
        }
    }
    (false_alarm as f64 / runs as f64, miss as f64 / runs as f64)
}

#[test]
fn calibrated_mechanism_passes_membership_test() {
    for (eps, delta) in [(1.0, 1e-5), (0.5, 1e-3), (0.9, 0.05)] {
        let sigma = gaussian_sigma(1.0, eps, delta).unwrap();
        let (p1, p2) = membership_errors(sigma, 10_000, 7);
        assert!(dp_test_bound(eps, delta, p1, p2, 0.02), "eps {eps}: {p1} {p2}");
    }
    // Too little noise: the test detects membership.
    let (p1, p2) = membership_errors(0.05, 10_000, 7);
    assert!(!dp_test_bound(1.0, 1e-5, p1, p2, 0.02));
}

#[test]
fn feature_map_examples() {
    let f = private_feature_map(&dv(&[1.0, 0.0])).unwrap();
    assert_eq!(f, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
    assert!(private_feature_map(&dv(&[0.0, 0.0])).is_err());
    let mut r = rng(5);
    for _ in 0..50 {
        let d = r.random_range(1..8);
        let c = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
        let f = private_feature_map(&c).unwrap();
        assert!((&f * &c).amax() <= 1e-10);
        assert!((&f * &f - &f).amax() <= 1e-12);
        assert!(is_projector(&f, 1e-10).unwrap());
        let x = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
        let want = &x - &c * (c.dot(&x) / c.norm_squared());
        assert!((&f * &x - want).amax() <= 1e-12);
    }
    assert!(!is_projector(&DMatrix::from_element(2, 2, 1.0), 1e-10).unwrap());
}

#[test]
fn cross_cov_examples() {
    let mut r = rng(8);
    let x = DMatrix::from_fn(20, 3, |_, _| r.random_range(-1.0..1.0));
    let c = cross_cov_estimate(&x, &DVector::from_element(20, 4.0)).unwrap();
    assert!(c.amax() <= 1e-14);

    let s = DVector::from_fn(20, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let xs = DMatrix::from_fn(20, 2, |i, j| if j == 0 { s[i] } else { x[(i, 1)] });
    let c = cross_cov_estimate(&xs, &s).unwrap();
    assert_abs_diff_eq!(c[0], 1.0, epsilon = 1e-14);

    assert_eq!(cross_cov_estimate(&DMatrix::from_row_slice(1, 2, &[3.0, 4.0]), &dv(&[2.0])).unwrap(), DVector::zeros(2));

    // Loop oracle.
    let s = DVector::from_fn(20, |_, _| r.random_range(-2.0..2.0));
    let c = cross_cov_estimate(&x, &s).unwrap();
    for j in 0..3 {
        let mean: f64 = (0..20).map(|i| x[(i, j)]).sum::<f64>() / 20.0;
        let want: f64 = (0..20).map(|i| (x[(i, j)] - mean) * s[i]).sum::<f64>() / 20.0;
        assert_abs_diff_eq!(c[j], want, epsilon = 1e-14);
    }
}

#[test]
fn poison_examples() {
    let ds = LocalDataset::from_rows(&[vec![1.0], vec![1.0]], &[0.0, 2.0]).unwrap();
    assert_eq!(poison_dataset(&ds, &label_attack(5.0, 0.0, 1), 0).unwrap(), ds);
    assert_eq!(poison_dataset(&ds, &label_attack(5.0, 1.0, 1), 0).unwrap().y().as_slice(), &[5.0, 7.0]);
    assert!(poison_dataset(&ds, &label_attack(5.0, 1.5, 1), 0).is_err());
    assert_eq!(ds.y().as_slice(), &[0.0, 2.0]);

    let big = LocalDataset::from_rows(&(0..40).map(|i| vec![i as f64, 1.0]).collect::<Vec<_>>(), &vec![0.0; 40]).unwrap();
    let spec = label_attack(1.0, 0.3, 11);
    let a = poison_dataset(&big, &spec, 2).unwrap();
    assert_eq!(a, poison_dataset(&big, &spec, 2).unwrap());
    assert_eq!(a.y().iter().filter(|&&v| v == 1.0).count(), 12);

    let feat = AttackSpec { kind: AttackKind::FeaturePoison { delta_x: vec![0.5, -1.0], fraction: 0.25 }, victims: vec![0], seed: 3 };
    let f = poison_dataset(&big, &feat, 0).unwrap();
    let changed: Vec<usize> = (0..40).filter(|&i| f.row(i) != big.row(i)).collect();
    assert_eq!(changed.len(), 10);
    for i in changed {
        assert_eq!(f.row(i), big.row(i) + dv(&[0.5, -1.0]));
    }
    assert_eq!(f.y(), big.y());

    let door = AttackSpec {
        kind: AttackKind::Backdoor { trigger_feature: 1, trigger_value: 9.0, target_label: -3.0, fraction: 0.5 },
        victims: vec![0],
        seed: 1,
    };
    let b = poison_dataset(&big, &door, 0).unwrap();
    assert_eq!((0..40).filter(|&i| b.row(i)[1] == 9.0 && b.y()[i] == -3.0).count(), 20);

    let model = AttackSpec { kind: AttackKind::ModelPoison { rule: Replacement::Scale { factor: -2.0 } }, victims: vec![1], seed: 0 };
    assert_eq!(poison_dataset(&big, &model, 1).unwrap(), big);
    assert_eq!(model.outgoing(1, &dv(&[1.0, 2.0])), Some(dv(&[-2.0, -4.0])));
    assert_eq!(model.outgoing(0, &dv(&[1.0, 2.0])), None);
    let dos = AttackSpec { kind: AttackKind::Dos { magnitude: 1e6 }, victims: vec![0], seed: 0 };
    assert_eq!(dos.outgoing(0, &dv(&[1.0, 2.0])), Some(dv(&[1e6, 1e6])));
    assert!(AttackSpec { victims: vec![5], ..dos }.validate(3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn trimmed_mean_has_bounded_influence(
        honest in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 3..10),
        bad in prop::collection::vec(prop::collection::vec(prop_oneof![Just(1e6), Just(-1e6), -1e6f64..1e6], 3), 0..4),
        extra in 0usize..2,
    ) {
        let trim = bad.len() + extra;
        prop_assume!(honest.len() + bad.len() > 2 * trim);
        let blocks: Vec<DVector<f64>> = honest.iter().chain(&bad).map(|v| DVector::from_column_slice(v)).collect();
        let out = RobustAgg::Trimmed { trim }.aggregate(&blocks, &vec![1.0; blocks.len()]).unwrap();
        for c in 0..3 {
            let lo = honest.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
            let hi = honest.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out[c] >= lo - 1e-9 && out[c] <= hi + 1e-9);
        }
    }

    #[test]
    fn geomedian_residual_condition(pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..8), dup in 0usize..3) {
        let mut points: Vec<DVector<f64>> = pts.iter().map(|v| DVector::from_column_slice(v)).collect();
        for k in 0..dup.min(points.len()) {
            let p = points[k].clone();
            points.push(p);
        }
        let g = geometric_median(&points, 1e-8, 50_000).unwrap();
        prop_assert!(g.converged);
        prop_assert!(residual_oracle(&points, &g.point) <= 1e-6);
        let f = sum_dist(&points, &g.point);
        for e in [[1e-3, 0.0], [0.0, 1e-3], [-1e-3, 0.0], [0.0, -1e-3]] {
            prop_assert!(f <= sum_dist(&points, &(&g.point + dv(&e))) + 1e-9);
        }
    }

    #[test]
    fn clipped_output_stays_in_range(vals in prop::collection::vec(-100.0f64..100.0, 1..10), lo in -5.0f64..0.0, width in 0.0f64..10.0) {
        let blocks = scalars(&vals);
        let w: Vec<f64> = (0..vals.len()).map(|i| 1.0 + i as f64).collect();
        let out = RobustAgg::Clipped { lower: lo, upper: lo + width }.aggregate(&blocks, &w).unwrap();
        prop_assert!(out[0] >= lo - 1e-12 && out[0] <= lo + width + 1e-12);
    }
}
