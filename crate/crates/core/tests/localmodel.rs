mod common;

use approx::assert_abs_diff_eq;
use common::*;
use nalgebra::{DMatrix, DVector};
use netfl::localmodel::{eval, generate_local, generate_local_with_noise, linreg_error_bound};
use netfl::{LocalDataset, LocalLoss, QuadLoss};
use proptest::prelude::*;
use rand::Rng;

fn random_dataset(m: usize, d: usize, seed: u64) -> LocalDataset {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(m, d, |_, _| r.random_range(-2.0..2.0));
    let y = DVector::from_fn(m, |_, _| r.random_range(-5.0..5.0));
    LocalDataset::new(x, y).unwrap()
}

/// `(1/m)‖y − Xw‖² + ridge‖w‖²` evaluated directly.
fn direct_loss(ds: &LocalDataset, ridge: f64, w: &DVector<f64>) -> f64 {
    let data = if ds.is_empty() {
        0.0
    } else {
        (ds.y() - ds.x() * w).norm_squared() / ds.len() as f64
    };
    data + ridge * w.norm_squared()
}

#[test]
fn from_dataset_examples() {
    let l = QuadLoss::from_dataset(&LocalDataset::from_rows(&[vec![1.0]], &[2.0]).unwrap(), 0.0).unwrap();
    assert_eq!((l.q_mat()[(0, 0)], l.q_vec()[0], l.offset()), (1.0, -4.0, 4.0));
    let l = QuadLoss::from_dataset(&LocalDataset::from_rows(&[vec![1.0], vec![1.0]], &[0.0, 2.0]).unwrap(), 0.0).unwrap();
    assert_eq!((l.q_mat()[(0, 0)], l.q_vec()[0], l.offset()), (1.0, -2.0, 2.0));
    assert_abs_diff_eq!(l.minimizer().unwrap()[0], 1.0, epsilon = 1e-14);
    let l = QuadLoss::from_dataset(&LocalDataset::empty(2), 0.5).unwrap();
    assert_eq!(l.q_mat(), &(DMatrix::identity(2, 2) * 0.5));
    assert_eq!(l.q_vec(), &DVector::zeros(2));
    assert_eq!(l.offset(), 0.0);
    let z = QuadLoss::from_dataset(&LocalDataset::empty(2), 0.0).unwrap();
    assert_eq!(z.value(&dv(&[3.0, 4.0])), 0.0);
}

#[test]
fn generator_examples() {
    let w = dv(&[1.0, -2.0]);
    let ds = generate_local(&w, 30, 0.0, 7).unwrap();
    assert_eq!(ds.y(), &(ds.x() * &w));
    assert_eq!(ds, generate_local(&w, 30, 0.0, 7).unwrap());
    let big = generate_local(&dv(&[1.0]), 10_000, 0.0, 1).unwrap();
    let w_hat = QuadLoss::from_dataset(&big, 0.0).unwrap().minimizer().unwrap();
    assert_abs_diff_eq!(w_hat[0], 1.0, epsilon = 1e-9);
}

#[test]
fn eval_examples() {
    let l = QuadLoss::scalar(1.0, -4.0, 4.0).unwrap();
    let (v, g) = eval(&l, &dv(&[2.0])).unwrap();
    assert_eq!((v, g[0]), (0.0, 0.0));
    let l = QuadLoss::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.0).unwrap();
    let (v, g) = eval(&l, &dv(&[1.0, 1.0])).unwrap();
    assert_eq!(v, 2.0);
    assert_eq!(g, dv(&[2.0, 2.0]));
    assert!(eval(&l, &dv(&[1.0])).is_err());
}

#[test]
fn prox_examples() {
    let l = QuadLoss::scalar(1.0, 0.0, 0.0).unwrap();
    assert_abs_diff_eq!(l.prox_quad(&dv(&[3.0]), 2.0).unwrap()[0], 1.5, epsilon = 1e-14);
    let z = QuadLoss::zero(2);
    assert_eq!(z.prox_quad(&dv(&[3.0, -1.0]), 0.7).unwrap(), dv(&[3.0, -1.0]));
    let l = QuadLoss::from_dataset(&random_dataset(10, 3, 1), 0.1).unwrap();
    let v = dv(&[1.0, 2.0, 3.0]);
    assert!((l.prox_quad(&v, 1e9).unwrap() - &v).amax() <= 1e-6);
    assert!(l.prox_quad(&v, 0.0).is_err());
}

#[test]
fn rejects_asymmetric_or_indefinite_q() {
    assert!(QuadLoss::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2), 0.0).is_err());
    assert!(QuadLoss::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), DVector::zeros(2), 0.0).is_err());
}

#[test]
fn explainability_examples() {
    let base = QuadLoss::from_dataset(&random_dataset(8, 2, 4), 0.0).unwrap();
    let tx = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let same = base.augment_explainability(&tx, &dv(&[1.0, 1.0]), 0.0).unwrap();
    assert_eq!(same.q_mat(), base.q_mat());
    assert_eq!(same.q_vec(), base.q_vec());

    let pure = QuadLoss::from_dataset(&LocalDataset::empty(1), 0.0)
        .unwrap()
        .augment_explainability(&DMatrix::from_element(1, 1, 1.0), &dv(&[5.0]), 1.0)
        .unwrap();
    assert_abs_diff_eq!(pure.minimizer().unwrap()[0], 5.0, epsilon = 1e-12);

    // Large ρ_e: minimizer approaches the least-squares fit of the guesses alone.
    let tx = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let u = dv(&[1.0, 2.0, 2.5]);
    let ls = (tx.transpose() * &tx).cholesky().unwrap().solve(&(tx.transpose() * &u));
    let heavy = base.augment_explainability(&tx, &u, 1e6).unwrap().minimizer().unwrap();
    assert!((heavy - ls).amax() <= 1e-4);
}

#[test]
fn linreg_bound_examples() {
    let ones = LocalDataset::from_rows(&vec![vec![1.0]; 4], &[0.0; 4]).unwrap();
    // Single-column ones: Xᵀn = Σn, λ₁ = 1, so the bound is (Σn)²/4.
    assert_abs_diff_eq!(linreg_error_bound(&ones, &dv(&[1.0, 0.0, 0.0, 0.0])).unwrap(), 0.25, epsilon = 1e-15);
    assert_abs_diff_eq!(linreg_error_bound(&ones, &dv(&[1.0, 1.0, -1.0, 2.0])).unwrap(), 9.0 / 4.0, epsilon = 1e-14);
    assert_eq!(linreg_error_bound(&ones, &DVector::zeros(4)).unwrap(), 0.0);

    for seed in 0..100 {
        let w = dv(&[0.5, -1.0, 2.0]);
        let (ds, noise) = generate_local_with_noise(&w, 20, 0.5, seed).unwrap();
        let w_hat = QuadLoss::from_dataset(&ds, 0.0).unwrap().minimizer().unwrap();
        let bound = linreg_error_bound(&ds, &noise).unwrap();
        assert!((w_hat - &w).norm_squared() <= bound * (1.0 + 1e-9), "seed {seed}");
    }
}

#[test]
fn dataset_csv_round_trip() {
    let ds = random_dataset(6, 3, 2);
    let text = ds.to_csv();
    assert!(text.starts_with("f1,f2,f3,label\n"));
    let back = LocalDataset::parse_csv(&text).unwrap();
    assert_eq!(back, ds);
    assert!(LocalDataset::parse_csv("f1,label\n1,x\n").is_err());
    assert!(LocalDataset::parse_csv("f1,label\n1,2,3\n").is_err());
    assert_eq!(LocalDataset::parse_csv("f1,f2,label\n").unwrap().len(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_finite_differences(m in 0usize..15, d in 1usize..5, ridge in 0.0f64..1.0, seed in any::<u64>()) {
        let ds = random_dataset(m, d, seed);
        let l = QuadLoss::from_dataset(&ds, ridge).unwrap();
        let mut r = rng(seed ^ 0x55);
        for _ in 0..20 {
            let w = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
            let g = l.gradient(&w);
            let h = 1e-5;
            let fd = DVector::from_fn(d, |k, _| {
                let mut a = w.clone();
                let mut b = w.clone();
                a[k] += h;
                b[k] -= h;
                (l.value(&a) - l.value(&b)) / (2.0 * h)
            });
            prop_assert!((&g - &fd).norm() <= 1e-5 * g.norm().max(1.0));
        }
    }

    #[test]
    fn from_dataset_matches_direct_objective(m in 0usize..15, d in 1usize..5, ridge in 0.0f64..1.0, seed in any::<u64>()) {
        let ds = random_dataset(m, d, seed);
        let l = QuadLoss::from_dataset(&ds, ridge).unwrap();
        let mut r = rng(seed.wrapping_add(1));
        for _ in 0..10 {
            let w = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
            let direct = direct_loss(&ds, ridge, &w);
            prop_assert!((l.value(&w) - direct).abs() <= 1e-10 * (1.0 + direct));
        }
        let sym = (l.q_mat() - l.q_mat().transpose()).amax();
        prop_assert!(sym <= 1e-12);
    }

    #[test]
    fn prox_is_firmly_nonexpansive(m in 0usize..10, d in 1usize..4, rho in 0.01f64..10.0, seed in any::<u64>()) {
        let l = QuadLoss::from_dataset(&random_dataset(m, d, seed), 0.0).unwrap();
        let mut r = rng(seed.wrapping_add(2));
        let v = DVector::from_fn(d, |_, _| r.random_range(-5.0..5.0));
        let v2 = DVector::from_fn(d, |_, _| r.random_range(-5.0..5.0));
        let p = l.prox_quad(&v, rho).unwrap();
        let p2 = l.prox_quad(&v2, rho).unwrap();
        let diff = &p - &p2;
        prop_assert!(diff.norm_squared() <= diff.dot(&(&v - &v2)) + 1e-10);
        // Stationarity (2Q + ρI)p = ρv − q.
        let res = l.q_mat() * &p * 2.0 + &p * rho - (&v * rho - l.q_vec());
        prop_assert!(res.amax() <= 1e-9 * (1.0 + rho * v.amax()));
    }

    #[test]
    fn explainability_equals_augmented_dataset(m in 1usize..8, mt in 1usize..6, d in 1usize..4, rho_e in 0.01f64..5.0, seed in any::<u64>()) {
        let ds = random_dataset(m, d, seed);
        let test = random_dataset(mt, d, seed.wrapping_add(9));
        let aug = QuadLoss::from_dataset(&ds, 0.0).unwrap()
            .augment_explainability(test.x(), test.y(), rho_e).unwrap();
        // Stack rows of the guess set scaled by √(ρ_e·m/m') so that the (1/(m+m'))
        // normalization of the stacked set matches after multiplying by (m+m')/m.
        let s = (rho_e * m as f64 / mt as f64).sqrt();
        let mut rows: Vec<Vec<f64>> = (0..m).map(|r| ds.row(r).iter().copied().collect()).collect();
        let mut labels: Vec<f64> = ds.y().iter().copied().collect();
        for r in 0..mt {
            rows.push(test.row(r).iter().map(|x| x * s).collect());
            labels.push(test.y()[r] * s);
        }
        let stacked = QuadLoss::from_dataset(&LocalDataset::from_rows(&rows, &labels).unwrap(), 0.0).unwrap();
        let scale = (m + mt) as f64 / m as f64;
        let mut r = rng(seed.wrapping_add(3));
        for _ in 0..5 {
            let w = DVector::from_fn(d, |_, _| r.random_range(-3.0..3.0));
            let a = aug.value(&w);
            let b = stacked.value(&w) * scale;
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn dataset_csv_parser_never_panics(s in "\\PC*") {
        let _ = LocalDataset::parse_csv(&s);
    }
}
