mod common;

use approx::assert_abs_diff_eq;
use common::*;
use nalgebra::DMatrix;
use netfl::graph::{consensus_split, laplacian_quadratic_form, EmpGraph, GraphKind, Penalty, ZERO_EIG_TOL};
use netfl::StackedParams;
use proptest::prelude::*;

#[test]
fn laplacian_examples() {
    let g = EmpGraph::new(3, [(0, 1, 1.0), (0, 2, 1.0)]).unwrap();
    let want = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 1.0, 0.0, -1.0, 0.0, 1.0]);
    assert_eq!(g.laplacian(), want);
    assert_eq!(EmpGraph::empty(3).unwrap().laplacian(), DMatrix::zeros(3, 3));
    let g2 = EmpGraph::new(2, [(0, 1, 2.0)]).unwrap();
    assert_eq!(g2.laplacian(), DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]));
}

#[test]
fn spectrum_examples() {
    let s = EmpGraph::new(3, [(0, 1, 1.0), (0, 2, 1.0)]).unwrap().spectrum().unwrap();
    for (a, b) in s.eigenvalues.iter().zip([0.0, 1.0, 3.0]) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
    }
    assert_eq!(s.multiplicity_zero, 1);
    let e = EmpGraph::empty(3).unwrap().spectrum().unwrap();
    assert_eq!(e.eigenvalues, vec![0.0; 3]);
    assert_eq!(e.multiplicity_zero, 3);
    let s2 = EmpGraph::new(2, [(0, 1, 1.0)]).unwrap().spectrum().unwrap();
    assert_abs_diff_eq!(s2.lambda2(), 2.0, epsilon = 1e-12);
}

#[test]
fn component_examples() {
    let tri2 = EmpGraph::new(6, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0)]).unwrap();
    assert_eq!(tri2.components().len(), 2);
    assert_eq!(tri2.spectrum().unwrap().multiplicity_zero, 2);
    let chain = EmpGraph::generate(GraphKind::Chain, 4, 1.0, 0).unwrap();
    assert_eq!(chain.components().len(), 1);
    assert_eq!(EmpGraph::empty(3).unwrap().components().len(), 3);
}

#[test]
fn induced_examples() {
    let g = EmpGraph::new(4, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (2, 3, 1.0)]).unwrap();
    let (sub, boundary) = g.induced(&[0, 1, 2]).unwrap();
    assert_eq!(sub.n(), 3);
    assert_eq!(sub.edge_count(), 3);
    assert_eq!(boundary, 1.0);
    assert_eq!(g.induced(&[0, 1, 2, 3]).unwrap().1, 0.0);
    assert_eq!(g.induced(&[2]).unwrap().1, g.degree(2));
    assert!(g.induced(&[]).is_err());
}

#[test]
fn lambda2_degree_examples() {
    let path = EmpGraph::generate(GraphKind::Chain, 3, 1.0, 0).unwrap();
    let c = path.lambda2_degree_check().unwrap();
    assert_abs_diff_eq!(c.lambda2, 1.0, epsilon = 1e-10);
    assert_abs_diff_eq!(c.bound, 1.5, epsilon = 1e-12);
    assert!(c.holds);
    let k3 = er(3, 1.0, 0);
    let c = k3.lambda2_degree_check().unwrap();
    assert_abs_diff_eq!(c.lambda2, 3.0, epsilon = 1e-10);
    assert!(c.holds);
    let c = EmpGraph::new(3, [(0, 1, 1.0)]).unwrap().lambda2_degree_check().unwrap();
    assert_eq!(c.lambda2, 0.0);
    assert!(c.holds);
}

#[test]
fn generator_examples() {
    assert_eq!(er(4, 1.0, 9).edge_count(), 6);
    let star = EmpGraph::generate(GraphKind::Star, 4, 1.0, 0).unwrap();
    assert_eq!(star.edge_count(), 3);
    assert_eq!(star.degree(0), 3.0);
    let s6 = EmpGraph::generate(GraphKind::Star, 6, 1.0, 0).unwrap().degrees();
    assert_eq!(s6.max, 5.0);
    assert!(s6.per_node[1..].iter().all(|&d| d == 1.0));
    assert_eq!(er(12, 0.3, 5), er(12, 0.3, 5));
    assert!(EmpGraph::generate(GraphKind::ErdosRenyi { p: 1.5 }, 4, 1.0, 0).is_err());
}

#[test]
fn edge_list_round_trip_and_rejections() {
    let g = random_graph(7, 0.5, &mut rng(3));
    let back = EmpGraph::parse_edge_list(&g.to_edge_list()).unwrap();
    assert_eq!(back.n(), g.n());
    for (a, b) in back.edges().iter().zip(g.edges()) {
        assert_eq!((a.i, a.j), (b.i, b.j));
        assert!((a.weight - b.weight).abs() <= 1e-12 * b.weight);
    }
    assert!(EmpGraph::parse_edge_list("1 2 1.0\n2 1 0.5\n").is_err());
    assert!(EmpGraph::parse_edge_list("1 1 1.0\n").is_err());
    assert!(EmpGraph::parse_edge_list("1 2 -1\n").is_err());
    assert!(EmpGraph::parse_edge_list("# only a comment\n1 2 1 # trailing\n").is_ok());
    assert!(EmpGraph::parse_edge_list("# nodes 99999999999\n").is_err());
    assert!(EmpGraph::parse_edge_list("1 99999999999 1.0\n").is_err());
}

#[test]
fn spectral_identities_on_random_graphs() {
    let mut r = rng(42);
    for t in 0..100 {
        let n = 2 + t % 14;
        let g = random_graph(n, 0.05 + 0.9 * (t as f64 / 100.0), &mut r);
        let spec = g.spectrum().unwrap();
        assert_eq!(g.components().len(), spec.multiplicity_zero, "graph {t}");
        let deg = g.degrees();
        assert!(spec.lambda_max() <= 2.0 * deg.max + 1e-9);
        assert!(g.lambda2_degree_check().unwrap().holds);
        assert!(spec.eigenvalues.windows(2).all(|p| p[0] <= p[1]));
        assert!(spec.eigenvalues[0] >= -ZERO_EIG_TOL);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gtv_equals_kronecker_form(g in graph_strategy(8), d in 1usize..4, seed in any::<u64>()) {
        let w = random_params(g.n(), d, &mut rng(seed));
        let big = kron_identity(&laplacian_oracle(&g), d);
        let oracle = (w.flat().transpose() * &big * w.flat())[(0, 0)];
        let gtv = g.gtv_value(&w, Penalty::SqNorm).unwrap();
        prop_assert!((gtv - oracle).abs() <= 1e-10 * (1.0 + oracle.abs()));
        prop_assert!((laplacian_quadratic_form(&g, &w) - oracle).abs() <= 1e-10 * (1.0 + oracle.abs()));
        prop_assert_eq!(g.laplacian(), laplacian_oracle(&g));
    }

    #[test]
    fn components_match_zero_multiplicity(g in graph_strategy(10)) {
        prop_assert_eq!(g.components().len(), g.spectrum().unwrap().multiplicity_zero);
    }

    #[test]
    fn lambda_max_at_most_twice_max_degree(g in graph_strategy(10)) {
        prop_assert!(g.spectrum().unwrap().lambda_max() <= 2.0 * g.degrees().max + 1e-9);
    }

    #[test]
    fn adding_an_edge_never_decreases_lambda2(g in graph_strategy(8), i in 0usize..8, j in 0usize..8, w in 0.1f64..3.0) {
        let (i, j) = (i % g.n(), j % g.n());
        prop_assume!(i != j && g.weight(i, j) == 0.0);
        let before = g.spectrum().unwrap().lambda2();
        let after = g.with_edge(i, j, w).unwrap().spectrum().unwrap().lambda2();
        prop_assert!(after >= before - 1e-9);
    }

    #[test]
    fn consensus_split_is_orthogonal_and_exact(n in 1usize..8, d in 1usize..4, seed in any::<u64>()) {
        let w = random_params(n, d, &mut rng(seed));
        let s = consensus_split(&w);
        let mean = StackedParams::replicated(n, &s.mean_block);
        prop_assert!(mean.flat().dot(s.deviations.flat()).abs() <= 1e-10);
        let rebuilt = mean.flat() + s.deviations.flat();
        prop_assert!((rebuilt - w.flat()).amax() <= 1e-12);
        let total: nalgebra::DVector<f64> = s.deviations.blocks().into_iter().sum();
        prop_assert!(total.amax() <= 1e-10);
    }

    #[test]
    fn edge_list_parser_never_panics(s in "\\PC*") {
        let _ = EmpGraph::parse_edge_list(&s);
    }
}
