#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use netfl::graph::{EmpGraph, GraphKind};
use netfl::StackedParams;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_params(n: usize, d: usize, r: &mut ChaCha8Rng) -> StackedParams {
    let flat = DVector::from_fn(n * d, |_, _| r.random_range(-3.0..3.0));
    StackedParams::from_flat(n, d, flat).unwrap()
}

/// Random weighted graph, possibly disconnected.
pub fn random_graph(n: usize, p: f64, r: &mut ChaCha8Rng) -> EmpGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(p) {
                edges.push((i, j, r.random_range(0.1..3.0)));
            }
        }
    }
    EmpGraph::new(n, edges).unwrap()
}

/// Laplacian built from its entrywise definition.
pub fn laplacian_oracle(g: &EmpGraph) -> DMatrix<f64> {
    let n = g.n();
    let mut l = DMatrix::zeros(n, n);
    for e in g.edges() {
        l[(e.i, e.j)] -= e.weight;
        l[(e.j, e.i)] -= e.weight;
        l[(e.i, e.i)] += e.weight;
        l[(e.j, e.j)] += e.weight;
    }
    l
}

pub fn kron_identity(l: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    l.kronecker(&DMatrix::identity(d, d))
}

/// Strategy over small weighted graphs given as `(n, edges)`.
pub fn graph_strategy(max_n: usize) -> impl Strategy<Value = EmpGraph> {
    (1..=max_n)
        .prop_flat_map(|n| {
            let pairs = n * (n - 1) / 2;
            (Just(n), proptest::collection::vec(proptest::option::of(0.1f64..3.0), pairs))
        })
        .prop_map(|(n, ws)| {
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if let Some(w) = ws[k] {
                        edges.push((i, j, w));
                    }
                    k += 1;
                }
            }
            EmpGraph::new(n, edges).unwrap()
        })
}

pub fn er(n: usize, p: f64, seed: u64) -> EmpGraph {
    EmpGraph::generate(GraphKind::ErdosRenyi { p }, n, 1.0, seed).unwrap()
}
