//! Seeded synthetic instances: connected graphs and per-node regression data
//! with known ground truth and noise.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{two_cluster_labels, EmpGraph, GraphKind};
use crate::localmodel::{generate_local_with_noise, LocalDataset};
use crate::rng;

/// Regenerate with derived seeds until the graph is connected.
pub fn connected_graph(kind: GraphKind, n: usize, weight: f64, seed: u64, max_tries: usize) -> Result<EmpGraph> {
    for attempt in 0..max_tries.max(1) {
        let s = if attempt == 0 { seed } else { rng::derive_seed(seed, "graph/retry", &[attempt as u64]) };
        let g = EmpGraph::generate(kind, n, weight, s)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Disconnected(format!("no connected {kind:?} graph on {n} nodes in {max_tries} tries")))
}

/// Sample sizes uniform on `[m_min, m_max]`.
pub fn random_sizes(n: usize, m_min: usize, m_max: usize, seed: u64) -> Result<Vec<usize>> {
    if m_min > m_max {
        return Err(Error::param("m_min", "must not exceed m_max"));
    }
    let mut r = rng::stream(seed, "data/sizes", &[n as u64]);
    Ok((0..n).map(|_| r.random_range(m_min..=m_max)).collect())
}

/// Standard normal vector from the named stream.
pub fn gaussian_vector(d: usize, seed: u64, label: &str, index: u64) -> DVector<f64> {
    let mut r = rng::stream(seed, label, &[index]);
    DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal))
}

/// Datasets together with the parameters and noise that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeData {
    pub datasets: Vec<LocalDataset>,
    pub true_params: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
}

impl NodeData {
    pub fn sizes(&self) -> Vec<usize> {
        self.datasets.iter().map(LocalDataset::len).collect()
    }

    pub fn noise_sq_norms(&self) -> Vec<f64> {
        self.noise.iter().map(|e| e.norm_squared()).collect()
    }
}

/// `y_i = X_i w_i + ε_i` with standard normal features, node `i` drawing
/// from its own stream.
pub fn node_data(true_params: &[DVector<f64>], sizes: &[usize], noise_std: f64, seed: u64) -> Result<NodeData> {
    if true_params.len() != sizes.len() {
        return Err(Error::DimensionMismatch {
            expected: true_params.len(),
            got: sizes.len(),
        });
    }
    let mut datasets = Vec::with_capacity(sizes.len());
    let mut noise = Vec::with_capacity(sizes.len());
    for (i, (w, &m)) in true_params.iter().zip(sizes).enumerate() {
        let s = rng::derive_seed(seed, "data/node", &[i as u64]);
        let (ds, eps) = generate_local_with_noise(w, m, noise_std, s)?;
        datasets.push(ds);
        noise.push(eps);
    }
    Ok(NodeData {
        datasets,
        true_params: true_params.to_vec(),
        noise,
    })
}

/// Every node shares one random `w̄`.
pub fn common_model_data(sizes: &[usize], d: usize, noise_std: f64, seed: u64) -> Result<NodeData> {
    let w = gaussian_vector(d, seed, "data/w_bar", 0);
    node_data(&vec![w; sizes.len()], sizes, noise_std, seed)
}

/// Nodes in each half of [`two_cluster_labels`] share their cluster's `w̄`.
pub fn two_cluster_data(sizes: &[usize], d: usize, noise_std: f64, seed: u64) -> Result<NodeData> {
    let centers = [
        gaussian_vector(d, seed, "data/w_bar", 0),
        gaussian_vector(d, seed, "data/w_bar", 1),
    ];
    let params: Vec<DVector<f64>> = two_cluster_labels(sizes.len())
        .into_iter()
        .map(|c| centers[c].clone())
        .collect();
    node_data(&params, sizes, noise_std, seed)
}
