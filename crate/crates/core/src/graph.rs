//! Empirical graphs: weighted undirected graphs whose nodes are devices.
//!
//! Edges are stored once per unordered pair, keyed by `(min, max)` node id and
//! kept sorted so iteration order is reproducible. Node ids are 0-based in the
//! API and 1-based in the edge-list text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::params::StackedParams;
use crate::rng;

/// Eigenvalues closer than this to zero count as zero.
pub const ZERO_EIG_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct EmpGraph {
    n: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    n: usize,
    edges: Vec<Edge>,
}

impl TryFrom<RawGraph> for EmpGraph {
    type Error = Error;
    fn try_from(raw: RawGraph) -> Result<Self> {
        EmpGraph::new(raw.n, raw.edges.into_iter().map(|e| (e.i, e.j, e.weight)))
    }
}

impl From<EmpGraph> for RawGraph {
    fn from(g: EmpGraph) -> Self {
        RawGraph {
            n: g.n,
            edges: g.edges,
        }
    }
}

/// Penalty applied to parameter differences across an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// `‖·‖₂²`
    SqNorm,
    /// `‖·‖₂`
    Norm,
}

impl Penalty {
    pub fn apply(self, diff_norm: f64) -> f64 {
        match self {
            Penalty::SqNorm => diff_norm * diff_norm,
            Penalty::Norm => diff_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub multiplicity_zero: usize,
}

impl Spectrum {
    /// Algebraic connectivity; 0 for a single node.
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues.get(1).copied().unwrap_or(0.0)
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusSplit {
    pub mean_block: DVector<f64>,
    pub deviations: StackedParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Degrees {
    pub per_node: Vec<f64>,
    pub max: f64,
}

/// Largest node count accepted from text input.
pub const MAX_PARSED_NODES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    ErdosRenyi { p: f64 },
    Star,
    Chain,
    /// Two blocks of sizes `⌈n/2⌉` and `⌊n/2⌋`.
    TwoCluster { p_in: f64, p_out: f64 },
}

impl EmpGraph {
    /// Build a graph from `(i, j, weight)` triples with 0-based ids.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i},{j}) references a node outside 0..{n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i},{j}) has non-positive weight {w}"
                )));
            }
            let key = (i.min(j), i.max(j));
            if map.insert(key, w).is_some() {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({},{})",
                    key.0, key.1
                )));
            }
        }
        let edges: Vec<Edge> = map
            .into_iter()
            .map(|((i, j), weight)| Edge { i, j, weight })
            .collect();
        let mut adj = vec![Vec::new(); n];
        for e in &edges {
            adj[e.i].push((e.j, e.weight));
            adj[e.j].push((e.i, e.weight));
        }
        for a in &mut adj {
            a.sort_by_key(|&(j, _)| j);
        }
        Ok(Self { n, edges, adj })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, std::iter::empty())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of `i` with edge weights, sorted by node id.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map(|pos| self.adj[i][pos].1)
            .unwrap_or(0.0)
    }

    /// Copy of the graph with one more edge.
    pub fn with_edge(&self, i: usize, j: usize, weight: f64) -> Result<Self> {
        let edges = self
            .edges
            .iter()
            .map(|e| (e.i, e.j, e.weight))
            .chain(std::iter::once((i, j, weight)));
        Self::new(self.n, edges)
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            a[(e.i, e.j)] = e.weight;
            a[(e.j, e.i)] = e.weight;
        }
        a
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            l[(e.i, e.j)] -= e.weight;
            l[(e.j, e.i)] -= e.weight;
            l[(e.i, e.i)] += e.weight;
            l[(e.j, e.j)] += e.weight;
        }
        l
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        let mut eigenvalues = linalg::sym_eigenvalues(&self.laplacian())?;
        for v in &mut eigenvalues {
            if v.abs() < ZERO_EIG_TOL {
                *v = 0.0;
            }
        }
        let multiplicity_zero = eigenvalues.iter().filter(|&&v| v == 0.0).count();
        Ok(Spectrum {
            eigenvalues,
            multiplicity_zero,
        })
    }

    pub fn degrees(&self) -> Degrees {
        let per_node: Vec<f64> = self
            .adj
            .iter()
            .map(|a| a.iter().map(|&(_, w)| w).sum())
            .collect();
        let max = per_node.iter().copied().fold(0.0, f64::max);
        Degrees { per_node, max }
    }

    pub fn degree(&self, i: usize) -> f64 {
        self.adj[i].iter().map(|&(_, w)| w).sum()
    }

    /// Sum over edges of `A_{i,i'}·φ(w^(i) − w^(i'))`.
    pub fn gtv_value(&self, params: &StackedParams, penalty: Penalty) -> Result<f64> {
        if params.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: params.n(),
            });
        }
        Ok(self
            .edges
            .iter()
            .map(|e| e.weight * penalty.apply((params.block(e.i) - params.block(e.j)).norm()))
            .sum())
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut head = 0;
            while head < comp.len() {
                let u = comp[head];
                head += 1;
                for &(v, _) in &self.adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Induced subgraph on `cluster` (nodes renumbered in sorted order) and
    /// the total weight of edges leaving the cluster.
    pub fn induced(&self, cluster: &[usize]) -> Result<(EmpGraph, f64)> {
        if cluster.is_empty() {
            return Err(Error::param("cluster", "must be nonempty"));
        }
        let mut members: Vec<usize> = cluster.to_vec();
        members.sort_unstable();
        members.dedup();
        if let Some(&bad) = members.iter().find(|&&i| i >= self.n) {
            return Err(Error::param("cluster", format!("node {bad} out of range")));
        }
        let mut index = vec![None; self.n];
        for (k, &i) in members.iter().enumerate() {
            index[i] = Some(k);
        }
        let mut inner = Vec::new();
        let mut boundary = 0.0;
        for e in &self.edges {
            match (index[e.i], index[e.j]) {
                (Some(a), Some(b)) => inner.push((a, b, e.weight)),
                (Some(_), None) | (None, Some(_)) => boundary += e.weight,
                (None, None) => {}
            }
        }
        Ok((EmpGraph::new(members.len(), inner)?, boundary))
    }

    /// Compare `λ₂` against `(n/(n−1))·min_i d^(i)`.
    pub fn lambda2_degree_check(&self) -> Result<Lambda2Check> {
        if self.n < 2 {
            return Err(Error::param("n", "lambda2 check needs at least two nodes"));
        }
        let lambda2 = self.spectrum()?.lambda2();
        let min_deg = self.degrees().per_node.into_iter().fold(f64::INFINITY, f64::min);
        let bound = self.n as f64 / (self.n as f64 - 1.0) * min_deg;
        Ok(Lambda2Check {
            lambda2,
            bound,
            holds: lambda2 <= bound + 1e-9 * bound.abs().max(1.0),
        })
    }

    /// Seeded graph generator.
    pub fn generate(kind: GraphKind, n: usize, weight: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::param("weight", format!("must be positive, got {weight}")));
        }
        let check_p = |name: &'static str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::param(name, format!("probability {p} outside [0,1]")))
            }
        };
        let mut edges = Vec::new();
        match kind {
            GraphKind::ErdosRenyi { p } => {
                check_p("p", p)?;
                let mut r = rng::stream(seed, "graph/erdos_renyi", &[n as u64]);
                for i in 0..n {
                    for j in i + 1..n {
                        if r.random::<f64>() < p {
                            edges.push((i, j, weight));
                        }
                    }
                }
            }
            GraphKind::Star => {
                for j in 1..n {
                    edges.push((0, j, weight));
                }
            }
            GraphKind::Chain => {
                for i in 1..n {
                    edges.push((i - 1, i, weight));
                }
            }
            GraphKind::TwoCluster { p_in, p_out } => {
                check_p("p_in", p_in)?;
                check_p("p_out", p_out)?;
                let labels = two_cluster_labels(n);
                let mut r = rng::stream(seed, "graph/two_cluster", &[n as u64]);
                for i in 0..n {
                    for j in i + 1..n {
                        let p = if labels[i] == labels[j] { p_in } else { p_out };
                        if r.random::<f64>() < p {
                            edges.push((i, j, weight));
                        }
                    }
                }
            }
        }
        Self::new(n, edges)
    }

    /// Parse the edge-list text format.
    ///
    /// One edge per line as `i j weight` with 1-based ids; blank lines and
    /// `#` comments are skipped. A `# nodes N` directive fixes the node count,
    /// otherwise it is the largest id seen.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut declared: Option<usize> = None;
        let mut triples = Vec::new();
        let mut max_id = 0usize;
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let trimmed = raw.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                if parts.next() == Some("nodes") {
                    let n = parts
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .filter(|&n| n > 0)
                        .ok_or_else(|| Error::Parse {
                            line,
                            msg: "malformed `# nodes N` directive".into(),
                        })?;
                    if declared.replace(n).is_some() {
                        return Err(Error::Parse {
                            line,
                            msg: "node count declared twice".into(),
                        });
                    }
                }
                continue;
            }
            let content = trimmed.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected `i j weight`, found {} fields", fields.len()),
                });
            }
            let id = |s: &str| -> Result<usize> {
                match s.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v),
                    _ => Err(Error::Parse {
                        line,
                        msg: format!("invalid node id `{s}` (ids are 1-based)"),
                    }),
                }
            };
            let i = id(fields[0])?;
            let j = id(fields[1])?;
            let w: f64 = fields[2].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid weight `{}`", fields[2]),
            })?;
            if i == j {
                return Err(Error::Parse {
                    line,
                    msg: format!("self-loop at node {i}"),
                });
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Parse {
                    line,
                    msg: format!("weight must be positive, got {w}"),
                });
            }
            max_id = max_id.max(i).max(j);
            triples.push((line, i - 1, j - 1, w));
        }
        if declared.unwrap_or(0).max(max_id) > MAX_PARSED_NODES {
            return Err(Error::Parse {
                line: 0,
                msg: format!("more than {MAX_PARSED_NODES} nodes"),
            });
        }
        let n = match declared {
            Some(n) if n < max_id => {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("node id {max_id} exceeds declared node count {n}"),
                })
            }
            Some(n) => n,
            None if max_id == 0 => {
                return Err(Error::Parse {
                    line: 0,
                    msg: "edge list has no edges and no `# nodes N` directive".into(),
                })
            }
            None => max_id,
        };
        let mut seen = std::collections::HashSet::new();
        for &(line, i, j, _) in &triples {
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate edge {{{},{}}}", i + 1, j + 1),
                });
            }
        }
        Self::new(n, triples.into_iter().map(|(_, i, j, w)| (i, j, w)))
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes {}\n", self.n);
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", e.i + 1, e.j + 1, e.weight);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambda2Check {
    pub lambda2: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Cluster label (0 or 1) of each node in a [`GraphKind::TwoCluster`] graph.
pub fn two_cluster_labels(n: usize) -> Vec<usize> {
    let first = n.div_ceil(2);
    (0..n).map(|i| usize::from(i >= first)).collect()
}

/// Split stacked parameters into their average block and deviations.
pub fn consensus_split(params: &StackedParams) -> ConsensusSplit {
    let n = params.n();
    let mut mean_block = DVector::zeros(params.dim());
    for i in 0..n {
        mean_block += params.block(i);
    }
    if n > 0 {
        mean_block /= n as f64;
    }
    let mut deviations = params.clone();
    for i in 0..n {
        let dev = params.block(i) - &mean_block;
        deviations.set_block(i, &dev);
    }
    ConsensusSplit {
        mean_block,
        deviations,
    }
}

/// `stack(w)ᵀ (L⊗I_d) stack(w)` evaluated edge-wise without the Kronecker product.
pub fn laplacian_quadratic_form(g: &EmpGraph, params: &StackedParams) -> f64 {
    let mut total = 0.0;
    for i in 0..g.n() {
        let wi = params.block(i);
        let deg = g.degree(i);
        let mut lw = wi * deg;
        for &(j, a) in g.neighbors(i) {
            lw -= params.block(j) * a;
        }
        total += wi.dot(&lw);
    }
    total
}
