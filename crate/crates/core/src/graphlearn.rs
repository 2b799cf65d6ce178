//! Learning graph edges from pairwise discrepancies between nodes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EmpGraph;
use crate::localmodel::LocalLoss;
use crate::rng;

/// Weights below this are dropped when turning a weight matrix into a graph.
pub const PRUNE_TOL: f64 = 1e-6;

/// What a node reveals for computing discrepancies.
#[derive(Debug, Clone, Copy)]
pub enum Payload<'a> {
    /// Summary statistics compared by Euclidean distance (a single label, a mean, ...).
    Scalar(&'a DVector<f64>),
    /// Parameter estimates.
    Param(&'a DVector<f64>),
    /// Local loss whose gradient at `probe` fingerprints the dataset.
    Gradient { loss: &'a dyn LocalLoss, probe: &'a DVector<f64> },
    /// Linear model evaluated on a test set shared by all nodes.
    Prediction { block: &'a DVector<f64>, test_x: &'a DMatrix<f64> },
}

impl Payload<'_> {
    fn kind(&self) -> &'static str {
        match self {
            Payload::Scalar(_) => "scalar",
            Payload::Param(_) => "param",
            Payload::Gradient { .. } => "gradient",
            Payload::Prediction { .. } => "prediction",
        }
    }
}

fn euclid(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok((a - b).norm())
}

pub fn discrepancy(a: &Payload<'_>, b: &Payload<'_>) -> Result<f64> {
    match (a, b) {
        (Payload::Scalar(x), Payload::Scalar(y)) | (Payload::Param(x), Payload::Param(y)) => euclid(x, y),
        (Payload::Gradient { loss: la, probe: pa }, Payload::Gradient { loss: lb, probe: pb }) => {
            if pa != pb {
                return Err(Error::param("probe", "gradient discrepancies need a common probe point"));
            }
            if la.dim() != pa.len() || lb.dim() != pb.len() {
                return Err(Error::DimensionMismatch {
                    expected: la.dim(),
                    got: pa.len(),
                });
            }
            euclid(&la.gradient(pa), &lb.gradient(pb))
        }
        (Payload::Prediction { block: wa, test_x: xa }, Payload::Prediction { block: wb, test_x: xb }) => {
            if xa != xb {
                return Err(Error::param("test_x", "prediction discrepancies need a shared test set"));
            }
            if xa.ncols() != wa.len() || xb.ncols() != wb.len() {
                return Err(Error::DimensionMismatch {
                    expected: xa.ncols(),
                    got: wa.len(),
                });
            }
            if xa.nrows() == 0 {
                return Ok(0.0);
            }
            Ok((*xa * (*wa - *wb)).norm_squared() / xa.nrows() as f64)
        }
        _ => Err(Error::param(
            "payload",
            format!("cannot compare {} with {}", a.kind(), b.kind()),
        )),
    }
}

/// Symmetric nonnegative matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct DiscrepancyMatrix {
    d: DMatrix<f64>,
}

impl TryFrom<DMatrix<f64>> for DiscrepancyMatrix {
    type Error = Error;

    fn try_from(d: DMatrix<f64>) -> Result<Self> {
        Self::new(d)
    }
}

impl From<DiscrepancyMatrix> for DMatrix<f64> {
    fn from(m: DiscrepancyMatrix) -> Self {
        m.d
    }
}

impl DiscrepancyMatrix {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        let n = d.nrows();
        if d.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: d.ncols(),
            });
        }
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                return Err(Error::param("discrepancy", format!("diagonal entry {i} is not zero")));
            }
            for j in 0..n {
                let v = d[(i, j)];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::param("discrepancy", format!("entry ({i}, {j}) = {v} is not a nonnegative number")));
                }
                if v != d[(j, i)] {
                    return Err(Error::param("discrepancy", format!("entries ({i}, {j}) and ({j}, {i}) differ")));
                }
            }
        }
        Ok(Self { d })
    }

    /// Pairwise discrepancies of the payloads, computed in parallel.
    pub fn from_payloads(payloads: &[Payload<'_>]) -> Result<Self> {
        let n = payloads.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let vals = pairs
            .par_iter()
            .map(|&(i, j)| discrepancy(&payloads[i], &payloads[j]))
            .collect::<Result<Vec<_>>>()?;
        let mut d = DMatrix::zeros(n, n);
        for (&(i, j), v) in pairs.iter().zip(vals) {
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
        Self::new(d)
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// `Σ_{i<j} A_ij D_ij` for a weight matrix `A`.
    pub fn objective(&self, a: &DMatrix<f64>) -> f64 {
        pairs(self.n()).map(|(i, j)| a[(i, j)] * self.d[(i, j)]).sum()
    }

    pub fn graph_objective(&self, g: &EmpGraph) -> f64 {
        g.edges().iter().map(|e| e.weight * self.d[(e.i, e.j)]).sum()
    }

    /// Header-free comma-separated `n×n` matrix.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (k, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line: k + 1,
                        msg: format!("non-numeric field `{f}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if let Some((k, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Parse {
                line: k + 1,
                msg: format!("expected {n} fields, found {}", r.len()),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = self.d.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Graph with the ⌊E/2⌋ cheapest node pairs at unit weight and the
/// fractional remainder on the next pair, so that the symmetric weights sum
/// to `budget` over ordered pairs. Ties break lexicographically.
pub fn learn_graph_budget(d: &DiscrepancyMatrix, budget: f64) -> Result<EmpGraph> {
    let n = d.n();
    let cap = (n * n.saturating_sub(1)) as f64;
    if !(budget.is_finite() && (0.0..=cap).contains(&budget)) {
        return Err(Error::param("budget", format!("must lie in [0, {cap}], got {budget}")));
    }
    let mut order: Vec<(usize, usize)> = pairs(n).collect();
    order.sort_by(|a, b| d.get(a.0, a.1).total_cmp(&d.get(b.0, b.1)).then(a.cmp(b)));
    let half = budget / 2.0;
    let full = half.floor() as usize;
    let rem = half - full as f64;
    let mut edges: Vec<(usize, usize, f64)> = order.iter().take(full).map(|&(i, j)| (i, j, 1.0)).collect();
    if rem > PRUNE_TOL {
        if let Some(&(i, j)) = order.get(full) {
            edges.push((i, j, rem));
        }
    }
    EmpGraph::new(n, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeLearnConfig {
    /// Step size relative to `1/max D`.
    pub step: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Stop a restart once an iteration moves less than this.
    pub tol: f64,
}

impl Default for DegreeLearnConfig {
    fn default() -> Self {
        Self {
            step: 0.5,
            max_iters: 2000,
            restarts: 4,
            seed: 0,
            tol: 1e-12,
        }
    }
}

/// Projection onto `{x ∈ [0,1]^P : every node's incident pair weights sum to d}`
/// where `P` enumerates unordered pairs.
struct PairPolytope {
    n: usize,
    target: f64,
    pairs: Vec<(usize, usize)>,
}

const DYKSTRA_SWEEPS: usize = 500;
const KINK: f64 = 1e-9;

impl PairPolytope {
    fn new(n: usize, target: f64) -> Result<Self> {
        let max = n.saturating_sub(1) as f64;
        if !(target.is_finite() && target >= 0.0 && target <= max) {
            return Err(Error::Infeasible(format!("degree {target} not attainable with {n} nodes and weights in [0, 1]")));
        }
        Ok(Self {
            n,
            target,
            pairs: pairs(n).collect(),
        })
    }

    fn row_sums(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for (&(i, j), v) in self.pairs.iter().zip(x) {
            s[i] += v;
            s[j] += v;
        }
        s
    }

    /// Euclidean projection onto the affine set `Mx = d·1`.
    fn project_affine(&self, x: &mut [f64]) {
        let n = self.n;
        if n == 2 {
            x[0] = self.target;
            return;
        }
        if n < 2 {
            return;
        }
        let r: Vec<f64> = self.row_sums(x).iter().map(|s| s - self.target).collect();
        // (MMᵀ)⁻¹ = (I − J/(2n−2))/(n−2)
        let total: f64 = r.iter().sum();
        let lam: Vec<f64> = r
            .iter()
            .map(|ri| (ri - total / (2.0 * n as f64 - 2.0)) / (n as f64 - 2.0))
            .collect();
        for (&(i, j), v) in self.pairs.iter().zip(x.iter_mut()) {
            *v -= lam[i] + lam[j];
        }
    }

    fn violation(&self, x: &[f64]) -> f64 {
        let boxv = x.iter().map(|&v| (-v).max(v - 1.0)).fold(0.0, f64::max);
        let rowv = self
            .row_sums(x)
            .iter()
            .map(|s| (s - self.target).abs())
            .fold(0.0, f64::max);
        boxv.max(rowv)
    }

    /// Exact projection, falling back to Dykstra if the dual solve stalls.
    fn project(&self, z: &[f64]) -> Vec<f64> {
        self.project_dual(z).unwrap_or_else(|| self.dykstra(z))
    }

    /// Dykstra's alternating projection between the box and the affine set.
    fn dykstra(&self, z: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        let mut p = vec![0.0; x.len()];
        for _ in 0..DYKSTRA_SWEEPS {
            let y: Vec<f64> = x.iter().zip(&p).map(|(a, b)| (a + b).clamp(0.0, 1.0)).collect();
            let mut dp: f64 = 0.0;
            for k in 0..x.len() {
                let np = x[k] + p[k] - y[k];
                dp = dp.max((np - p[k]).abs());
                p[k] = np;
            }
            let mut next = y;
            self.project_affine(&mut next);
            let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(dp, f64::max);
            x = next;
            // The iterate alone can pause while the correction still grows.
            if moved <= 1e-15 && self.violation(&x) <= 1e-12 {
                break;
            }
        }
        x
    }

    fn clamp_at(&self, z: &[f64], lam: &DVector<f64>) -> Vec<f64> {
        self.pairs
            .iter()
            .zip(z)
            .map(|(&(i, j), v)| (v - lam[i] - lam[j]).clamp(0.0, 1.0))
            .collect()
    }

    fn dual_grad(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.n, self.row_sums(x).into_iter().map(|s| s - self.target))
    }

    /// Maximizer over `t ≥ 0` of the concave dual along `λ + tΔ`. The
    /// directional derivative is piecewise linear in `t` with kinks where a
    /// coordinate enters or leaves the box.
    fn exact_line_search(&self, z: &[f64], lam: &DVector<f64>, dir: &DVector<f64>, slope0: f64) -> f64 {
        let mut curv = 0.0;
        let mut events: Vec<(f64, f64)> = Vec::new();
        for (&(i, j), &zk) in self.pairs.iter().zip(z) {
            let sk = dir[i] + dir[j];
            if sk == 0.0 {
                continue;
            }
            let u = zk - lam[i] - lam[j];
            let (r0, r1) = (u / sk, (u - 1.0) / sk);
            let (a, b) = (r0.min(r1), r0.max(r1));
            if b <= 0.0 {
                continue;
            }
            let c = sk * sk;
            if a <= 0.0 {
                curv -= c;
            } else {
                events.push((a, -c));
            }
            events.push((b, c));
        }
        events.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (mut t, mut d) = (0.0, slope0);
        for (te, dc) in events {
            let next = d + curv * (te - t);
            if next <= 0.0 && curv < 0.0 {
                return t - d / curv;
            }
            t = te;
            d = next;
            curv += dc;
        }
        if curv < 0.0 {
            t - d / curv
        } else {
            t
        }
    }

    /// `clamp(z − Mᵀλ)` with `λ` from regularized semismooth Newton ascent
    /// on the concave dual `min_{x ∈ box} ½‖x − z‖² + λᵀ(Mx − d·1)`, using
    /// exact line search. Starts at the multiplier of the affine projection.
    fn project_dual(&self, z: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        if n < 2 {
            return Some(Vec::new());
        }
        let mut lam = DVector::zeros(n);
        if n > 2 {
            let r: Vec<f64> = self.row_sums(z).iter().map(|s| s - self.target).collect();
            let total: f64 = r.iter().sum();
            for (l, ri) in lam.iter_mut().zip(&r) {
                *l = (ri - total / (2.0 * n as f64 - 2.0)) / (n as f64 - 2.0);
            }
        }
        let zmax = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Row sums of `clamp(z − λ_i − λ_j)` cannot resolve below this.
        let tol = |lam: &DVector<f64>| 1e-12 * (1.0 + self.target) + 4.0 * n as f64 * f64::EPSILON * (zmax + 2.0 * lam.amax());
        let mut x = self.clamp_at(z, &lam);
        let mut grad = self.dual_grad(&x);
        for _ in 0..500 {
            let gmax = grad.amax();
            if gmax <= tol(&lam) {
                return Some(x);
            }
            let mut h = DMatrix::<f64>::identity(n, n) * (gmax.min(1.0) * 1e-3 + 1e-14);
            for (&(i, j), &zk) in self.pairs.iter().zip(z) {
                // Entries sitting on a kink count as free, otherwise the
                // step can stall against a breakpoint.
                let u = zk - lam[i] - lam[j];
                if u > -KINK && u < 1.0 + KINK {
                    h[(i, i)] += 1.0;
                    h[(j, j)] += 1.0;
                    h[(i, j)] += 1.0;
                    h[(j, i)] += 1.0;
                }
            }
            let dir = h.cholesky()?.solve(&grad);
            let t = self.exact_line_search(z, &lam, &dir, grad.dot(&dir));
            if !(t.is_finite() && t > 0.0) {
                return None;
            }
            lam += dir * t;
            x = self.clamp_at(z, &lam);
            grad = self.dual_grad(&x);
        }
        None
    }

    fn to_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for (&(i, j), &v) in self.pairs.iter().zip(x) {
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
        a
    }
}

/// Nearest point of `{A symmetric, zero diagonal, A ∈ [0,1],
/// row sums = d_max}` to the symmetric part of `a`.
pub fn project_constraints(a: &DMatrix<f64>, d_max: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let poly = PairPolytope::new(n, d_max)?;
    let z: Vec<f64> = poly.pairs.iter().map(|&(i, j)| 0.5 * (a[(i, j)] + a[(j, i)])).collect();
    Ok(poly.to_matrix(&poly.project(&z)))
}

/// Projected gradient descent with random restarts on
/// `min Σ A_ij D_ij` over weights in `[0, 1]` with every row summing to `d_max`.
pub fn learn_graph_degree(d: &DiscrepancyMatrix, d_max: f64, cfg: &DegreeLearnConfig) -> Result<EmpGraph> {
    let a = learn_weights_degree(d, d_max, cfg)?;
    let n = d.n();
    let edges = pairs(n)
        .filter(|&(i, j)| a[(i, j)] >= PRUNE_TOL)
        .map(|(i, j)| (i, j, a[(i, j)]));
    EmpGraph::new(n, edges)
}

/// Weight matrix found by [`learn_graph_degree`], before pruning.
pub fn learn_weights_degree(d: &DiscrepancyMatrix, d_max: f64, cfg: &DegreeLearnConfig) -> Result<DMatrix<f64>> {
    if !(cfg.step > 0.0) || cfg.max_iters == 0 {
        return Err(Error::param("step/max_iters", "must be positive"));
    }
    let n = d.n();
    let poly = PairPolytope::new(n, d_max)?;
    let cost: Vec<f64> = poly.pairs.iter().map(|&(i, j)| d.get(i, j)).collect();
    let scale = cost.iter().copied().fold(0.0, f64::max);
    let eta = if scale > 0.0 { cfg.step / scale } else { cfg.step };
    let objective = |x: &[f64]| x.iter().zip(&cost).map(|(a, b)| a * b).sum::<f64>();

    let mut starts = vec![vec![d_max / (n.max(2) - 1) as f64; poly.pairs.len()]];
    let mut r = rng::stream(cfg.seed, "graphlearn/restarts", &[n as u64]);
    for _ in 0..cfg.restarts {
        starts.push((0..poly.pairs.len()).map(|_| r.random::<f64>()).collect());
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in starts {
        let mut x = poly.project(&s);
        for _ in 0..cfg.max_iters {
            let z: Vec<f64> = x.iter().zip(&cost).map(|(v, c)| v - eta * c).collect();
            let next = poly.project(&z);
            let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            x = next;
            if moved <= cfg.tol {
                break;
            }
        }
        let f = objective(&x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    let (_, x) = best.expect("at least one start");
    Ok(poly.to_matrix(&x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localmodel::QuadLoss;
    use approx::assert_abs_diff_eq;

    fn dm(n: usize, v: &[f64]) -> DiscrepancyMatrix {
        DiscrepancyMatrix::new(DMatrix::from_row_slice(n, n, v)).unwrap()
    }

    #[test]
    fn discrepancy_examples() {
        let (a, b) = (DVector::from_element(1, 3.0), DVector::from_element(1, 5.0));
        assert_eq!(discrepancy(&Payload::Scalar(&a), &Payload::Scalar(&b)).unwrap(), 2.0);

        let l1 = QuadLoss::scalar(1.0, -4.0, 4.0).unwrap();
        let l2 = QuadLoss::scalar(1.0, 0.0, 0.0).unwrap();
        let v = DVector::zeros(1);
        let g = discrepancy(
            &Payload::Gradient { loss: &l1, probe: &v },
            &Payload::Gradient { loss: &l2, probe: &v },
        )
        .unwrap();
        assert_eq!(g, 4.0);

        let tx = DMatrix::identity(2, 2);
        let (w1, w2) = (DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0]));
        let p = discrepancy(
            &Payload::Prediction { block: &w1, test_x: &tx },
            &Payload::Prediction { block: &w2, test_x: &tx },
        )
        .unwrap();
        assert_eq!(p, 1.0);
        assert!(discrepancy(&Payload::Scalar(&a), &Payload::Param(&b)).is_err());
    }

    #[test]
    fn budget_examples() {
        let d = dm(3, &[0.0, 0.1, 0.5, 0.1, 0.0, 0.2, 0.5, 0.2, 0.0]);
        let g = learn_graph_budget(&d, 2.0).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.weight(0, 1), 1.0);
        let g = learn_graph_budget(&d, 4.0).unwrap();
        assert_eq!((g.weight(0, 1), g.weight(1, 2), g.weight(0, 2)), (1.0, 1.0, 0.0));
        assert_eq!(learn_graph_budget(&d, 0.0).unwrap().edge_count(), 0);
        let g = learn_graph_budget(&d, 3.0).unwrap();
        assert_abs_diff_eq!(g.weight(1, 2), 0.5);
        assert!(learn_graph_budget(&d, 7.0).is_err());
    }

    #[test]
    fn degree_examples() {
        let d = dm(3, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        let g = learn_graph_degree(&d, 2.0, &DegreeLearnConfig::default()).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert!(g.edges().iter().all(|e| (e.weight - 1.0).abs() < 1e-6));

        // One cheap pair at n = 4 with d_max = 1: a perfect matching containing it.
        let mut v = vec![1.0; 16];
        for i in 0..4 {
            v[i * 5] = 0.0;
        }
        v[1] = 0.01;
        v[4] = 0.01;
        let d = dm(4, &v);
        let a = learn_weights_degree(&d, 1.0, &DegreeLearnConfig::default()).unwrap();
        assert!((a[(0, 1)] - 1.0).abs() < 1e-6);
        assert!(learn_graph_degree(&d, 4.0, &DegreeLearnConfig::default()).is_err());
    }

    #[test]
    fn projection_examples() {
        let p = project_constraints(&DMatrix::zeros(3, 3), 2.0).unwrap();
        assert!((p - (DMatrix::from_element(3, 3, 1.0) - DMatrix::identity(3, 3))).amax() < 1e-6);
        let feasible = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.5, 0.5, 0.0, //
            0.5, 0.0, 0.0, 0.5, //
            0.5, 0.0, 0.0, 0.5, //
            0.0, 0.5, 0.5, 0.0,
        ]);
        assert!((project_constraints(&feasible, 1.0).unwrap() - &feasible).amax() < 1e-6);
        let wild = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { (i * 3 + j) as f64 - 5.0 });
        let p = project_constraints(&wild, 1.5).unwrap();
        assert!(p.iter().all(|&v| (-1e-6..=1.0 + 1e-6).contains(&v)));
        for i in 0..4 {
            assert_abs_diff_eq!(p.row(i).sum(), 1.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn csv_round_trip() {
        let d = dm(3, &[0.0, 0.1, 0.5, 0.1, 0.0, 0.2, 0.5, 0.2, 0.0]);
        assert_eq!(DiscrepancyMatrix::parse_csv(&d.to_csv()).unwrap(), d);
        assert!(DiscrepancyMatrix::parse_csv("0,1\n2,0\n").is_err());
        assert!(DiscrepancyMatrix::parse_csv("0,1\n1\n").is_err());
        assert!(DiscrepancyMatrix::parse_csv("0,x\nx,0\n").is_err());
    }
}
