//! Message-passing solvers for GTVMin.
//!
//! Every solver is a family of per-node operators `F_i`, each mapping the
//! node's own block and its neighbors' blocks to a new own block. The
//! synchronous engine applies all `F_i` to the same round; the asynchronous
//! engine applies them to the active nodes of each event, reading stale
//! neighbor blocks according to a pre-generated schedule.

use std::collections::VecDeque;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EmpGraph, Penalty, MAX_PARSED_NODES};
use crate::gtvmin::GTVMinProblem;
use crate::localmodel::{LocalDataset, LocalLoss, QuadLoss};
use crate::optim::{IterRecord, LRSchedule, StopReason, StopRule, Trace, DIVERGENCE_FACTOR};
use crate::params::StackedParams;
use crate::rng;
use crate::trust::RobustAgg;

/// Node counts from which synchronous rounds update nodes in parallel.
pub const PARALLEL_THRESHOLD: usize = 64;

/// A neighbor's block as seen by the updating node.
#[derive(Debug, Clone, Copy)]
pub struct NeighborView<'a> {
    pub id: usize,
    pub weight: f64,
    pub block: &'a DVector<f64>,
}

pub trait NodeOperator: Debug + Send + Sync {
    fn kind(&self) -> &'static str;
    fn dim(&self) -> usize;
    /// New block of `node` at event `k` (0-based).
    fn update(&self, node: usize, own: &DVector<f64>, neighbors: &[NeighborView<'_>], k: usize) -> Result<DVector<f64>>;
}

pub type Operators = Vec<Box<dyn NodeOperator>>;

#[derive(Debug, Clone)]
pub struct IdentityOp {
    pub d: usize,
}

impl NodeOperator for IdentityOp {
    fn kind(&self) -> &'static str {
        "identity"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn update(&self, _: usize, own: &DVector<f64>, _: &[NeighborView<'_>], _: usize) -> Result<DVector<f64>> {
        Ok(own.clone())
    }
}

/// `2 Σ A (w − w')`, the gradient of the squared-norm coupling at one node.
fn coupling_gradient(own: &DVector<f64>, neighbors: &[NeighborView<'_>]) -> DVector<f64> {
    let mut acc = DVector::zeros(own.len());
    for nb in neighbors {
        acc += (own - nb.block) * nb.weight;
    }
    acc * 2.0
}

/// Gradient step on `L_i(w) + α Σ A‖w − w'‖²`.
#[derive(Debug, Clone)]
pub struct FedGdOp {
    loss: Arc<dyn LocalLoss>,
    alpha: f64,
    sched: LRSchedule,
}

impl NodeOperator for FedGdOp {
    fn kind(&self) -> &'static str {
        "fedgd"
    }

    fn dim(&self) -> usize {
        self.loss.dim()
    }

    fn update(&self, _: usize, own: &DVector<f64>, neighbors: &[NeighborView<'_>], k: usize) -> Result<DVector<f64>> {
        let eta = self.sched.rate(k + 1);
        let grad = self.loss.gradient(own) + coupling_gradient(own, neighbors) * self.alpha;
        Ok(own - grad * eta)
    }
}

fn require_sq_norm(p: &GTVMinProblem, what: &str) -> Result<()> {
    if p.penalty() != Penalty::SqNorm {
        return Err(Error::Precondition(format!("{what} needs the squared-norm penalty")));
    }
    Ok(())
}

pub fn fedgd_ops(p: &GTVMinProblem, sched: LRSchedule) -> Result<Operators> {
    sched.validate()?;
    require_sq_norm(p, "FedGD")?;
    Ok(p.losses()
        .iter()
        .map(|l| {
            Box::new(FedGdOp {
                loss: l.clone(),
                alpha: p.alpha(),
                sched,
            }) as Box<dyn NodeOperator>
        })
        .collect())
}

/// Unbiased estimate of the gradient of `(1/m)‖y − Xw‖²` from the given rows,
/// plus the ridge term.
pub fn batch_gradient(ds: &LocalDataset, ridge: f64, w: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    let mut g = w * (2.0 * ridge);
    if rows.is_empty() {
        return g;
    }
    let scale = -2.0 / rows.len() as f64;
    for &r in rows {
        let x = ds.x().row(r);
        let resid = ds.y()[r] - (x * w)[0];
        g += x.transpose() * (scale * resid);
    }
    g
}

/// FedGD with the local gradient replaced by a fresh batch estimate per
/// `(node, event)`.
#[derive(Debug, Clone)]
pub struct FedSgdOp {
    data: LocalDataset,
    full: QuadLoss,
    ridge: f64,
    batch: usize,
    seed: u64,
    alpha: f64,
    sched: LRSchedule,
}

impl FedSgdOp {
    pub fn batch_rows(&self, node: usize, k: usize) -> Vec<usize> {
        let mut r = rng::stream(self.seed, "batch", &[node as u64, k as u64]);
        rand::seq::index::sample(&mut r, self.data.len(), self.batch).into_vec()
    }

    pub fn local_gradient(&self, node: usize, w: &DVector<f64>, k: usize) -> DVector<f64> {
        if self.batch >= self.data.len() {
            return self.full.gradient(w);
        }
        batch_gradient(&self.data, self.ridge, w, &self.batch_rows(node, k))
    }
}

impl NodeOperator for FedSgdOp {
    fn kind(&self) -> &'static str {
        "fedsgd"
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn update(&self, node: usize, own: &DVector<f64>, neighbors: &[NeighborView<'_>], k: usize) -> Result<DVector<f64>> {
        let eta = self.sched.rate(k + 1);
        let grad = self.local_gradient(node, own, k) + coupling_gradient(own, neighbors) * self.alpha;
        Ok(own - grad * eta)
    }
}

/// FedSGD operators for squared-error losses built from `data` with `ridge`.
/// Batch sizes above `m_i` are clamped.
pub fn fedsgd_ops(
    p: &GTVMinProblem,
    data: &[LocalDataset],
    ridge: f64,
    batch: usize,
    seed: u64,
    sched: LRSchedule,
) -> Result<Operators> {
    sched.validate()?;
    require_sq_norm(p, "FedSGD")?;
    if data.len() != p.n() {
        return Err(Error::DimensionMismatch {
            expected: p.n(),
            got: data.len(),
        });
    }
    if batch == 0 {
        return Err(Error::param("batch", "must be at least 1"));
    }
    data.iter()
        .enumerate()
        .map(|(i, ds)| {
            let b = if batch > ds.len() {
                if !ds.is_empty() {
                    log::warn!("node {i}: batch size {batch} exceeds {} samples; clamping", ds.len());
                }
                ds.len()
            } else {
                batch
            };
            Ok(Box::new(FedSgdOp {
                data: ds.clone(),
                full: QuadLoss::from_dataset(ds, ridge)?,
                ridge,
                batch: b,
                seed,
                alpha: p.alpha(),
                sched,
            }) as Box<dyn NodeOperator>)
        })
        .collect()
}

/// Exact minimization of `L_i(w) + α d_i ‖w − avg‖²`, i.e. `prox_{L_i}(avg, 2αd_i)`,
/// with `avg` produced by the aggregation rule.
#[derive(Debug, Clone)]
pub struct FedRelaxOp {
    loss: Arc<dyn LocalLoss>,
    alpha: f64,
    agg: RobustAgg,
    /// Minimizer used when the node has no coupling.
    isolated: Option<DVector<f64>>,
}

impl NodeOperator for FedRelaxOp {
    fn kind(&self) -> &'static str {
        "fedrelax"
    }

    fn dim(&self) -> usize {
        self.loss.dim()
    }

    fn update(&self, _: usize, own: &DVector<f64>, neighbors: &[NeighborView<'_>], _: usize) -> Result<DVector<f64>> {
        let degree: f64 = neighbors.iter().map(|nb| nb.weight).sum();
        let rho = 2.0 * self.alpha * degree;
        if neighbors.is_empty() || rho <= 0.0 {
            return Ok(self.isolated.clone().unwrap_or_else(|| own.clone()));
        }
        let blocks: Vec<DVector<f64>> = neighbors.iter().map(|nb| nb.block.clone()).collect();
        let weights: Vec<f64> = neighbors.iter().map(|nb| nb.weight).collect();
        let avg = self.agg.aggregate(&blocks, &weights)?;
        self.loss
            .prox(&avg, rho)
            .unwrap_or_else(|| Err(Error::Precondition("FedRelax needs losses with a proximal map".into())))
    }
}

/// Block minimization of `L_i(w) + α Σ A‖w − w'‖` for quadratic `L_i`,
/// solved by reweighted least squares.
#[derive(Debug, Clone)]
pub struct NormRelaxOp {
    loss: QuadLoss,
    alpha: f64,
    tol: f64,
    max_iter: usize,
}

impl NormRelaxOp {
    fn block_objective(&self, w: &DVector<f64>, neighbors: &[NeighborView<'_>]) -> f64 {
        self.loss.value(w)
            + self.alpha * neighbors.iter().map(|nb| nb.weight * (w - nb.block).norm()).sum::<f64>()
    }
}

impl NodeOperator for NormRelaxOp {
    fn kind(&self) -> &'static str {
        "fedrelax_norm"
    }

    fn dim(&self) -> usize {
        self.loss.dim()
    }

    fn update(&self, _: usize, own: &DVector<f64>, neighbors: &[NeighborView<'_>], _: usize) -> Result<DVector<f64>> {
        let d = own.len();
        let q2 = self.loss.q_mat() * 2.0;
        let subgrad_ok = |w: &DVector<f64>, skip: usize| {
            let mut g = &q2 * w + self.loss.q_vec();
            let mut own_w = 0.0;
            for (j, nb) in neighbors.iter().enumerate() {
                let diff = w - nb.block;
                let dist = diff.norm();
                if j == skip || dist <= 1e-14 {
                    own_w += self.alpha * nb.weight;
                } else {
                    g += diff * (self.alpha * nb.weight / dist);
                }
            }
            g.norm() <= own_w
        };
        // A neighbor block is optimal when the remaining pull fits in its subdifferential.
        for (j, nb) in neighbors.iter().enumerate() {
            if subgrad_ok(nb.block, j) {
                return Ok(nb.block.clone());
            }
        }
        let mut w = own.clone();
        let mut best = (self.block_objective(&w, neighbors), w.clone());
        for _ in 0..self.max_iter {
            let mut a = q2.clone();
            let mut b = -self.loss.q_vec();
            for nb in neighbors {
                let c = self.alpha * nb.weight / (&w - nb.block).norm().max(1e-12);
                for t in 0..d {
                    a[(t, t)] += c;
                }
                b += nb.block * c;
            }
            let next = match a.cholesky() {
                Some(ch) => ch.solve(&b),
                None => break,
            };
            let step = (&next - &w).norm();
            w = next;
            let f = self.block_objective(&w, neighbors);
            if f < best.0 {
                best = (f, w.clone());
            }
            if step <= self.tol * (1.0 + w.norm()) {
                break;
            }
        }
        // Never return something worse than staying put.
        if self.block_objective(own, neighbors) < best.0 {
            return Ok(own.clone());
        }
        Ok(best.1)
    }
}

/// FedRelax operators; the squared-norm penalty uses proximal updates with
/// the given aggregation rule, the norm penalty uses exact block minimization.
pub fn fedrelax_ops(p: &GTVMinProblem, agg: RobustAgg) -> Result<Operators> {
    agg.validate()?;
    match p.penalty() {
        Penalty::SqNorm => p
            .losses()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if l.prox(&DVector::zeros(l.dim()), 1.0).is_none() {
                    return Err(Error::Precondition(format!("loss at node {i} has no proximal map")));
                }
                let isolated = l.as_quadratic().and_then(|q| q.minimizer().ok());
                Ok(Box::new(FedRelaxOp {
                    loss: l.clone(),
                    alpha: p.alpha(),
                    agg,
                    isolated,
                }) as Box<dyn NodeOperator>)
            })
            .collect(),
        Penalty::Norm => {
            if agg != RobustAgg::Mean {
                return Err(Error::Precondition("norm-penalty relaxation does not use aggregation".into()));
            }
            p.quad_losses()?
                .into_iter()
                .map(|q| {
                    Ok(Box::new(NormRelaxOp {
                        loss: q.clone(),
                        alpha: p.alpha(),
                        tol: 1e-12,
                        max_iter: 500,
                    }) as Box<dyn NodeOperator>)
                })
                .collect()
        }
    }
}

/// Per-node hooks applied to the blocks nodes share at each event.
#[derive(Default, Clone, Copy)]
pub struct Hooks<'a> {
    /// Perturbation added to a node's block before it is read, by the node
    /// itself and its neighbors (e.g. privacy noise).
    pub perturb: Option<&'a (dyn Fn(usize, usize, &DVector<f64>) -> Option<DVector<f64>> + Sync)>,
    /// Replacement for the block a node sends to its neighbors (e.g. model poisoning).
    pub outgoing: Option<&'a (dyn Fn(usize, usize, &DVector<f64>) -> Option<DVector<f64>> + Sync)>,
}

impl Debug for Hooks<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hooks")
            .field("perturb", &self.perturb.is_some())
            .field("outgoing", &self.outgoing.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig<'a> {
    pub max_events: usize,
    /// Stop once the objective changes by at most this much (needs `problem`).
    pub obj_tol: Option<f64>,
    /// Stop once the flat distance to `oracle` is at most this much.
    pub dist_tol: Option<f64>,
    pub problem: Option<&'a GTVMinProblem>,
    pub oracle: Option<&'a StackedParams>,
    pub keep_states: bool,
    pub hooks: Hooks<'a>,
}

impl<'a> RunConfig<'a> {
    pub fn events(max_events: usize) -> Self {
        Self {
            max_events,
            ..Self::default()
        }
    }

    pub fn monitor(mut self, problem: &'a GTVMinProblem) -> Self {
        self.problem = Some(problem);
        self
    }

    pub fn oracle(mut self, oracle: &'a StackedParams, dist_tol: Option<f64>) -> Self {
        self.oracle = Some(oracle);
        self.dist_tol = dist_tol;
        self
    }

    pub fn obj_tol(mut self, tol: f64) -> Self {
        self.obj_tol = Some(tol);
        self
    }

    pub fn keep_states(mut self) -> Self {
        self.keep_states = true;
        self
    }

    pub fn hooks(mut self, hooks: Hooks<'a>) -> Self {
        self.hooks = hooks;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.obj_tol.is_some() && self.problem.is_none() {
            return Err(Error::param("obj_tol", "requires a problem to evaluate the objective"));
        }
        if self.dist_tol.is_some() && self.oracle.is_none() {
            return Err(Error::param("dist_tol", "requires an oracle solution"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event: usize,
    pub objective: Option<f64>,
    pub gtv: Option<f64>,
    /// Flat distance to the oracle.
    pub dist_oracle: Option<f64>,
    /// Largest per-node distance to the oracle.
    pub max_block_dist: Option<f64>,
    /// Norm of the perturbation injected before this event's update.
    pub perturbation_norm: f64,
}

/// Metrics of a run; record `event = 0` describes the starting point and
/// record `k` the state after `k` events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<EventRecord>,
    pub reason: StopReason,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<StackedParams>,
}

impl RunTrace {
    pub fn events(&self) -> usize {
        self.records.last().map_or(0, |r| r.event)
    }

    pub fn distance_ratios(&self) -> Vec<f64> {
        ratios(self.records.iter().map(|r| r.dist_oracle))
    }

    pub fn max_block_ratios(&self) -> Vec<f64> {
        ratios(self.records.iter().map(|r| r.max_block_dist))
    }

    /// Injected perturbation norms in event order, excluding the final state.
    pub fn perturbation_norms(&self) -> Vec<f64> {
        self.records.iter().skip(1).map(|r| r.perturbation_norm).collect()
    }
}

fn ratios(d: impl Iterator<Item = Option<f64>>) -> Vec<f64> {
    let d: Vec<Option<f64>> = d.collect();
    d.windows(2)
        .filter_map(|p| match (p[0], p[1]) {
            (Some(a), Some(b)) if a > 0.0 => Some(b / a),
            _ => None,
        })
        .collect()
}

struct Monitor<'a> {
    cfg: &'a RunConfig<'a>,
    records: Vec<EventRecord>,
    states: Vec<StackedParams>,
    limit: f64,
}

impl<'a> Monitor<'a> {
    fn new(cfg: &'a RunConfig<'a>) -> Self {
        Self {
            cfg,
            records: Vec::new(),
            states: Vec::new(),
            limit: f64::INFINITY,
        }
    }

    /// Record a state; `Some(reason)` asks the engine to stop.
    fn observe(&mut self, event: usize, blocks: &[DVector<f64>], perturbation_norm: f64) -> Result<Option<StopReason>> {
        for (i, b) in blocks.iter().enumerate() {
            if b.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { node: i, k: event });
            }
        }
        let w = StackedParams::from_blocks(blocks)?;
        let (objective, gtv) = match self.cfg.problem {
            Some(p) => (Some(p.objective(&w)?), Some(p.graph().gtv_value(&w, p.penalty())?)),
            None => (None, None),
        };
        if let Some(f) = objective {
            if event == 0 {
                self.limit = DIVERGENCE_FACTOR * f.abs().max(1.0);
            } else if f > self.limit {
                return Err(Error::Divergence {
                    k: event,
                    reason: format!("objective {f:e} exceeds {DIVERGENCE_FACTOR:e} times its initial magnitude"),
                });
            }
        }
        let (dist_oracle, max_block_dist) = match self.cfg.oracle {
            Some(o) => (Some(w.distance(o)), Some(w.max_block_distance(o))),
            None => (None, None),
        };
        let prev = self.records.last().and_then(|r| r.objective);
        self.records.push(EventRecord {
            event,
            objective,
            gtv,
            dist_oracle,
            max_block_dist,
            perturbation_norm,
        });
        if self.cfg.keep_states {
            self.states.push(w);
        }
        if matches!((dist_oracle, self.cfg.dist_tol), (Some(e), Some(t)) if e <= t) {
            return Ok(Some(StopReason::DistTol));
        }
        if let (Some(t), Some(a), Some(b)) = (self.cfg.obj_tol, prev, objective) {
            if (a - b).abs() <= t {
                return Ok(Some(StopReason::ObjTol));
            }
        }
        Ok(None)
    }

    fn finish(self, reason: StopReason) -> RunTrace {
        RunTrace {
            records: self.records,
            reason,
            states: self.states,
        }
    }
}

fn check_setup(graph: &EmpGraph, ops: &[Box<dyn NodeOperator>], w0: &StackedParams, cfg: &RunConfig<'_>) -> Result<()> {
    cfg.validate()?;
    if ops.len() != graph.n() {
        return Err(Error::DimensionMismatch {
            expected: graph.n(),
            got: ops.len(),
        });
    }
    if w0.n() != graph.n() {
        return Err(Error::DimensionMismatch {
            expected: graph.n(),
            got: w0.n(),
        });
    }
    if let Some(op) = ops.iter().find(|op| op.dim() != w0.dim()) {
        return Err(Error::DimensionMismatch {
            expected: w0.dim(),
            got: op.dim(),
        });
    }
    if let Some(o) = cfg.oracle {
        if o.n() != w0.n() || o.dim() != w0.dim() {
            return Err(Error::DimensionMismatch {
                expected: w0.n() * w0.dim(),
                got: o.n() * o.dim(),
            });
        }
    }
    Ok(())
}

/// Apply the perturbation hook to every block; returns the perturbed blocks
/// and the flat norm of the injected perturbation.
fn shared_blocks(hooks: &Hooks<'_>, blocks: &[DVector<f64>], k: usize) -> Result<(Vec<DVector<f64>>, f64)> {
    let Some(perturb) = hooks.perturb else {
        return Ok((blocks.to_vec(), 0.0));
    };
    let mut out = Vec::with_capacity(blocks.len());
    let mut sq = 0.0;
    for (i, b) in blocks.iter().enumerate() {
        match perturb(i, k, b) {
            Some(eps) => {
                if eps.len() != b.len() {
                    return Err(Error::DimensionMismatch {
                        expected: b.len(),
                        got: eps.len(),
                    });
                }
                sq += eps.norm_squared();
                out.push(b + eps);
            }
            None => out.push(b.clone()),
        }
    }
    Ok((out, sq.sqrt()))
}

fn sent_blocks(hooks: &Hooks<'_>, blocks: &[DVector<f64>], k: usize) -> Option<Vec<DVector<f64>>> {
    let outgoing = hooks.outgoing?;
    Some(
        blocks
            .iter()
            .enumerate()
            .map(|(i, b)| outgoing(i, k, b).unwrap_or_else(|| b.clone()))
            .collect(),
    )
}

fn update_node<'b>(
    graph: &EmpGraph,
    ops: &[Box<dyn NodeOperator>],
    i: usize,
    own: &DVector<f64>,
    read: impl Fn(usize, usize) -> Result<&'b DVector<f64>>,
    k: usize,
) -> Result<DVector<f64>> {
    let nbrs = graph
        .neighbors(i)
        .iter()
        .enumerate()
        .map(|(pos, &(j, w))| {
            Ok(NeighborView {
                id: j,
                weight: w,
                block: read(pos, j)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let next = ops[i].update(i, own, &nbrs, k)?;
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { node: i, k: k + 1 });
    }
    Ok(next)
}

/// Synchronous rounds: every node reads round `k` and writes round `k+1`.
pub fn run_sync(
    graph: &EmpGraph,
    ops: &[Box<dyn NodeOperator>],
    w0: &StackedParams,
    cfg: &RunConfig<'_>,
) -> Result<(StackedParams, RunTrace)> {
    check_setup(graph, ops, w0, cfg)?;
    let n = graph.n();
    let mut blocks = w0.blocks();
    let mut mon = Monitor::new(cfg);
    if let Some(reason) = mon.observe(0, &blocks, 0.0)? {
        return Ok((w0.clone(), mon.finish(reason)));
    }
    let mut reason = StopReason::MaxIters;
    for k in 0..cfg.max_events {
        let (shared, pnorm) = shared_blocks(&cfg.hooks, &blocks, k)?;
        let sent = sent_blocks(&cfg.hooks, &shared, k);
        let seen = sent.as_ref().unwrap_or(&shared);
        let step = |i: usize| update_node(graph, ops, i, &shared[i], |_, j| Ok(&seen[j]), k);
        blocks = if n >= PARALLEL_THRESHOLD {
            (0..n).into_par_iter().map(step).collect::<Result<Vec<_>>>()?
        } else {
            (0..n).map(step).collect::<Result<Vec<_>>>()?
        };
        if let Some(r) = mon.observe(k + 1, &blocks, pnorm)? {
            reason = r;
            break;
        }
    }
    Ok((StackedParams::from_blocks(&blocks)?, mon.finish(reason)))
}

/// One update event of an asynchronous schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsyncEvent {
    /// Sorted ids of the nodes updating at this event.
    pub active: Vec<usize>,
    /// For each active node, the staleness (in events) of each neighbor's
    /// block, in the order of the node's neighbor list.
    pub delays: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Sync,
    /// Delays at most `bound` and every node active in any `bound` consecutive events.
    PartiallyAsync { bound: usize },
    /// Delays unbounded; every node active at least once per `granularity` events.
    TotallyAsync { granularity: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsyncSchedule {
    pub n: usize,
    pub kind: ScheduleKind,
    pub events: Vec<AsyncEvent>,
}

impl AsyncSchedule {
    pub fn sync(graph: &EmpGraph, horizon: usize) -> Self {
        let events = (0..horizon)
            .map(|_| AsyncEvent {
                active: (0..graph.n()).collect(),
                delays: (0..graph.n()).map(|i| vec![0; graph.neighbors(i).len()]).collect(),
            })
            .collect();
        Self {
            n: graph.n(),
            kind: ScheduleKind::Sync,
            events,
        }
    }

    /// Random activity (probability `p_active`) and delays uniform on
    /// `[0, min(bound, k)]`. Event 0 activates every node with fresh inputs,
    /// and a node idle for `max(bound, 1)` events is forced active.
    pub fn partially_async(graph: &EmpGraph, horizon: usize, bound: usize, p_active: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_active) {
            return Err(Error::param("p_active", format!("must lie in [0, 1], got {p_active}")));
        }
        let window = bound.max(1);
        let events = Self::random_events(graph, horizon, p_active, window, seed, "schedule/partial", |k, r| {
            r.random_range(0..=bound.min(k))
        });
        Ok(Self {
            n: graph.n(),
            kind: ScheduleKind::PartiallyAsync { bound },
            events,
        })
    }

    /// Like [`AsyncSchedule::partially_async`] but with delays uniform on
    /// `[0, ⌊k/2⌋]`, so staleness grows without bound over the horizon.
    pub fn totally_async(graph: &EmpGraph, horizon: usize, granularity: usize, p_active: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_active) {
            return Err(Error::param("p_active", format!("must lie in [0, 1], got {p_active}")));
        }
        if granularity == 0 {
            return Err(Error::param("granularity", "must be at least 1"));
        }
        let events = Self::random_events(graph, horizon, p_active, granularity, seed, "schedule/total", |k, r| {
            r.random_range(0..=k / 2)
        });
        Ok(Self {
            n: graph.n(),
            kind: ScheduleKind::TotallyAsync { granularity },
            events,
        })
    }

    fn random_events(
        graph: &EmpGraph,
        horizon: usize,
        p_active: f64,
        window: usize,
        seed: u64,
        label: &str,
        delay: impl Fn(usize, &mut rng::StreamRng) -> usize,
    ) -> Vec<AsyncEvent> {
        let n = graph.n();
        let mut r = rng::stream(seed, label, &[n as u64, window as u64]);
        let mut last = vec![0usize; n];
        let mut events = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let mut ev = AsyncEvent {
                active: Vec::new(),
                delays: Vec::new(),
            };
            for i in 0..n {
                let forced = k == 0 || k - last[i] >= window;
                if forced || r.random_bool(p_active) {
                    last[i] = k;
                    ev.active.push(i);
                    let ds = (0..graph.neighbors(i).len()).map(|_| delay(k, &mut r)).collect();
                    ev.delays.push(ds);
                }
            }
            events.push(ev);
        }
        events
    }

    pub fn horizon(&self) -> usize {
        self.events.len()
    }

    pub fn max_delay(&self) -> usize {
        self.events
            .iter()
            .flat_map(|e| e.delays.iter().flatten())
            .copied()
            .max()
            .unwrap_or(0)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate_structure()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Checks that need no graph: ids, ordering, delays and activity windows.
    pub fn validate_structure(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSchedule(msg));
        if self.n > MAX_PARSED_NODES {
            return bad(format!("more than {MAX_PARSED_NODES} nodes"));
        }
        let mut last: Vec<Option<usize>> = vec![None; self.n];
        let window = match self.kind {
            ScheduleKind::Sync => Some(1),
            ScheduleKind::PartiallyAsync { bound } => Some(bound.max(1)),
            ScheduleKind::TotallyAsync { granularity } => Some(granularity.max(1)),
        };
        for (k, ev) in self.events.iter().enumerate() {
            if ev.active.len() != ev.delays.len() {
                return bad(format!("event {k}: {} active nodes but {} delay lists", ev.active.len(), ev.delays.len()));
            }
            if ev.active.windows(2).any(|p| p[0] >= p[1]) {
                return bad(format!("event {k}: active set not strictly increasing"));
            }
            for (&i, ds) in ev.active.iter().zip(&ev.delays) {
                if i >= self.n {
                    return bad(format!("event {k}: node {i} out of range"));
                }
                last[i] = Some(k);
                for &dl in ds {
                    if dl > k {
                        return bad(format!("event {k}: node {i} reads event {} in the future", k as isize - dl as isize));
                    }
                    match self.kind {
                        ScheduleKind::Sync if dl != 0 => return bad(format!("event {k}: delay in a synchronous schedule")),
                        ScheduleKind::PartiallyAsync { bound } if dl > bound => {
                            return bad(format!("event {k}: delay {dl} exceeds bound {bound}"))
                        }
                        _ => {}
                    }
                }
            }
            if let Some(w) = window {
                for (i, l) in last.iter().enumerate() {
                    let idle = match l {
                        Some(l) => k - l,
                        None => k + 1,
                    };
                    if idle >= w {
                        return bad(format!("event {k}: node {i} idle for {idle} events (window {w})"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Full validation against the graph the schedule will drive.
    pub fn validate(&self, graph: &EmpGraph) -> Result<()> {
        if self.n != graph.n() {
            return Err(Error::InvalidSchedule(format!("schedule for {} nodes, graph has {}", self.n, graph.n())));
        }
        self.validate_structure()?;
        for (k, ev) in self.events.iter().enumerate() {
            for (&i, ds) in ev.active.iter().zip(&ev.delays) {
                if ds.len() != graph.neighbors(i).len() {
                    return Err(Error::InvalidSchedule(format!(
                        "event {k}: node {i} has {} neighbors but {} delays",
                        graph.neighbors(i).len(),
                        ds.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Event-driven execution: active nodes update from neighbor blocks as they
/// were `delay` events ago; inactive nodes keep their block.
pub fn run_async(
    graph: &EmpGraph,
    ops: &[Box<dyn NodeOperator>],
    w0: &StackedParams,
    sched: &AsyncSchedule,
    cfg: &RunConfig<'_>,
) -> Result<(StackedParams, RunTrace)> {
    check_setup(graph, ops, w0, cfg)?;
    if sched.n != graph.n() {
        return Err(Error::InvalidSchedule(format!("schedule for {} nodes, graph has {}", sched.n, graph.n())));
    }
    let horizon = sched.horizon().min(cfg.max_events);
    let keep = sched.max_delay() + 1;
    let mut blocks = w0.blocks();
    // history[0] holds what was shared at the current event, history[t] t events earlier.
    let mut history: VecDeque<Vec<DVector<f64>>> = VecDeque::with_capacity(keep + 1);
    let mut mon = Monitor::new(cfg);
    if let Some(reason) = mon.observe(0, &blocks, 0.0)? {
        return Ok((w0.clone(), mon.finish(reason)));
    }
    let mut reason = StopReason::MaxIters;
    for (k, ev) in sched.events.iter().take(horizon).enumerate() {
        if ev.active.len() != ev.delays.len() {
            return Err(Error::InvalidSchedule(format!("event {k}: delays misaligned")));
        }
        let (shared, pnorm) = shared_blocks(&cfg.hooks, &blocks, k)?;
        let sent = sent_blocks(&cfg.hooks, &shared, k).unwrap_or_else(|| shared.clone());
        history.push_front(sent);
        history.truncate(keep);
        let mut next = blocks.clone();
        for (&i, delays) in ev.active.iter().zip(&ev.delays) {
            if i >= graph.n() || delays.len() != graph.neighbors(i).len() {
                return Err(Error::InvalidSchedule(format!("event {k}: node {i} does not match the graph")));
            }
            let read = |pos: usize, j: usize| -> Result<&DVector<f64>> {
                let dl = delays[pos];
                if dl > k {
                    return Err(Error::InvalidSchedule(format!(
                        "event {k}: node {i} reads a block from before the start"
                    )));
                }
                history
                    .get(dl)
                    .map(|h| &h[j])
                    .ok_or_else(|| Error::InvalidSchedule(format!("event {k}: delay {dl} exceeds the history")))
            };
            next[i] = update_node(graph, ops, i, &shared[i], read, k)?;
        }
        blocks = next;
        if let Some(r) = mon.observe(k + 1, &blocks, pnorm)? {
            reason = r;
            break;
        }
    }
    Ok((StackedParams::from_blocks(&blocks)?, mon.finish(reason)))
}

/// Gradient information available to FedAvg clients.
#[derive(Debug, Clone, Copy)]
pub enum GradientOracle<'a> {
    Exact,
    /// Batch estimates for squared-error losses on these datasets.
    Batch {
        data: &'a [LocalDataset],
        ridge: f64,
        batch: usize,
    },
}

/// `⌈fraction·n⌉` clients, at least one.
pub fn sample_size(fraction: f64, n: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param("fraction", format!("must lie in (0, 1], got {fraction}")));
    }
    Ok(((fraction * n as f64).ceil() as usize).clamp(1, n))
}

fn sample_clients(n: usize, size: usize, seed: u64, label: &str, k: usize) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut r = rng::stream(seed, label, &[k as u64]);
    let mut c = rand::seq::index::sample(&mut r, n, size).into_vec();
    c.sort_unstable();
    c
}

fn server_objective(losses: &[Arc<dyn LocalLoss>], w: &DVector<f64>) -> f64 {
    losses.iter().map(|l| l.value(w)).sum::<f64>() / losses.len() as f64
}

/// Shared loop of the server-based methods: each round maps the global block
/// through `round`, logging the average local loss.
fn server_loop(
    losses: &[Arc<dyn LocalLoss>],
    w0: &DVector<f64>,
    stop: &StopRule,
    mut round: impl FnMut(usize, &DVector<f64>) -> Result<DVector<f64>>,
) -> Result<(DVector<f64>, Trace)> {
    stop.validate()?;
    if losses.is_empty() {
        return Err(Error::param("losses", "need at least one client"));
    }
    if let Some(l) = losses.iter().find(|l| l.dim() != w0.len()) {
        return Err(Error::DimensionMismatch {
            expected: w0.len(),
            got: l.dim(),
        });
    }
    let dist = |w: &DVector<f64>| stop.oracle.as_ref().map(|o| (w - o).norm());
    let grad_norm = |w: &DVector<f64>| {
        (losses.iter().map(|l| l.gradient(w)).sum::<DVector<f64>>() / losses.len() as f64).norm()
    };
    let mut w = w0.clone();
    let mut f = server_objective(losses, &w);
    let limit = DIVERGENCE_FACTOR * f.abs().max(1.0);
    let mut records = vec![IterRecord {
        k: 0,
        objective: f,
        grad_norm: grad_norm(&w),
        dist: dist(&w),
    }];
    let mut iterates = Vec::new();
    if stop.keep_iterates {
        iterates.push(w.clone());
    }
    let mut reason = StopReason::MaxIters;
    for k in 1..=stop.max_iters {
        let next = round(k, &w)?;
        let f_next = server_objective(losses, &next);
        if !f_next.is_finite() || next.iter().any(|x| !x.is_finite()) || f_next > limit {
            return Err(Error::Divergence {
                k,
                reason: format!("global objective {f_next:e}"),
            });
        }
        let rec = IterRecord {
            k,
            objective: f_next,
            grad_norm: grad_norm(&next),
            dist: dist(&next),
        };
        let change = (f - f_next).abs();
        w = next;
        f = f_next;
        if stop.keep_iterates {
            iterates.push(w.clone());
        }
        let hit = matches!((rec.dist, stop.dist_tol), (Some(e), Some(t)) if e <= t);
        records.push(rec);
        if hit {
            reason = StopReason::DistTol;
            break;
        }
        if matches!(stop.obj_tol, Some(t) if change <= t) {
            reason = StopReason::ObjTol;
            break;
        }
    }
    Ok((w, Trace { records, reason, iterates }))
}

/// Server-based averaging: per round, the sampled clients run `local_steps`
/// gradient steps from the global block and the server averages the results.
#[allow(clippy::too_many_arguments)]
pub fn fedavg_run(
    losses: &[Arc<dyn LocalLoss>],
    oracle: GradientOracle<'_>,
    w0: &DVector<f64>,
    local_steps: usize,
    clients_per_round: usize,
    sched: LRSchedule,
    stop: &StopRule,
    seed: u64,
) -> Result<(DVector<f64>, Trace)> {
    sched.validate()?;
    let n = losses.len();
    if local_steps == 0 {
        return Err(Error::param("local_steps", "must be at least 1"));
    }
    if clients_per_round == 0 || clients_per_round > n {
        return Err(Error::param("clients_per_round", format!("must lie in [1, {n}]")));
    }
    if let GradientOracle::Batch { data, batch, .. } = oracle {
        if data.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: data.len() });
        }
        if batch == 0 {
            return Err(Error::param("batch", "must be at least 1"));
        }
    }
    server_loop(losses, w0, stop, |k, w| {
        let eta = sched.rate(k);
        let clients = sample_clients(n, clients_per_round, seed, "fedavg/clients", k);
        let mut sum = DVector::zeros(w.len());
        for &i in &clients {
            let mut v = w.clone();
            for r in 0..local_steps {
                let g = match oracle {
                    GradientOracle::Exact => losses[i].gradient(&v),
                    GradientOracle::Batch { data, ridge, batch } => {
                        let ds = &data[i];
                        let b = batch.min(ds.len());
                        let mut rr = rng::stream(seed, "fedavg/batch", &[i as u64, k as u64, r as u64]);
                        let rows = rand::seq::index::sample(&mut rr, ds.len(), b).into_vec();
                        batch_gradient(ds, ridge, &v, &rows)
                    }
                };
                v -= g * eta;
            }
            sum += v;
        }
        Ok(sum / clients.len() as f64)
    })
}

/// Server-based proximal averaging: sampled clients return
/// `argmin L_i(v) + (1/η)‖v − w‖²`, i.e. `prox_{L_i}(w, 2/η)`.
pub fn fedprox_run(
    losses: &[Arc<dyn LocalLoss>],
    w0: &DVector<f64>,
    clients_per_round: usize,
    eta: f64,
    stop: &StopRule,
    seed: u64,
) -> Result<(DVector<f64>, Trace)> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::param("eta", format!("must be positive, got {eta}")));
    }
    let n = losses.len();
    if clients_per_round == 0 || clients_per_round > n {
        return Err(Error::param("clients_per_round", format!("must lie in [1, {n}]")));
    }
    let rho = 2.0 / eta;
    server_loop(losses, w0, stop, |k, w| {
        let clients = sample_clients(n, clients_per_round, seed, "fedprox/clients", k);
        let mut sum = DVector::zeros(w.len());
        for &i in &clients {
            let v = losses[i]
                .prox(w, rho)
                .unwrap_or_else(|| Err(Error::Precondition(format!("loss at client {i} has no proximal map"))))?;
            sum += v;
        }
        Ok(sum / clients.len() as f64)
    })
}

/// Predictions of one neighbor on a test set shared with the updating node.
#[derive(Debug, Clone)]
pub struct NeighborPredictions {
    pub weight: f64,
    pub test_x: DMatrix<f64>,
    pub predictions: DVector<f64>,
}

/// Linear-model update that only needs neighbors' predictions: minimizes
/// `(1/m)‖y − Xw‖² + α Σ A (1/m')‖ŷ' − X'w‖²`, i.e. least squares on the
/// local data augmented with the reweighted neighbor predictions.
pub fn agnostic_relax_step(ds: &LocalDataset, neighbors: &[NeighborPredictions], alpha: f64) -> Result<DVector<f64>> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::param("alpha", format!("must be nonnegative, got {alpha}")));
    }
    let no_tests = neighbors.iter().all(|nb| nb.test_x.nrows() == 0);
    if ds.is_empty() && (no_tests || alpha == 0.0) {
        return Err(Error::Precondition("no local data and no neighbor predictions".into()));
    }
    let mut loss = QuadLoss::from_dataset(ds, 0.0)?;
    for nb in neighbors {
        loss = loss.augment_explainability(&nb.test_x, &nb.predictions, alpha * nb.weight)?;
    }
    loss.minimizer()
}

/// `κ^{k/(2B+1)}·r0`.
pub fn async_bound(kappa: f64, bound: usize, k: usize, r0: f64) -> Result<f64> {
    if !(kappa.is_finite() && (0.0..1.0).contains(&kappa)) {
        return Err(Error::param("kappa", format!("must lie in [0, 1), got {kappa}")));
    }
    Ok(kappa.powf(k as f64 / (2 * bound + 1) as f64) * r0)
}

/// `1/(1 + σ/(2αd))` for one node.
pub fn node_pseudo_contraction(sigma: f64, alpha: f64, degree: f64) -> f64 {
    let coupling = 2.0 * alpha * degree;
    if coupling <= 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + sigma / coupling)
}

/// Max-norm contraction factor of the FedRelax operators: the largest
/// per-node `1/(1 + σ_i/(2αd_i))` with `σ_i = 2λ_min(Q_i)`.
pub fn pseudo_contraction(p: &GTVMinProblem) -> Result<f64> {
    require_sq_norm(p, "the pseudo-contraction factor")?;
    let quads = p.quad_losses()?;
    Ok(quads
        .iter()
        .enumerate()
        .map(|(i, q)| node_pseudo_contraction(q.strong_convexity(), p.alpha(), p.graph().degree(i)))
        .fold(0.0, f64::max))
}
