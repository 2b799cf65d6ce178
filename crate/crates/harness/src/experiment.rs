//! End-to-end experiment: graph, data, attacks, train/validation split,
//! GTVMin problem, solver run, metrics and bound checks.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use netfl::algorithms::{
    async_bound, fedavg_run, fedgd_ops, fedprox_run, fedrelax_ops, fedsgd_ops, pseudo_contraction, run_async,
    run_sync, sample_size, AsyncSchedule, GradientOracle, Hooks, Operators, RunConfig,
};
use netfl::graph::{consensus_split, two_cluster_labels, Penalty};
use netfl::graphlearn::{learn_graph_budget, learn_graph_degree, DegreeLearnConfig, DiscrepancyMatrix, Payload};
use netfl::gtvmin::GTVMinProblem;
use netfl::localmodel::{LocalDataset, LocalLoss, QuadLoss};
use netfl::optim::{contraction, perturbed_bound, LRSchedule, StopReason, StopRule};
use netfl::rng::{self, derive_seed};
use netfl::synth::{self, NodeData};
use netfl::trust::{poison_dataset, AttackKind, RobustAgg};
use netfl::{EmpGraph, StackedParams};
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};
use std::sync::Arc;

use crate::config::{
    AlgorithmKind, DataModel, DataSpec, ExperimentConfig, GraphSpec, LearnMethod, LrSpec, PayloadKind, ScheduleSpec,
};
use crate::report::{BoundCheck, Environment, EventTotals, NodeDiagnosis, Report, Row, Summary};

/// Spectral checks assemble the full `nd × nd` matrix; skip them above this size.
const MAX_SPECTRAL_DIM: usize = 2000;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: netfl::Error,
    },
    #[error("{context}: cannot read {path}: {source}")]
    Io {
        context: String,
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Invalid { context: String, message: String },
}

trait Context<T> {
    fn context(self, key: &str) -> Result<T, ExperimentError>;
}

impl<T> Context<T> for netfl::Result<T> {
    fn context(self, key: &str) -> Result<T, ExperimentError> {
        self.map_err(|source| ExperimentError::Core {
            context: key.to_string(),
            source,
        })
    }
}

fn invalid(context: &str, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Invalid {
        context: context.to_string(),
        message: message.into(),
    }
}

fn read(path: &Path, key: &str) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        context: key.to_string(),
        path: path.display().to_string(),
        source,
    })
}

/// Seed of a named stream of the master seed.
pub fn stream_seed(master: u64, name: &str) -> u64 {
    derive_seed(master, name, &[])
}

/// Hex SHA-256 of the config's canonical JSON form.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Seeded per-node split of row indices into (train, validation), with
/// `round(split·m)` training rows.
pub fn split_rows(sizes: &[usize], split: f64, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    let split_seed = stream_seed(seed, "split");
    sizes
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut rows: Vec<usize> = (0..m).collect();
            rows.shuffle(&mut rng::stream(split_seed, "split/node", &[i as u64]));
            let cut = ((split * m as f64).round() as usize).min(m);
            let mut train = rows[..cut].to_vec();
            let mut val = rows[cut..].to_vec();
            train.sort_unstable();
            val.sort_unstable();
            (train, val)
        })
        .collect()
}

/// Training and validation error of one node; absent when the side is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainVal {
    pub train_err: Option<f64>,
    pub val_err: Option<f64>,
}

/// Mean squared error of each node's block on its seeded train and
/// validation rows. Uses the same split as [`run_experiment`] for `seed`.
pub fn train_val_report(
    datasets: &[LocalDataset],
    blocks: &[DVector<f64>],
    split: f64,
    seed: u64,
) -> Result<(Vec<TrainVal>, Vec<String>), ExperimentError> {
    if !(split > 0.0 && split <= 1.0) {
        return Err(invalid("split", format!("must lie in (0, 1], got {split}")));
    }
    if datasets.len() != blocks.len() {
        return Err(invalid("blocks", format!("{} blocks for {} nodes", blocks.len(), datasets.len())));
    }
    let sizes: Vec<usize> = datasets.iter().map(LocalDataset::len).collect();
    let splits = split_rows(&sizes, split, seed);
    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(datasets.len());
    for (i, ((ds, w), (tr, va))) in datasets.iter().zip(blocks).zip(&splits).enumerate() {
        if w.len() != ds.dim() {
            return Err(invalid("blocks", format!("node {i}: block of length {} for {} features", w.len(), ds.dim())));
        }
        for (side, rows) in [("training", tr), ("validation", va)] {
            if rows.is_empty() {
                warnings.push(format!("node {i}: empty {side} split"));
            }
        }
        out.push(TrainVal {
            train_err: ds.select(tr).mean_squared_error(w),
            val_err: ds.select(va).mean_squared_error(w),
        });
    }
    Ok((out, warnings))
}

/// Datasets of all nodes, with the generator's ground truth when synthetic.
struct Data {
    datasets: Vec<LocalDataset>,
    generated: Option<(NodeData, f64)>,
}

fn load_data(spec: &DataSpec, n: Option<usize>, seed: u64) -> Result<Data, ExperimentError> {
    match spec {
        DataSpec::Csv { paths } => {
            let mut datasets = Vec::with_capacity(paths.len());
            for (i, p) in paths.iter().enumerate() {
                let key = format!("data.paths[{i}]");
                datasets.push(LocalDataset::parse_csv(&read(p, &key)?).context(&key)?);
            }
            if let Some(d) = datasets.first().map(LocalDataset::dim) {
                if let Some(i) = datasets.iter().position(|ds| ds.dim() != d) {
                    return Err(invalid(
                        &format!("data.paths[{i}]"),
                        format!("{} features, node 0 has {d}", datasets[i].dim()),
                    ));
                }
            }
            Ok(Data {
                datasets,
                generated: None,
            })
        }
        DataSpec::Generate {
            model,
            n: data_n,
            d,
            m_min,
            m_max,
            noise_std,
        } => {
            let n = data_n.or(n).ok_or_else(|| invalid("data.n", "node count unknown"))?;
            let sizes = synth::random_sizes(n, *m_min, *m_max, seed).context("data")?;
            let nd = match model {
                DataModel::Common => synth::common_model_data(&sizes, *d, *noise_std, seed),
                DataModel::TwoCluster => synth::two_cluster_data(&sizes, *d, *noise_std, seed),
                DataModel::Independent => {
                    let params: Vec<DVector<f64>> = (0..n)
                        .map(|i| synth::gaussian_vector(*d, seed, "data/w_node", i as u64))
                        .collect();
                    synth::node_data(&params, &sizes, *noise_std, seed)
                }
            }
            .context("data")?;
            Ok(Data {
                datasets: nd.datasets.clone(),
                generated: Some((nd, *noise_std)),
            })
        }
    }
}

/// Learn a graph from what each node shares about its dataset.
pub fn learn_graph(
    method: LearnMethod,
    payload: PayloadKind,
    train: &[LocalDataset],
    ridge: f64,
    seed: u64,
) -> netfl::Result<EmpGraph> {
    let d = train.first().map_or(0, LocalDataset::dim);
    let vectors: Vec<DVector<f64>> = match payload {
        PayloadKind::Scalar => train
            .iter()
            .map(|ds| DVector::from_element(1, if ds.is_empty() { 0.0 } else { ds.y().mean() }))
            .collect(),
        // A small ridge keeps the estimate defined when m_i < d.
        PayloadKind::Param => train
            .iter()
            .map(|ds| {
                QuadLoss::from_dataset(ds, ridge.max(1e-6))
                    .and_then(|q| q.minimizer())
                    .unwrap_or_else(|_| DVector::zeros(d))
            })
            .collect(),
        PayloadKind::Gradient => Vec::new(),
    };
    let losses: Vec<QuadLoss> = match payload {
        PayloadKind::Gradient => train
            .iter()
            .map(|ds| QuadLoss::from_dataset(ds, ridge))
            .collect::<netfl::Result<_>>()?,
        _ => Vec::new(),
    };
    let probe = DVector::zeros(d);
    let payloads: Vec<Payload<'_>> = match payload {
        PayloadKind::Scalar => vectors.iter().map(Payload::Scalar).collect(),
        PayloadKind::Param => vectors.iter().map(Payload::Param).collect(),
        PayloadKind::Gradient => losses
            .iter()
            .map(|l| Payload::Gradient {
                loss: l,
                probe: &probe,
            })
            .collect(),
    };
    let dm = DiscrepancyMatrix::from_payloads(&payloads)?;
    match method {
        LearnMethod::Budget { budget } => learn_graph_budget(&dm, budget),
        LearnMethod::Degree { d_max } => learn_graph_degree(
            &dm,
            d_max,
            &DegreeLearnConfig {
                seed,
                ..DegreeLearnConfig::default()
            },
        ),
    }
}

fn build_problem(graph: &EmpGraph, train: &[LocalDataset], cfg: &ExperimentConfig) -> netfl::Result<GTVMinProblem> {
    let a = &cfg.algorithm;
    match a.penalty {
        Penalty::SqNorm => GTVMinProblem::from_datasets(graph.clone(), train, a.ridge, a.alpha),
        Penalty::Norm => {
            let losses = train
                .iter()
                .map(|ds| QuadLoss::from_dataset(ds, a.ridge).map(|q| Arc::new(q) as Arc<dyn LocalLoss>))
                .collect::<netfl::Result<Vec<_>>>()?;
            GTVMinProblem::new(graph.clone(), losses, a.alpha, Penalty::Norm)
        }
    }
}

fn extreme_eigenvalues(m: DMatrix<f64>) -> (f64, f64) {
    let ev = m.symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Minimizer of `Σ L_i(w)` over a single shared block.
fn consensus_minimizer(p: &GTVMinProblem) -> netfl::Result<DVector<f64>> {
    let quads = p.quad_losses()?;
    let d = p.dim();
    let mut qm = DMatrix::zeros(d, d);
    let mut qv = DVector::zeros(d);
    let mut c = 0.0;
    for q in quads {
        qm += q.q_mat();
        qv += q.q_vec();
        c += q.offset();
    }
    QuadLoss::new(qm, qv, c)?.minimizer()
}

/// Everything the solver produced, replicated into stacked form for
/// server-based methods.
struct RunOutput {
    states: Vec<StackedParams>,
    perturbation_norms: Vec<f64>,
    reason: StopReason,
}

fn resolve_lr(spec: LrSpec, p: &GTVMinProblem, kind: AlgorithmKind) -> Result<LRSchedule, ExperimentError> {
    let sched = match spec {
        LrSpec::Constant { eta } => LRSchedule::Constant { eta },
        LrSpec::Diminishing { c } => LRSchedule::Diminishing { c },
        LrSpec::Optimal if kind.is_graph_based() => {
            let (q, _, _) = p.assemble().context("algorithm.lr")?;
            let (lambda_min, lambda_max) = extreme_eigenvalues(q);
            LRSchedule::Optimal {
                lambda_min,
                lambda_max,
            }
        }
        LrSpec::Optimal => {
            let s = p.eig_summaries().context("algorithm.lr")?;
            LRSchedule::Optimal {
                lambda_min: s.lambda_bar_min,
                lambda_max: s.lambda_max,
            }
        }
    };
    sched
        .validate()
        .map_err(|e| invalid("algorithm.lr", format!("{e}; set algorithm.eta instead")))?;
    Ok(sched)
}

#[allow(clippy::too_many_arguments)]
fn run_graph_based(
    cfg: &ExperimentConfig,
    graph: &EmpGraph,
    problem: &GTVMinProblem,
    train: &[LocalDataset],
    oracle: Option<&StackedParams>,
    lr: Option<LRSchedule>,
) -> Result<RunOutput, ExperimentError> {
    let a = &cfg.algorithm;
    let n = graph.n();
    let d = problem.dim();
    let ops: Operators = match a.kind {
        AlgorithmKind::Fedgd => fedgd_ops(problem, lr.expect("rate resolved")),
        AlgorithmKind::Fedsgd => fedsgd_ops(
            problem,
            train,
            a.ridge,
            a.batch.unwrap_or(1),
            stream_seed(cfg.seed, "batches"),
            lr.expect("rate resolved"),
        ),
        _ => fedrelax_ops(problem, cfg.defense),
    }
    .context("algorithm")?;

    let dp = cfg.dp;
    let perturb = move |i: usize, k: usize, b: &DVector<f64>| -> Option<DVector<f64>> {
        dp.map(|m| m.sample(b.len(), &[i as u64, k as u64]))
    };
    let model_attacks: Vec<_> = cfg.attacks.iter().filter(|s| !s.is_data_attack()).cloned().collect();
    let outgoing = |i: usize, _k: usize, b: &DVector<f64>| -> Option<DVector<f64>> {
        model_attacks.iter().find_map(|s| s.outgoing(i, b))
    };
    let hooks = Hooks {
        perturb: dp.is_some().then_some(&perturb as _),
        outgoing: (!model_attacks.is_empty()).then_some(&outgoing as _),
    };
    let mut rc = RunConfig::events(cfg.stop.max_events)
        .monitor(problem)
        .keep_states()
        .hooks(hooks);
    if let Some(o) = oracle {
        rc = rc.oracle(o, cfg.stop.dist_tol);
    } else if cfg.stop.dist_tol.is_some() {
        return Err(invalid("stop.dist_tol", "no oracle solution for this problem"));
    }
    if let Some(t) = cfg.stop.obj_tol {
        rc = rc.obj_tol(t);
    }
    let w0 = StackedParams::zeros(n, d);
    let horizon = cfg.stop.max_events;
    let sched_seed = stream_seed(cfg.seed, "schedule");
    let (_, trace) = match cfg.schedule {
        ScheduleSpec::Sync => run_sync(graph, &ops, &w0, &rc),
        ScheduleSpec::PartiallyAsync { bound, p_active } => {
            let s = AsyncSchedule::partially_async(graph, horizon, bound, p_active, sched_seed).context("schedule")?;
            run_async(graph, &ops, &w0, &s, &rc)
        }
        ScheduleSpec::TotallyAsync { granularity, p_active } => {
            let s = AsyncSchedule::totally_async(graph, horizon, granularity, p_active, sched_seed)
                .context("schedule")?;
            run_async(graph, &ops, &w0, &s, &rc)
        }
    }
    .context("run")?;
    Ok(RunOutput {
        perturbation_norms: trace.records.iter().map(|r| r.perturbation_norm).collect(),
        states: trace.states,
        reason: trace.reason,
    })
}

fn run_server_based(
    cfg: &ExperimentConfig,
    problem: &GTVMinProblem,
    train: &[LocalDataset],
    oracle: Option<&DVector<f64>>,
    lr: Option<LRSchedule>,
) -> Result<RunOutput, ExperimentError> {
    let a = &cfg.algorithm;
    let n = problem.n();
    let mut stop = StopRule::iters(cfg.stop.max_events).keeping_iterates();
    if let Some(t) = cfg.stop.obj_tol {
        stop = stop.with_obj_tol(t);
    }
    match oracle {
        Some(o) => stop = stop.with_oracle(o.clone(), cfg.stop.dist_tol),
        None if cfg.stop.dist_tol.is_some() => {
            return Err(invalid("stop.dist_tol", "no oracle solution for this problem"));
        }
        None => {}
    }
    let clients = sample_size(a.participation, n).context("algorithm.participation")?;
    let w0 = DVector::zeros(problem.dim());
    let seed = stream_seed(cfg.seed, "schedule");
    let (_, trace) = match a.kind {
        AlgorithmKind::Fedavg => {
            let grad = match a.batch {
                Some(batch) => GradientOracle::Batch {
                    data: train,
                    ridge: a.ridge,
                    batch,
                },
                None => GradientOracle::Exact,
            };
            fedavg_run(
                problem.losses(),
                grad,
                &w0,
                a.local_steps,
                clients,
                lr.expect("rate resolved"),
                &stop,
                seed,
            )
        }
        _ => {
            let eta = match a.lr {
                LrSpec::Constant { eta } => eta,
                _ => unreachable!("validated"),
            };
            fedprox_run(problem.losses(), &w0, clients, eta, &stop, seed)
        }
    }
    .context("run")?;
    Ok(RunOutput {
        perturbation_norms: vec![0.0; trace.iterates.len()],
        states: trace.iterates.iter().map(|w| StackedParams::replicated(n, w)).collect(),
        reason: trace.reason,
    })
}

fn node_gtv(graph: &EmpGraph, penalty: Penalty, w: &StackedParams, i: usize) -> f64 {
    let wi = w.block(i);
    0.5 * graph
        .neighbors(i)
        .iter()
        .map(|&(j, a)| a * penalty.apply((wi - w.block(j)).norm()))
        .sum::<f64>()
}

/// Run a validated config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let mut warnings = Vec::new();
    let graph_seed = stream_seed(cfg.seed, "graph");

    let pre_graph = match &cfg.graph {
        GraphSpec::Generate {
            kind,
            n,
            weight,
            max_tries,
        } => Some(synth::connected_graph(*kind, *n, *weight, graph_seed, *max_tries).context("graph")?),
        GraphSpec::EdgeList { path } => Some(EmpGraph::parse_edge_list(&read(path, "graph.path")?).context("graph.path")?),
        GraphSpec::Learn { .. } => None,
    };

    let data = load_data(&cfg.data, pre_graph.as_ref().map(EmpGraph::n), stream_seed(cfg.seed, "data"))?;
    let n = data.datasets.len();
    if n == 0 {
        return Err(invalid("data", "no nodes"));
    }
    if let Some(g) = &pre_graph {
        if g.n() != n {
            return Err(invalid("data", format!("{n} datasets for a graph with {} nodes", g.n())));
        }
    }
    let d = data.datasets[0].dim();

    let mut poisoned = data.datasets.clone();
    for (ai, spec) in cfg.attacks.iter().enumerate() {
        let key = format!("attacks[{ai}]");
        spec.validate(n).context(&key)?;
        if let AttackKind::FeaturePoison { delta_x, .. } = &spec.kind {
            if delta_x.len() != d {
                return Err(invalid(&key, format!("delta_x has {} entries for {d} features", delta_x.len())));
            }
        }
        if spec.is_data_attack() {
            for &v in &spec.victims {
                poisoned[v] = poison_dataset(&poisoned[v], spec, v).context(&key)?;
            }
        }
    }

    let sizes: Vec<usize> = poisoned.iter().map(LocalDataset::len).collect();
    let splits = split_rows(&sizes, cfg.split, cfg.seed);
    let train: Vec<LocalDataset> = poisoned.iter().zip(&splits).map(|(ds, (t, _))| ds.select(t)).collect();
    let val: Vec<LocalDataset> = poisoned.iter().zip(&splits).map(|(ds, (_, v))| ds.select(v)).collect();
    for (side, sets) in [("training", &train), ("validation", &val)] {
        let empty: Vec<usize> = (0..n).filter(|&i| sets[i].is_empty()).collect();
        if !empty.is_empty() {
            warnings.push(format!("empty {side} split at nodes {empty:?}"));
        }
    }

    let graph = match (pre_graph, &cfg.graph) {
        (Some(g), _) => g,
        (None, GraphSpec::Learn { method, payload }) => {
            learn_graph(*method, *payload, &train, cfg.algorithm.ridge, graph_seed).context("graph")?
        }
        (None, _) => unreachable!("graph built above"),
    };
    if !graph.is_connected() {
        warnings.push("graph is not connected".into());
    }

    let problem = build_problem(&graph, &train, cfg).context("algorithm")?;
    let kind = cfg.algorithm.kind;
    let graph_based = kind.is_graph_based();

    let oracle: Option<StackedParams> = if problem.penalty() != Penalty::SqNorm {
        warnings.push("no direct solution for the norm penalty; distances to the oracle are not reported".into());
        None
    } else if graph_based {
        match problem.solve_direct() {
            Ok(o) => Some(o),
            Err(e) => {
                warnings.push(format!("no oracle solution: {e}"));
                None
            }
        }
    } else {
        match consensus_minimizer(&problem) {
            Ok(w) => Some(StackedParams::replicated(n, &w)),
            Err(e) => {
                warnings.push(format!("no consensus oracle: {e}"));
                None
            }
        }
    };

    let lr = match kind {
        AlgorithmKind::Fedgd | AlgorithmKind::Fedsgd | AlgorithmKind::Fedavg => {
            Some(resolve_lr(cfg.algorithm.lr, &problem, kind)?)
        }
        _ => None,
    };

    let out = if graph_based {
        run_graph_based(cfg, &graph, &problem, &train, oracle.as_ref(), lr)?
    } else {
        let o = oracle.as_ref().map(|o| o.block_owned(0));
        run_server_based(cfg, &problem, &train, o.as_ref(), lr)?
    };

    let mut events = Vec::with_capacity(out.states.len());
    for (k, w) in out.states.iter().enumerate() {
        events.push(EventTotals {
            event: k,
            objective: problem.objective(w).context("metrics")?,
            gtv: graph.gtv_value(w, problem.penalty()).context("metrics")?,
            dist_oracle: oracle.as_ref().map(|o| w.distance(o)),
            perturbation_norm: out.perturbation_norms.get(k).copied().unwrap_or(0.0),
        });
    }

    let mut rows = Vec::with_capacity(n * out.states.len().saturating_sub(1));
    for (k, w) in out.states.iter().enumerate().skip(1) {
        for i in 0..n {
            let wi = w.block_owned(i);
            rows.push(Row {
                event: k,
                node: i,
                objective: problem.losses()[i].value(&wi),
                gtv: node_gtv(&graph, problem.penalty(), w, i),
                train_err: train[i].mean_squared_error(&wi),
                val_err: val[i].mean_squared_error(&wi),
                dist_oracle: oracle.as_ref().map(|o| (&wi - o.block(i)).norm()),
            });
        }
    }

    let last = out.states.last().expect("initial state recorded");
    let baseline = data.generated.as_ref().map(|(_, s)| s * s);
    let diagnosis = (0..n)
        .map(|i| {
            let wi = last.block_owned(i);
            let train_err = train[i].mean_squared_error(&wi);
            let val_err = val[i].mean_squared_error(&wi);
            let overfitting = match (train_err, val_err) {
                (Some(t), Some(v)) => v > 2.0 * t + baseline.unwrap_or(0.0),
                _ => false,
            };
            NodeDiagnosis {
                node: i,
                train_err,
                val_err,
                overfitting,
            }
        })
        .collect();

    let final_totals = events.last().expect("initial state recorded");
    let oracle_scale = oracle.as_ref().map_or(0.0, |o| o.flat().norm());
    let converged = match out.reason {
        StopReason::ObjTol | StopReason::DistTol => true,
        StopReason::MaxIters => final_totals
            .dist_oracle
            .is_some_and(|e| e <= 1e-6 * (1.0 + oracle_scale)),
    };

    let checks = BoundContext {
        cfg,
        problem: &problem,
        data: &data,
        poisoned_train: &train,
        splits: &splits,
        oracle: oracle.as_ref(),
        out: &out,
        lr,
    }
    .run(&mut warnings);

    Ok(Report {
        environment: Environment {
            seed: cfg.seed,
            config_hash: config_hash(cfg),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        summary: Summary {
            converged,
            stop_reason: out.reason,
            events_run: out.states.len() - 1,
            final_objective: final_totals.objective,
            final_dist_oracle: final_totals.dist_oracle,
            bound_checks: checks,
            baseline,
            diagnosis,
            warnings,
        },
        events,
        rows,
    })
}

struct BoundContext<'a> {
    cfg: &'a ExperimentConfig,
    problem: &'a GTVMinProblem,
    data: &'a Data,
    poisoned_train: &'a [LocalDataset],
    splits: &'a [(Vec<usize>, Vec<usize>)],
    oracle: Option<&'a StackedParams>,
    out: &'a RunOutput,
    lr: Option<LRSchedule>,
}

fn upper_check(name: &str, measured: f64, bound: f64) -> BoundCheck {
    BoundCheck {
        name: name.into(),
        measured,
        bound,
        margin: bound - measured,
        holds: measured <= bound * (1.0 + 1e-9) + 1e-12,
    }
}

impl BoundContext<'_> {
    fn run(&self, warnings: &mut Vec<String>) -> Vec<BoundCheck> {
        let mut checks = Vec::new();
        let p = self.problem;
        if p.penalty() != Penalty::SqNorm {
            return checks;
        }
        let spectrum = if p.n() * p.dim() <= MAX_SPECTRAL_DIM {
            p.assemble().ok().map(|(q, _, _)| extreme_eigenvalues(q))
        } else {
            warnings.push(format!("spectral checks skipped above {MAX_SPECTRAL_DIM} unknowns"));
            None
        };
        if let (Some((lmin, lmax)), Ok(b)) = (spectrum, p.eig_bounds()) {
            checks.push(upper_check("spectrum_upper", lmax, b.upper));
            if let Some(lower) = b.lower {
                checks.push(BoundCheck {
                    name: "spectrum_lower".into(),
                    measured: lmin,
                    bound: lower,
                    margin: lmin - lower,
                    holds: lmin >= lower * (1.0 - 1e-9) - 1e-12,
                });
            }
        }
        let Some(oracle) = self.oracle else {
            return checks;
        };
        let graph_based = self.cfg.algorithm.kind.is_graph_based();
        if graph_based {
            self.variation_checks(oracle, &mut checks);
            self.sensitivity_check(oracle, &mut checks);
            self.async_check(oracle, &mut checks);
            self.gd_rate_check(oracle, spectrum, &mut checks);
        }
        checks
    }

    fn train_noise(&self) -> Option<(&NodeData, Vec<f64>, Vec<usize>)> {
        let (nd, _) = self.data.generated.as_ref()?;
        let sq = nd
            .noise
            .iter()
            .zip(self.splits)
            .map(|(e, (t, _))| t.iter().map(|&r| e[r] * e[r]).sum())
            .collect();
        let sizes = self.splits.iter().map(|(t, _)| t.len()).collect();
        Some((nd, sq, sizes))
    }

    fn clean_problem(&self) -> bool {
        self.cfg.attacks.iter().all(|a| !a.is_data_attack()) && self.cfg.algorithm.ridge == 0.0
    }

    fn variation_checks(&self, oracle: &StackedParams, checks: &mut Vec<BoundCheck>) {
        let p = self.problem;
        if !self.clean_problem() || p.alpha() <= 0.0 {
            return;
        }
        let Some((nd, noise_sq, sizes)) = self.train_noise() else {
            return;
        };
        let model = match &self.cfg.data {
            DataSpec::Generate { model, .. } => *model,
            DataSpec::Csv { .. } => return,
        };
        match model {
            DataModel::Common => {
                if let Ok(bound) = p.variation_bound(&noise_sq, &sizes) {
                    let measured = consensus_split(oracle).deviations.flat().norm_squared();
                    checks.push(upper_check("variation", measured, bound));
                }
            }
            DataModel::TwoCluster => {
                let labels = two_cluster_labels(p.n());
                for c in 0..2 {
                    let cluster: Vec<usize> = (0..p.n()).filter(|&i| labels[i] == c).collect();
                    if cluster.is_empty() {
                        continue;
                    }
                    let r = (0..p.n())
                        .filter(|&i| labels[i] != c)
                        .map(|i| oracle.block(i).norm())
                        .fold(0.0, f64::max);
                    let w_bar = nd.true_params[cluster[0]].norm_squared();
                    let Ok(bound) = p.clustered_bound(&cluster, &noise_sq, &sizes, w_bar, r) else {
                        continue;
                    };
                    let mean = cluster.iter().map(|&i| oracle.block_owned(i)).sum::<DVector<f64>>()
                        / cluster.len() as f64;
                    let measured = cluster.iter().map(|&i| (oracle.block(i) - &mean).norm_squared()).sum();
                    checks.push(upper_check(&format!("clustered_variation[{c}]"), measured, bound));
                }
            }
            DataModel::Independent => {}
        }
    }

    fn sensitivity_check(&self, oracle: &StackedParams, checks: &mut Vec<BoundCheck>) {
        let attacks = &self.cfg.attacks;
        let label_only = attacks
            .iter()
            .filter(|a| a.is_data_attack())
            .all(|a| matches!(a.kind, AttackKind::LabelPoison { .. }));
        if !label_only || !attacks.iter().any(|a| matches!(a.kind, AttackKind::LabelPoison { .. })) {
            return;
        }
        let clean_train: Vec<LocalDataset> = self
            .data
            .datasets
            .iter()
            .zip(self.splits)
            .map(|(ds, (t, _))| ds.select(t))
            .collect();
        let pert: Vec<f64> = clean_train
            .iter()
            .zip(self.poisoned_train)
            .map(|(c, p)| (c.y() - p.y()).norm_squared())
            .collect();
        let Ok(clean) = build_problem(self.problem.graph(), &clean_train, self.cfg) else {
            return;
        };
        let (Ok(clean_oracle), Ok(bound)) = (clean.solve_direct(), self.problem.sensitivity_bound(&pert)) else {
            return;
        };
        let measured = (clean_oracle.flat() - oracle.flat()).norm_squared();
        checks.push(upper_check("label_sensitivity", measured, bound));
    }

    /// Distances near the rounding floor are not held to a bound that keeps shrinking.
    fn floor(oracle: &StackedParams) -> f64 {
        1e-12 * (1.0 + oracle.flat().amax())
    }

    /// Worst event of a per-event bound.
    fn worst(name: &str, pairs: impl Iterator<Item = (f64, f64)>, floor: f64) -> Option<BoundCheck> {
        let mut worst: Option<(f64, f64, f64)> = None;
        let mut holds = true;
        for (measured, bound) in pairs {
            holds &= measured <= bound * (1.0 + 1e-6) + floor;
            let ratio = measured / bound.max(f64::MIN_POSITIVE);
            if worst.is_none_or(|(r, _, _)| ratio > r) {
                worst = Some((ratio, measured, bound));
            }
        }
        worst.map(|(_, measured, bound)| BoundCheck {
            name: name.into(),
            measured,
            bound,
            margin: bound - measured,
            holds,
        })
    }

    fn unperturbed(&self) -> bool {
        self.cfg.dp.is_none() && self.cfg.attacks.iter().all(|a| a.is_data_attack())
    }

    fn async_check(&self, oracle: &StackedParams, checks: &mut Vec<BoundCheck>) {
        if self.cfg.algorithm.kind != AlgorithmKind::Fedrelax || self.cfg.defense != RobustAgg::Mean || !self.unperturbed() {
            return;
        }
        let b = match self.cfg.schedule {
            ScheduleSpec::Sync => 0,
            ScheduleSpec::PartiallyAsync { bound, .. } => bound,
            ScheduleSpec::TotallyAsync { .. } => return,
        };
        let Ok(kappa) = pseudo_contraction(self.problem) else {
            return;
        };
        let states = &self.out.states;
        let r0 = states[0].max_block_distance(oracle);
        if kappa >= 1.0 || r0 == 0.0 {
            return;
        }
        let pairs = states.iter().enumerate().skip(1).map(|(k, w)| {
            (w.max_block_distance(oracle), async_bound(kappa, b, k, r0).unwrap_or(f64::INFINITY))
        });
        checks.extend(Self::worst("async_rate", pairs, Self::floor(oracle)));
    }

    fn gd_rate_check(&self, oracle: &StackedParams, spectrum: Option<(f64, f64)>, checks: &mut Vec<BoundCheck>) {
        let model_attack = self.cfg.attacks.iter().any(|a| !a.is_data_attack());
        if self.cfg.algorithm.kind != AlgorithmKind::Fedgd || self.cfg.schedule != ScheduleSpec::Sync || model_attack {
            return;
        }
        let (Some((lmin, lmax)), Some(lr)) = (spectrum, self.lr) else {
            return;
        };
        if lr.is_diminishing() {
            return;
        }
        let kappa = contraction(lr.rate(1), lmin, lmax);
        if kappa >= 1.0 {
            return;
        }
        let states = &self.out.states;
        let r0 = states[0].distance(oracle);
        let norms = &self.out.perturbation_norms;
        let pairs = states
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, w)| (w.distance(oracle), perturbed_bound(kappa, r0, &norms[1..=k])));
        let name = if self.cfg.dp.is_some() { "perturbed_gd_rate" } else { "gd_rate" };
        checks.extend(Self::worst(name, pairs, Self::floor(oracle)));
    }
}
