//! Experiment configuration.
//!
//! A config is a TOML document. Every section and key is optional; missing
//! values take the defaults listed below. Parsing collects every problem it
//! finds instead of stopping at the first one, and by default rejects keys it
//! does not recognize.
//!
//! ```toml
//! seed = 0            # master seed, split into named streams
//! split = 0.8         # fraction of each node's rows used for training
//!
//! [graph]
//! source = "generate" # generate | edge_list | learn
//! kind = "erdos_renyi" # erdos_renyi (p) | star | chain | two_cluster (p_in, p_out)
//! n = 10
//! p = 0.5
//! weight = 1.0
//! max_tries = 100     # regenerate until connected
//! # path = "graph.txt"             (edge_list)
//! # method = "budget", budget = 5  (learn; or method = "degree", d_max = 1)
//! # payload = "param"              (learn; scalar | param | gradient)
//!
//! [data]
//! source = "generate" # generate | csv
//! model = "common"    # common | two_cluster | independent
//! d = 3
//! m_min = 5
//! m_max = 20
//! noise_std = 0.5
//! # n = 10            (needed when the graph is learned from generated data)
//! # paths = ["node_0.csv", ...]    (csv)
//!
//! [algorithm]
//! kind = "fedgd"      # fedgd | fedsgd | fedrelax | fedavg | fedprox
//! alpha = 1.0
//! penalty = "sq_norm" # sq_norm | norm
//! ridge = 0.0
//! lr = "optimal"      # optimal | constant (eta) | diminishing (c); constant if eta is set
//! # eta = 0.05, c = 0.1
//! batch = 1           # fedsgd batch; fedavg uses exact gradients unless set
//! local_steps = 1     # fedavg
//! participation = 1.0 # fedavg/fedprox client fraction
//!
//! [schedule]
//! kind = "sync"       # sync | partially_async (bound) | totally_async (granularity)
//! p_active = 0.5
//!
//! [stop]
//! max_events = 100
//! # obj_tol = 1e-12, dist_tol = 1e-8
//!
//! [[attacks]]         # label_poison | feature_poison | model_poison | dos | backdoor
//! kind = "label_poison"
//! victims = [0]
//! delta = 10.0
//! fraction = 0.2
//!
//! [defense]
//! kind = "mean"       # mean | clipped (lower, upper) | trimmed (trim) | geo_median (tol, max_iter)
//!
//! [dp]
//! kind = "gaussian"   # gaussian (sigma, or epsilon + delta + sensitivity) | laplace (b)
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use netfl::graph::{GraphKind, Penalty};
use netfl::rng::derive_seed;
use netfl::trust::{gaussian_sigma, AttackKind, AttackSpec, DPMechanism, Replacement, RobustAgg};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub split: f64,
    pub graph: GraphSpec,
    pub data: DataSpec,
    pub algorithm: AlgorithmSpec,
    pub schedule: ScheduleSpec,
    pub stop: StopSpec,
    /// Attack seeds are already derived from the master seed.
    pub attacks: Vec<AttackSpec>,
    pub defense: RobustAgg,
    pub dp: Option<DPMechanism>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum GraphSpec {
    Generate {
        kind: GraphKind,
        n: usize,
        weight: f64,
        max_tries: usize,
    },
    EdgeList {
        path: PathBuf,
    },
    Learn {
        method: LearnMethod,
        payload: PayloadKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LearnMethod {
    Budget { budget: f64 },
    Degree { d_max: f64 },
}

/// What nodes share when the graph is learned from their data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    /// Mean label.
    Scalar,
    /// Local ridge estimate.
    Param,
    /// Local loss gradient at the origin.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    Generate {
        model: DataModel,
        n: Option<usize>,
        d: usize,
        m_min: usize,
        m_max: usize,
        noise_std: f64,
    },
    Csv {
        paths: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataModel {
    Common,
    TwoCluster,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Fedgd,
    Fedsgd,
    Fedrelax,
    Fedavg,
    Fedprox,
}

impl AlgorithmKind {
    /// Runs on the graph engines rather than through a server.
    pub fn is_graph_based(self) -> bool {
        matches!(self, Self::Fedgd | Self::Fedsgd | Self::Fedrelax)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "lr", rename_all = "snake_case")]
pub enum LrSpec {
    Constant { eta: f64 },
    Diminishing { c: f64 },
    /// `1/(λ_min + λ_max)` of the assembled problem, resolved at run time.
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub kind: AlgorithmKind,
    pub alpha: f64,
    pub penalty: Penalty,
    pub ridge: f64,
    pub lr: LrSpec,
    pub batch: Option<usize>,
    pub local_steps: usize,
    pub participation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Sync,
    PartiallyAsync { bound: usize, p_active: f64 },
    TotallyAsync { granularity: usize, p_active: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopSpec {
    pub max_events: usize,
    pub obj_tol: Option<f64>,
    pub dist_tol: Option<f64>,
}

/// One problem with a config, located by its dotted key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("invalid config:\n{}", format_issues(.0))]
    Invalid(Vec<Issue>),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn format_issues(issues: &[Issue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

/// Parse and validate in strict mode; relative paths resolve against the
/// working directory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with(text, None, true).map(|(c, _)| c)
}

/// Parse with explicit strictness. In lenient mode unknown keys come back
/// as warnings.
pub fn parse_config_with(
    text: &str,
    base: Option<&Path>,
    strict: bool,
) -> Result<(ExperimentConfig, Vec<String>), ConfigError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let mut ck = Checker::default();
    check_types(&mut table, &mut ck);
    let mut unknown = Vec::new();
    let raw: RawConfig = serde_ignored::deserialize(toml::Value::Table(table), |path| unknown.push(dotted(&path)))
        .map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut warnings = Vec::new();
    for key in unknown {
        if strict {
            ck.fail(&key, "unknown key");
        } else {
            warnings.push(format!("ignoring unknown key {key}"));
        }
    }
    let cfg = raw.validate(&mut ck, base);
    if ck.issues.is_empty() {
        Ok((cfg, warnings))
    } else {
        Err(ConfigError::Invalid(ck.issues))
    }
}

#[derive(Clone, Copy)]
enum Ty {
    Str,
    UInt,
    Num,
    UIntList,
    NumList,
    StrList,
}

impl Ty {
    fn accepts(self, v: &toml::Value) -> bool {
        use toml::Value as V;
        let all = |f: fn(&V) -> bool| matches!(v, V::Array(a) if a.iter().all(f));
        match self {
            Ty::Str => v.is_str(),
            Ty::UInt => matches!(v, V::Integer(i) if *i >= 0),
            Ty::Num => matches!(v, V::Integer(_) | V::Float(_)),
            Ty::UIntList => all(|x| matches!(x, V::Integer(i) if *i >= 0)),
            Ty::NumList => all(|x| matches!(x, V::Integer(_) | V::Float(_))),
            Ty::StrList => all(V::is_str),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Ty::Str => "a string",
            Ty::UInt => "a nonnegative integer",
            Ty::Num => "a number",
            Ty::UIntList => "an array of nonnegative integers",
            Ty::NumList => "an array of numbers",
            Ty::StrList => "an array of strings",
        }
    }
}

/// Expected type of a known key; `None` leaves the key to the unknown-key check.
fn expected_type(section: &str, key: &str) -> Option<Ty> {
    use Ty::*;
    Some(match (section, key) {
        ("", "seed") => UInt,
        ("", "split") => Num,
        (_, "kind" | "source" | "method" | "payload" | "model" | "penalty" | "lr" | "rule" | "path") => Str,
        ("graph" | "data", "n") => UInt,
        ("graph", "max_tries") => UInt,
        ("graph", "p" | "p_in" | "p_out" | "weight" | "budget" | "d_max") => Num,
        ("data", "d" | "m_min" | "m_max") => UInt,
        ("data", "noise_std") => Num,
        ("data", "paths") => StrList,
        ("algorithm", "batch" | "local_steps") => UInt,
        ("algorithm", "alpha" | "ridge" | "eta" | "c" | "participation") => Num,
        ("schedule", "bound" | "granularity") => UInt,
        ("schedule", "p_active") => Num,
        ("stop", "max_events") => UInt,
        ("stop", "obj_tol" | "dist_tol") => Num,
        ("attacks", "victims") => UIntList,
        ("attacks", "trigger_feature") => UInt,
        ("attacks", "delta_x" | "value") => NumList,
        ("attacks", "delta" | "fraction" | "factor" | "magnitude" | "trigger_value" | "target_label") => Num,
        ("defense", "trim" | "max_iter") => UInt,
        ("defense", "lower" | "upper" | "tol") => Num,
        ("dp", "sigma" | "b" | "epsilon" | "delta" | "sensitivity") => Num,
        _ => return None,
    })
}

/// Report every value of the wrong type and drop it, so the typed pass can
/// continue and collect the remaining problems.
fn check_types(table: &mut toml::Table, ck: &mut Checker) {
    fn describe(v: &toml::Value) -> String {
        let s = v.to_string();
        if s.len() > 40 {
            format!("{}...", &s[..s.floor_char_boundary(40)])
        } else {
            s
        }
    }
    fn check_section(section: &str, prefix: &str, t: &mut toml::Table, ck: &mut Checker) {
        t.retain(|k, v| match expected_type(section, k) {
            Some(ty) if !ty.accepts(v) => {
                ck.fail(&format!("{prefix}{k}"), format!("expected {}, got {}", ty.name(), describe(v)));
                false
            }
            _ => true,
        });
    }
    check_section("", "", table, ck);
    let sections = ["graph", "data", "algorithm", "schedule", "stop", "defense", "dp"];
    table.retain(|k, v| {
        if k == "attacks" {
            let ok = match v {
                toml::Value::Array(items) => items.iter().all(toml::Value::is_table),
                _ => false,
            };
            if !ok {
                ck.fail("attacks", "expected an array of tables");
            }
            return ok;
        }
        if !sections.contains(&k) {
            return true;
        }
        match v {
            toml::Value::Table(t) => {
                check_section(k, &format!("{k}."), t, ck);
                true
            }
            other => {
                ck.fail(k, format!("expected a table, got {}", describe(other)));
                false
            }
        }
    });
    if let Some(toml::Value::Array(items)) = table.get_mut("attacks") {
        for (i, item) in items.iter_mut().enumerate() {
            if let toml::Value::Table(t) = item {
                check_section("attacks", &format!("attacks[{i}]."), t, ck);
            }
        }
    }
}

/// `graph.kind`, `attacks[1].delta`: the key syntax used in issues.
fn dotted(path: &serde_ignored::Path<'_>) -> String {
    use serde_ignored::Path as P;
    match path {
        P::Root => String::new(),
        P::Seq { parent, index } => format!("{}[{index}]", dotted(parent)),
        P::Map { parent, key } => match dotted(parent) {
            p if p.is_empty() => key.clone(),
            p => format!("{p}.{key}"),
        },
        P::Some { parent } | P::NewtypeStruct { parent } | P::NewtypeVariant { parent } => dotted(parent),
    }
}

/// Read a config file; relative paths resolve against its directory.
pub fn load_config(path: &Path, strict: bool) -> Result<(ExperimentConfig, Vec<String>), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_with(&text, path.parent(), strict)
}

#[derive(Default)]
struct Checker {
    issues: Vec<Issue>,
}

impl Checker {
    fn fail(&mut self, key: &str, message: impl Into<String>) {
        self.issues.push(Issue {
            key: key.to_string(),
            message: message.into(),
        });
    }

    fn positive(&mut self, key: &str, v: f64) -> f64 {
        if !(v.is_finite() && v > 0.0) {
            self.fail(key, format!("must be positive, got {v}"));
        }
        v
    }

    fn nonneg(&mut self, key: &str, v: f64) -> f64 {
        if !(v.is_finite() && v >= 0.0) {
            self.fail(key, format!("must be nonnegative, got {v}"));
        }
        v
    }

    fn finite(&mut self, key: &str, v: f64) -> f64 {
        if !v.is_finite() {
            self.fail(key, format!("must be finite, got {v}"));
        }
        v
    }

    fn probability(&mut self, key: &str, v: f64, open_left: bool) -> f64 {
        let ok = if open_left { v > 0.0 && v <= 1.0 } else { (0.0..=1.0).contains(&v) };
        if !ok {
            let range = if open_left { "(0, 1]" } else { "[0, 1]" };
            self.fail(key, format!("must lie in {range}, got {v}"));
        }
        v
    }

    fn at_least(&mut self, key: &str, v: usize, min: usize) -> usize {
        if v < min {
            self.fail(key, format!("must be at least {min}, got {v}"));
        }
        v
    }

    fn required<T>(&mut self, key: &str, v: Option<T>, why: &str) -> Option<T> {
        if v.is_none() {
            self.fail(key, format!("required {why}"));
        }
        v
    }

    fn path(&mut self, key: &str, p: &Path, base: Option<&Path>) -> PathBuf {
        let full = match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        };
        if !full.is_file() {
            self.fail(key, format!("file {} does not exist", full.display()));
        }
        full
    }

    fn choice<'a>(&mut self, key: &str, v: Option<&'a str>, default: &'a str, allowed: &[&str]) -> &'a str {
        let v = v.unwrap_or(default);
        if !allowed.contains(&v) {
            self.fail(key, format!("unknown value {v:?}, expected one of {}", allowed.join(", ")));
        }
        v
    }
}

/// Integer or float in the TOML source.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Num {
    Int(i64),
    Float(f64),
}

impl Num {
    fn get(self) -> f64 {
        match self {
            Num::Int(i) => i as f64,
            Num::Float(f) => f,
        }
    }
}

fn num(v: Option<Num>, default: f64) -> f64 {
    v.map_or(default, Num::get)
}

#[derive(Debug, Default, Deserialize)]
struct RawConfig {
    seed: Option<u64>,
    split: Option<Num>,
    graph: Option<RawGraph>,
    data: Option<RawData>,
    algorithm: Option<RawAlgorithm>,
    schedule: Option<RawSchedule>,
    stop: Option<RawStop>,
    #[serde(default)]
    attacks: Vec<RawAttack>,
    defense: Option<RawDefense>,
    dp: Option<RawDp>,
}

#[derive(Debug, Default, Deserialize)]
struct RawGraph {
    source: Option<String>,
    kind: Option<String>,
    n: Option<usize>,
    p: Option<Num>,
    p_in: Option<Num>,
    p_out: Option<Num>,
    weight: Option<Num>,
    max_tries: Option<usize>,
    path: Option<PathBuf>,
    method: Option<String>,
    budget: Option<Num>,
    d_max: Option<Num>,
    payload: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct RawData {
    source: Option<String>,
    model: Option<String>,
    n: Option<usize>,
    d: Option<usize>,
    m_min: Option<usize>,
    m_max: Option<usize>,
    noise_std: Option<Num>,
    paths: Option<Vec<PathBuf>>,
}

#[derive(Debug, Default, Deserialize)]
struct RawAlgorithm {
    kind: Option<String>,
    alpha: Option<Num>,
    penalty: Option<String>,
    ridge: Option<Num>,
    lr: Option<String>,
    eta: Option<Num>,
    c: Option<Num>,
    batch: Option<usize>,
    local_steps: Option<usize>,
    participation: Option<Num>,
}

#[derive(Debug, Default, Deserialize)]
struct RawSchedule {
    kind: Option<String>,
    bound: Option<usize>,
    granularity: Option<usize>,
    p_active: Option<Num>,
}

#[derive(Debug, Default, Deserialize)]
struct RawStop {
    max_events: Option<usize>,
    obj_tol: Option<Num>,
    dist_tol: Option<Num>,
}

#[derive(Debug, Default, Deserialize)]
struct RawAttack {
    kind: Option<String>,
    victims: Option<Vec<usize>>,
    delta: Option<Num>,
    fraction: Option<Num>,
    delta_x: Option<Vec<Num>>,
    rule: Option<String>,
    value: Option<Vec<Num>>,
    factor: Option<Num>,
    magnitude: Option<Num>,
    trigger_feature: Option<usize>,
    trigger_value: Option<Num>,
    target_label: Option<Num>,
}

#[derive(Debug, Default, Deserialize)]
struct RawDefense {
    kind: Option<String>,
    lower: Option<Num>,
    upper: Option<Num>,
    trim: Option<usize>,
    tol: Option<Num>,
    max_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct RawDp {
    kind: Option<String>,
    sigma: Option<Num>,
    b: Option<Num>,
    epsilon: Option<Num>,
    delta: Option<Num>,
    sensitivity: Option<Num>,
}

impl RawConfig {
    fn validate(self, ck: &mut Checker, base: Option<&Path>) -> ExperimentConfig {
        let seed = self.seed.unwrap_or(0);
        let split = num(self.split, 0.8);
        if !(split > 0.0 && split <= 1.0) {
            ck.fail("split", format!("must lie in (0, 1], got {split}"));
        }
        let graph = self.graph.unwrap_or_default().validate(ck, base);
        let data = self.data.unwrap_or_default().validate(ck, base, &graph);
        let algorithm = self.algorithm.unwrap_or_default().validate(ck);
        let schedule = self.schedule.unwrap_or_default().validate(ck);
        let stop = self.stop.unwrap_or_default().validate(ck);
        let attacks: Vec<AttackSpec> = self
            .attacks
            .into_iter()
            .enumerate()
            .filter_map(|(i, a)| a.validate(ck, &format!("attacks[{i}]"), derive_seed(seed, "attacks", &[i as u64])))
            .collect();
        let defense = self.defense.unwrap_or_default().validate(ck);
        let dp = self.dp.map(|d| d.validate(ck, derive_seed(seed, "noise", &[])));

        if !algorithm.kind.is_graph_based() {
            if schedule != ScheduleSpec::Sync {
                ck.fail("schedule.kind", "server-based algorithms run synchronously");
            }
            if dp.is_some() {
                ck.fail("dp", "noise injection needs a graph-based algorithm");
            }
            if attacks.iter().any(|a| !a.is_data_attack()) {
                ck.fail("attacks", "model-level attacks need a graph-based algorithm");
            }
        }
        if defense != RobustAgg::Mean && algorithm.kind != AlgorithmKind::Fedrelax {
            ck.fail("defense.kind", "robust aggregation is only used by fedrelax");
        }
        if algorithm.penalty == Penalty::Norm && algorithm.kind != AlgorithmKind::Fedrelax {
            ck.fail("algorithm.penalty", "the norm penalty is only supported by fedrelax");
        }
        if let GraphSpec::Generate { n, .. } = &graph {
            for a in &attacks {
                if let Some(&v) = a.victims.iter().find(|&&v| v >= *n) {
                    ck.fail("attacks.victims", format!("node {v} out of range for {n} nodes"));
                }
            }
        }
        if let Some(d) = data_dim(&data) {
            for a in &attacks {
                match &a.kind {
                    AttackKind::FeaturePoison { delta_x, .. } if delta_x.len() != d => {
                        ck.fail("attacks.delta_x", format!("needs {d} entries, got {}", delta_x.len()));
                    }
                    AttackKind::Backdoor { trigger_feature, .. } if *trigger_feature >= d => {
                        ck.fail("attacks.trigger_feature", format!("must be below {d}"));
                    }
                    _ => {}
                }
            }
        }

        ExperimentConfig {
            seed,
            split,
            graph,
            data,
            algorithm,
            schedule,
            stop,
            attacks,
            defense,
            dp,
        }
    }
}

fn data_dim(data: &DataSpec) -> Option<usize> {
    match data {
        DataSpec::Generate { d, .. } => Some(*d),
        DataSpec::Csv { .. } => None,
    }
}

impl RawGraph {
    fn validate(self, ck: &mut Checker, base: Option<&Path>) -> GraphSpec {
        match ck.choice("graph.source", self.source.as_deref(), "generate", &["generate", "edge_list", "learn"]) {
            "edge_list" => {
                let path = ck
                    .required("graph.path", self.path, "for an edge-list graph")
                    .map(|p| ck.path("graph.path", &p, base))
                    .unwrap_or_default();
                GraphSpec::EdgeList { path }
            }
            "learn" => {
                let method = match ck.choice("graph.method", self.method.as_deref(), "budget", &["budget", "degree"]) {
                    "degree" => LearnMethod::Degree {
                        d_max: ck.positive("graph.d_max", num(self.d_max, 1.0)),
                    },
                    _ => {
                        let budget = ck.required("graph.budget", self.budget, "for budget learning");
                        LearnMethod::Budget {
                            budget: ck.nonneg("graph.budget", num(budget, 0.0)),
                        }
                    }
                };
                let payload = match ck.choice(
                    "graph.payload",
                    self.payload.as_deref(),
                    "param",
                    &["scalar", "param", "gradient"],
                ) {
                    "scalar" => PayloadKind::Scalar,
                    "gradient" => PayloadKind::Gradient,
                    _ => PayloadKind::Param,
                };
                GraphSpec::Learn { method, payload }
            }
            _ => {
                let kind = match ck.choice(
                    "graph.kind",
                    self.kind.as_deref(),
                    "erdos_renyi",
                    &["erdos_renyi", "star", "chain", "two_cluster"],
                ) {
                    "star" => GraphKind::Star,
                    "chain" => GraphKind::Chain,
                    "two_cluster" => GraphKind::TwoCluster {
                        p_in: ck.probability("graph.p_in", num(self.p_in, 0.8), false),
                        p_out: ck.probability("graph.p_out", num(self.p_out, 0.05), false),
                    },
                    _ => GraphKind::ErdosRenyi {
                        p: ck.probability("graph.p", num(self.p, 0.5), false),
                    },
                };
                GraphSpec::Generate {
                    kind,
                    n: ck.at_least("graph.n", self.n.unwrap_or(10), 1),
                    weight: ck.positive("graph.weight", num(self.weight, 1.0)),
                    max_tries: ck.at_least("graph.max_tries", self.max_tries.unwrap_or(100), 1),
                }
            }
        }
    }
}

impl RawData {
    fn validate(self, ck: &mut Checker, base: Option<&Path>, graph: &GraphSpec) -> DataSpec {
        match ck.choice("data.source", self.source.as_deref(), "generate", &["generate", "csv"]) {
            "csv" => {
                let paths: Vec<PathBuf> = ck
                    .required("data.paths", self.paths, "for CSV data")
                    .unwrap_or_default()
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ck.path(&format!("data.paths[{i}]"), p, base))
                    .collect();
                if let GraphSpec::Generate { n, .. } = graph {
                    if paths.len() != *n {
                        ck.fail("data.paths", format!("{} files for {n} nodes", paths.len()));
                    }
                }
                if paths.is_empty() {
                    ck.fail("data.paths", "needs at least one file");
                }
                DataSpec::Csv { paths }
            }
            _ => {
                let model = match ck.choice(
                    "data.model",
                    self.model.as_deref(),
                    "common",
                    &["common", "two_cluster", "independent"],
                ) {
                    "two_cluster" => DataModel::TwoCluster,
                    "independent" => DataModel::Independent,
                    _ => DataModel::Common,
                };
                let n = match graph {
                    GraphSpec::Learn { .. } => ck.required("data.n", self.n, "when the graph is learned"),
                    _ => self.n,
                };
                if let (Some(dn), GraphSpec::Generate { n: gn, .. }) = (n, graph) {
                    if dn != *gn {
                        ck.fail("data.n", format!("{dn} nodes but the graph has {gn}"));
                    }
                }
                if let Some(dn) = n {
                    ck.at_least("data.n", dn, 1);
                }
                let m_min = self.m_min.unwrap_or(5);
                let m_max = self.m_max.unwrap_or(20.max(m_min));
                if m_min > m_max {
                    ck.fail("data.m_min", format!("exceeds data.m_max ({m_min} > {m_max})"));
                }
                DataSpec::Generate {
                    model,
                    n,
                    d: ck.at_least("data.d", self.d.unwrap_or(3), 1),
                    m_min,
                    m_max,
                    noise_std: ck.nonneg("data.noise_std", num(self.noise_std, 0.5)),
                }
            }
        }
    }
}

impl RawAlgorithm {
    fn validate(self, ck: &mut Checker) -> AlgorithmSpec {
        let kind = match ck.choice(
            "algorithm.kind",
            self.kind.as_deref(),
            "fedgd",
            &["fedgd", "fedsgd", "fedrelax", "fedavg", "fedprox"],
        ) {
            "fedsgd" => AlgorithmKind::Fedsgd,
            "fedrelax" => AlgorithmKind::Fedrelax,
            "fedavg" => AlgorithmKind::Fedavg,
            "fedprox" => AlgorithmKind::Fedprox,
            _ => AlgorithmKind::Fedgd,
        };
        let penalty = match ck.choice("algorithm.penalty", self.penalty.as_deref(), "sq_norm", &["sq_norm", "norm"]) {
            "norm" => Penalty::Norm,
            _ => Penalty::SqNorm,
        };
        let default_lr = match (kind, self.eta) {
            (AlgorithmKind::Fedprox, _) | (_, Some(_)) => "constant",
            _ => "optimal",
        };
        let lr = match ck.choice(
            "algorithm.lr",
            self.lr.as_deref(),
            default_lr,
            &["constant", "diminishing", "optimal"],
        ) {
            "constant" => LrSpec::Constant {
                eta: ck.positive("algorithm.eta", num(self.eta, 1.0)),
            },
            "diminishing" => {
                let c = ck.required("algorithm.c", self.c, "for a diminishing rate");
                LrSpec::Diminishing {
                    c: ck.positive("algorithm.c", num(c, 1.0)),
                }
            }
            _ => LrSpec::Optimal,
        };
        if kind == AlgorithmKind::Fedprox && !matches!(lr, LrSpec::Constant { .. }) {
            ck.fail("algorithm.lr", "fedprox takes a constant eta");
        }
        if kind == AlgorithmKind::Fedrelax && self.lr.is_some() {
            ck.fail("algorithm.lr", "fedrelax has no learning rate");
        }
        let batch = match (kind, self.batch) {
            (AlgorithmKind::Fedsgd, b) => Some(ck.at_least("algorithm.batch", b.unwrap_or(1), 1)),
            (AlgorithmKind::Fedavg, Some(b)) => Some(ck.at_least("algorithm.batch", b, 1)),
            (_, Some(_)) => {
                ck.fail("algorithm.batch", "only fedsgd and fedavg sample batches");
                None
            }
            (_, None) => None,
        };
        AlgorithmSpec {
            kind,
            alpha: ck.nonneg("algorithm.alpha", num(self.alpha, 1.0)),
            penalty,
            ridge: ck.nonneg("algorithm.ridge", num(self.ridge, 0.0)),
            lr,
            batch,
            local_steps: ck.at_least("algorithm.local_steps", self.local_steps.unwrap_or(1), 1),
            participation: ck.probability("algorithm.participation", num(self.participation, 1.0), true),
        }
    }
}

impl RawSchedule {
    fn validate(self, ck: &mut Checker) -> ScheduleSpec {
        let p_active = ck.probability("schedule.p_active", num(self.p_active, 0.5), true);
        match ck.choice(
            "schedule.kind",
            self.kind.as_deref(),
            "sync",
            &["sync", "partially_async", "totally_async"],
        ) {
            "partially_async" => ScheduleSpec::PartiallyAsync {
                bound: ck.at_least("schedule.bound", self.bound.unwrap_or(1), 1),
                p_active,
            },
            "totally_async" => ScheduleSpec::TotallyAsync {
                granularity: ck.at_least("schedule.granularity", self.granularity.unwrap_or(10), 1),
                p_active,
            },
            _ => ScheduleSpec::Sync,
        }
    }
}

impl RawStop {
    fn validate(self, ck: &mut Checker) -> StopSpec {
        StopSpec {
            max_events: self.max_events.unwrap_or(100),
            obj_tol: self.obj_tol.map(|t| ck.nonneg("stop.obj_tol", t.get())),
            dist_tol: self.dist_tol.map(|t| ck.nonneg("stop.dist_tol", t.get())),
        }
    }
}

impl RawAttack {
    fn validate(self, ck: &mut Checker, key: &str, seed: u64) -> Option<AttackSpec> {
        let k = |f: &str| format!("{key}.{f}");
        let Some(kind_name) = ck.required(&k("kind"), self.kind, "") else {
            return None;
        };
        let victims = ck.required(&k("victims"), self.victims, "").unwrap_or_default();
        let fraction = |ck: &mut Checker| ck.probability(&k("fraction"), num(self.fraction, 1.0), false);
        let nums = |v: Option<Vec<Num>>| v.map(|v| v.into_iter().map(Num::get).collect::<Vec<f64>>());
        let kind = match kind_name.as_str() {
            "label_poison" => {
                let delta = ck.required(&k("delta"), self.delta, "for label poisoning");
                AttackKind::LabelPoison {
                    delta: ck.finite(&k("delta"), num(delta, 0.0)),
                    fraction: fraction(ck),
                }
            }
            "feature_poison" => AttackKind::FeaturePoison {
                delta_x: ck
                    .required(&k("delta_x"), nums(self.delta_x), "for feature poisoning")
                    .unwrap_or_default(),
                fraction: fraction(ck),
            },
            "model_poison" => {
                let rule = match ck.choice(&k("rule"), self.rule.as_deref(), "constant", &["constant", "scale"]) {
                    "scale" => Replacement::Scale {
                        factor: ck.finite(&k("factor"), num(self.factor, -1.0)),
                    },
                    _ => Replacement::Constant {
                        value: ck
                            .required(&k("value"), nums(self.value), "for a constant replacement")
                            .unwrap_or_default(),
                    },
                };
                AttackKind::ModelPoison { rule }
            }
            "dos" => AttackKind::Dos {
                magnitude: ck.finite(&k("magnitude"), num(self.magnitude, 1e6)),
            },
            "backdoor" => AttackKind::Backdoor {
                trigger_feature: self.trigger_feature.unwrap_or(0),
                trigger_value: ck.finite(&k("trigger_value"), num(self.trigger_value, 1.0)),
                target_label: ck.finite(&k("target_label"), num(self.target_label, 0.0)),
                fraction: fraction(ck),
            },
            other => {
                ck.fail(
                    &k("kind"),
                    format!("unknown value {other:?}, expected one of label_poison, feature_poison, model_poison, dos, backdoor"),
                );
                return None;
            }
        };
        Some(AttackSpec { kind, victims, seed })
    }
}

impl RawDefense {
    fn validate(self, ck: &mut Checker) -> RobustAgg {
        match ck.choice(
            "defense.kind",
            self.kind.as_deref(),
            "mean",
            &["mean", "clipped", "trimmed", "geo_median"],
        ) {
            "clipped" => {
                let lower = ck.finite("defense.lower", num(self.lower, -1.0));
                let upper = ck.finite("defense.upper", num(self.upper, 1.0));
                if lower > upper {
                    ck.fail("defense.lower", "exceeds defense.upper");
                }
                RobustAgg::Clipped { lower, upper }
            }
            "trimmed" => RobustAgg::Trimmed {
                trim: self.trim.unwrap_or(1),
            },
            "geo_median" => RobustAgg::GeoMedian {
                tol: ck.positive("defense.tol", num(self.tol, 1e-9)),
                max_iter: ck.at_least("defense.max_iter", self.max_iter.unwrap_or(1000), 1),
            },
            _ => RobustAgg::Mean,
        }
    }
}

impl RawDp {
    fn validate(self, ck: &mut Checker, seed: u64) -> DPMechanism {
        match ck.choice("dp.kind", self.kind.as_deref(), "gaussian", &["gaussian", "laplace"]) {
            "laplace" => {
                let b = ck.required("dp.b", self.b, "for Laplace noise");
                DPMechanism::laplace(ck.nonneg("dp.b", num(b, 0.0)), seed)
            }
            _ => {
                let sigma = match (self.sigma, self.epsilon, self.delta) {
                    (Some(s), None, None) => ck.nonneg("dp.sigma", s.get()),
                    (None, Some(e), Some(d)) => {
                        let s = num(self.sensitivity, 1.0);
                        gaussian_sigma(s, e.get(), d.get()).unwrap_or_else(|err| {
                            ck.fail("dp.epsilon", err.to_string());
                            0.0
                        })
                    }
                    _ => {
                        ck.fail("dp.sigma", "give either sigma or epsilon with delta");
                        0.0
                    }
                };
                DPMechanism::gaussian(sigma, seed)
            }
        }
    }
}
