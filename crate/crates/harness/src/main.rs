use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use netfl::graph::GraphKind;
use netfl::graphlearn::{learn_graph_budget, learn_graph_degree, DegreeLearnConfig, DiscrepancyMatrix};
use netfl::localmodel::LocalDataset;
use netfl::synth;
use netfl_harness::config::{load_config, ExperimentConfig, LearnMethod, PayloadKind};
use netfl_harness::experiment::{learn_graph, run_experiment, stream_seed};
use netfl_harness::report::{fmt_num, Report};

#[derive(Parser)]
#[command(name = "netfl", version, about = "Federated learning over empirical graphs")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a connected random graph as an edge list.
    GenGraph(GenGraph),
    /// Generate per-node regression datasets as node_<i>.csv files.
    GenData(GenData),
    /// Learn a graph from node datasets or a discrepancy matrix.
    LearnGraph(LearnGraph),
    /// Run an experiment config and write report.csv and report.json.
    Run(Run),
    /// Summarize a report JSON, optionally re-exporting its CSV.
    Report(ReportCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    ErdosRenyi,
    Star,
    Chain,
    TwoCluster,
}

#[derive(Args)]
struct GenGraph {
    #[arg(long, value_enum, default_value = "erdos-renyi")]
    kind: Kind,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 0.8)]
    p_in: f64,
    #[arg(long, default_value_t = 0.05)]
    p_out: f64,
    #[arg(long, default_value_t = 1.0)]
    weight: f64,
    #[arg(long, default_value_t = 100)]
    max_tries: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Common,
    TwoCluster,
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 5)]
    m_min: usize,
    #[arg(long, default_value_t = 20)]
    m_max: usize,
    #[arg(long, default_value_t = 0.5)]
    noise_std: f64,
    #[arg(long, value_enum, default_value = "common")]
    model: Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Budget,
    Degree,
}

#[derive(Clone, Copy, ValueEnum)]
enum PayloadArg {
    Scalar,
    Param,
    Gradient,
}

#[derive(Args)]
struct LearnGraph {
    /// Node dataset CSV files, in node order.
    #[arg(long, num_args = 1.., conflicts_with = "discrepancy")]
    data: Vec<PathBuf>,
    /// Precomputed discrepancy matrix CSV.
    #[arg(long)]
    discrepancy: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "param")]
    payload: PayloadArg,
    #[arg(long, value_enum, default_value = "budget")]
    method: Method,
    #[arg(long, default_value_t = 1.0)]
    budget: f64,
    #[arg(long, default_value_t = 1.0)]
    d_max: f64,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
}

#[derive(Args)]
struct Run {
    config: PathBuf,
    /// Exit with status 2 when a bound check fails.
    #[arg(long)]
    strict: bool,
    /// Warn about unknown config keys instead of rejecting them.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct ReportCmd {
    report: PathBuf,
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn gen_graph(a: &GenGraph, seed: u64, out: Option<&Path>) -> Result<()> {
    let kind = match a.kind {
        Kind::ErdosRenyi => GraphKind::ErdosRenyi { p: a.p },
        Kind::Star => GraphKind::Star,
        Kind::Chain => GraphKind::Chain,
        Kind::TwoCluster => GraphKind::TwoCluster {
            p_in: a.p_in,
            p_out: a.p_out,
        },
    };
    let g = synth::connected_graph(kind, a.n, a.weight, stream_seed(seed, "graph"), a.max_tries)?;
    write_out(out, &g.to_edge_list())
}

fn gen_data(a: &GenData, seed: u64, out: Option<&Path>) -> Result<()> {
    let dir = out.context("gen-data needs --out <dir>")?;
    let s = stream_seed(seed, "data");
    let sizes = synth::random_sizes(a.n, a.m_min, a.m_max, s)?;
    let nd = match a.model {
        Model::Common => synth::common_model_data(&sizes, a.d, a.noise_std, s)?,
        Model::TwoCluster => synth::two_cluster_data(&sizes, a.d, a.noise_std, s)?,
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, ds) in nd.datasets.iter().enumerate() {
        let p = dir.join(format!("node_{i}.csv"));
        std::fs::write(&p, ds.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn learn(a: &LearnGraph, seed: u64, out: Option<&Path>) -> Result<()> {
    let method = match a.method {
        Method::Budget => LearnMethod::Budget { budget: a.budget },
        Method::Degree => LearnMethod::Degree { d_max: a.d_max },
    };
    let dm = if let Some(p) = &a.discrepancy {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        DiscrepancyMatrix::parse_csv(&text).with_context(|| p.display().to_string())?
    } else {
        if a.data.is_empty() {
            bail!("learn-graph needs --data or --discrepancy");
        }
        let mut sets = Vec::new();
        for p in &a.data {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            sets.push(LocalDataset::parse_csv(&text).with_context(|| p.display().to_string())?);
        }
        let payload = match a.payload {
            PayloadArg::Scalar => PayloadKind::Scalar,
            PayloadArg::Param => PayloadKind::Param,
            PayloadArg::Gradient => PayloadKind::Gradient,
        };
        let g = learn_graph(method, payload, &sets, a.ridge, stream_seed(seed, "graph"))?;
        return write_out(out, &g.to_edge_list());
    };
    let g = match method {
        LearnMethod::Budget { budget } => learn_graph_budget(&dm, budget)?,
        LearnMethod::Degree { d_max } => learn_graph_degree(
            &dm,
            d_max,
            &DegreeLearnConfig {
                seed: stream_seed(seed, "graph"),
                ..DegreeLearnConfig::default()
            },
        )?,
    };
    write_out(out, &g.to_edge_list())
}

/// Returns whether every bound check held.
fn run(a: &Run, seed: Option<u64>, out: Option<&Path>) -> Result<bool> {
    let (mut cfg, warnings) = load_config(&a.config, !a.lenient)?;
    for w in warnings {
        log::warn!("{w}");
    }
    if let Some(s) = seed {
        cfg = reseed(cfg, s);
    }
    let report = run_experiment(&cfg)?;
    for w in &report.summary.warnings {
        log::warn!("{w}");
    }
    report.write(out.unwrap_or(Path::new(".")))?;
    print_summary(&report)?;
    Ok(report.summary.all_bounds_hold())
}

/// Re-derive every seeded element for a new master seed.
fn reseed(mut cfg: ExperimentConfig, seed: u64) -> ExperimentConfig {
    cfg.seed = seed;
    for (i, a) in cfg.attacks.iter_mut().enumerate() {
        a.seed = netfl::rng::derive_seed(seed, "attacks", &[i as u64]);
    }
    if let Some(dp) = cfg.dp.as_mut() {
        dp.seed = netfl::rng::derive_seed(seed, "noise", &[]);
    }
    cfg
}

fn print_summary(r: &Report) -> std::io::Result<()> {
    let mut out = std::io::stdout().lock();
    let s = &r.summary;
    writeln!(
        out,
        "events={} stop={:?} converged={} objective={}",
        s.events_run,
        s.stop_reason,
        s.converged,
        fmt_num(s.final_objective)
    )?;
    if let Some(e) = s.final_dist_oracle {
        writeln!(out, "dist_oracle={}", fmt_num(e))?;
    }
    for c in &s.bound_checks {
        writeln!(
            out,
            "check {} measured={} bound={} margin={} {}",
            c.name,
            fmt_num(c.measured),
            fmt_num(c.bound),
            fmt_num(c.margin),
            if c.holds { "ok" } else { "FAILED" }
        )?;
    }
    let over = s.overfitting_nodes();
    if !over.is_empty() {
        writeln!(out, "overfitting at nodes {over:?}")?;
    }
    Ok(())
}

fn report(a: &ReportCmd, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let r = Report::from_json(&text)?;
    if let Some(s) = seed.filter(|&s| s != r.environment.seed) {
        log::warn!("report was produced with seed {}, not {s}", r.environment.seed);
    }
    print_summary(&r)?;
    if let Some(p) = out {
        std::fs::write(p, r.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    let result = match &cli.cmd {
        Command::GenGraph(a) => gen_graph(a, seed, out).map(|_| true),
        Command::GenData(a) => gen_data(a, seed, out).map(|_| true),
        Command::LearnGraph(a) => learn(a, seed, out).map(|_| true),
        Command::Run(a) => run(a, cli.seed, out).map(|ok| ok || !a.strict),
        Command::Report(a) => report(a, cli.seed, out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: a bound check failed");
            ExitCode::from(2)
        }
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// A closed stdout (as in `netfl report x.json | head`) is not an error.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe))
}
