//! `hmgn`: ingest, split, sample, train, evaluate and check the
//! multi-behavior graph attention recommender from one config file.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hmgn::model::Paradigm;

/// Exit status classes: 1 usage or config, 2 runtime or data, 3 divergence
/// or a failed check.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) | Failure::Check(m) => f.write_str(m),
        }
    }
}

impl From<hmgn::Error> for Failure {
    fn from(e: hmgn::Error) -> Self {
        use hmgn::Error as E;
        match e {
            E::Config(_) | E::Unknown { .. } => Failure::Usage(e.to_string()),
            E::Divergence { .. } | E::NonFinite { .. } => Failure::Check(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "hmgn", version, about = "Multi-behavior graph attention recommender")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic funnel log with item categories.
    Synth(SynthArgs),
    /// Read an interaction CSV into a graph directory.
    Ingest(IngestArgs),
    /// Split a graph directory by time into train, val and test.
    Split(SplitArgs),
    /// Sample a multi-behavior sub-graph around kernel users.
    SampleSubgraph(SampleArgs),
    /// Train with hierarchical pairwise ranking.
    Train(TrainArgs),
    /// Full-ranking Recall@K and NDCG@K of a checkpoint.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a tiny graph.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    p_view: Option<f64>,
    #[arg(long)]
    p_cart: Option<f64>,
    #[arg(long)]
    p_buy: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SplitArgs {
    /// Graph directory written by `ingest`.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    train_end: Option<i64>,
    #[arg(long)]
    val_end: Option<i64>,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    kernel_users: Option<usize>,
    #[arg(long)]
    hops: Option<usize>,
    /// One value for all behaviors or one per behavior.
    #[arg(long, value_delimiter = ',')]
    fanouts: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training graph directory.
    #[arg(long)]
    train: PathBuf,
    /// Validation graph directory; enables best-epoch selection.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, value_parser = parse_paradigm)]
    paradigm: Option<Paradigm>,
    #[arg(long)]
    temporal: bool,
    #[arg(long)]
    single_task: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// KG triples CSV; needs --kg-relations.
    #[arg(long, requires = "kg_relations")]
    kg_triples: Option<PathBuf>,
    #[arg(long, requires = "kg_triples")]
    kg_relations: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Graph the model propagates over and whose positives are excluded.
    #[arg(long)]
    train: PathBuf,
    /// Graph holding the held-out positives.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn parse_paradigm(s: &str) -> Result<Paradigm, String> {
    match s {
        "intra" => Ok(Paradigm::Intra),
        "inter" => Ok(Paradigm::Inter),
        _ => Err(format!("expected intra or inter, got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = config::RunConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Ingest(a) => commands::ingest(cfg, a),
        Command::Split(a) => commands::split(cfg, a),
        Command::SampleSubgraph(a) => commands::sample_subgraph(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::GradCheck(a) => commands::grad_check(cfg, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
