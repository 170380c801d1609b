//! `boi` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use boi_core::{BoiParams, Method, ScheduleKind};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "boi",
    version,
    about = "Bag of Indexes nearest-neighbor search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic base / query / ground-truth triple.
    Gen(GenArgs),
    /// Hash a base set into an index snapshot.
    Build(BuildArgs),
    /// Answer queries and print one JSON record per query.
    Query(QueryArgs),
    /// Time and score a method, writing a JSON report and per-query CSV.
    Bench(BenchArgs),
    /// Score saved query results against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Existing directory receiving base.fvecs, query.fvecs, groundtruth.ivecs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 100)]
    clusters: usize,
    #[arg(long, default_value_t = 0.5)]
    cluster_std: f64,
    /// Number of queries.
    #[arg(long, default_value_t = 100)]
    nq: usize,
    /// Neighbors stored per ground-truth row.
    #[arg(long, default_value_t = 10)]
    gt_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Index parameters. Unset flags fall back to the built index (query, bench)
/// or to the defaults (build).
#[derive(Debug, Args)]
struct ParamArgs {
    /// Number of hash tables.
    #[arg(long = "L")]
    tables: Option<usize>,
    /// Bits per bucket code (2^bits buckets per table).
    #[arg(long)]
    bits: Option<u32>,
    /// Hamming radius of the weighting function.
    #[arg(long = "l")]
    radius: Option<u32>,
    /// Shortlist size re-ranked by exact distance.
    #[arg(long)]
    epsilon: Option<usize>,
    /// Neighbor buckets probed at the first table.
    #[arg(long)]
    gamma0: Option<u32>,
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<ScheduleKind>,
    #[arg(long)]
    delta1: Option<usize>,
    #[arg(long)]
    delta2: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_schedule(s: &str) -> Result<ScheduleKind, String> {
    s.parse().map_err(|e: boi_core::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: boi_core::Error| e.to_string())
}

impl ParamArgs {
    fn apply(&self, base: BoiParams) -> BoiParams {
        BoiParams {
            num_tables: self.tables.unwrap_or(base.num_tables),
            hash_bits: self.bits.unwrap_or(base.hash_bits),
            probe_radius: self.radius.unwrap_or(base.probe_radius),
            shortlist_size: self.epsilon.unwrap_or(base.shortlist_size),
            initial_probe_count: self.gamma0.unwrap_or(base.initial_probe_count),
            schedule: self.schedule.unwrap_or(base.schedule),
            linear_step: self.delta1.unwrap_or(base.linear_step),
            sublinear_step: self.delta2.unwrap_or(base.sublinear_step),
            strict_radius: base.strict_radius,
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Snapshot output path.
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value = "boi", value_parser = parse_method)]
    method: Method,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// JSON-lines output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    groundtruth: PathBuf,
    /// Output prefix: writes <out>.json and <out>.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Report index memory with 1-byte ids.
    #[arg(long)]
    compat_memory: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSON-lines file written by `boi query`.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    groundtruth: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Build(a) => commands::build(a),
        Command::Query(a) => commands::query(a),
        Command::Bench(a) => commands::bench(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
