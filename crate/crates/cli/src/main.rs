//! `xfdreid`: synthetic fixtures, training, pooling, re-ranking and
//! evaluation from the command line.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use run_config::Precision;
use xfdreid::pooling::PoolingMode;

#[derive(Parser, Debug)]
#[command(
    name = "xfdreid",
    version,
    about = "Tracklet re-identification over precomputed frame embeddings"
)]
struct Cli {
    /// Worker threads for parallel retrieval and evaluation.
    #[arg(long, global = true, env = "XFDREID_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic fixture dataset.
    Synth(SynthArgs),
    /// Train a pooling head.
    Train(TrainArgs),
    /// Pool tracklets into retrieval embeddings.
    Pool(PoolArgs),
    /// Query-gallery distances with k-reciprocal re-ranking.
    Rerank(RerankArgs),
    /// Evaluate per-protocol and overall retrieval metrics.
    Eval(EvalArgs),
    /// Run an ablation grid over pooling heads and re-ranking settings.
    Ablate(AblateArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Fixture config JSON; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    flip_features: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Copy)]
struct RerankFlags {
    #[arg(long, default_value_t = 28)]
    k1: usize,
    #[arg(long, default_value_t = 6)]
    k2: usize,
    #[arg(long, default_value_t = 0.28)]
    lambda: f64,
    /// Build neighbourhoods from the gallery only.
    #[arg(long)]
    gallery_only: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, required_unless_present = "dump_config")]
    features: Option<PathBuf>,
    #[arg(long, required_unless_present = "dump_config")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    flip_features: Option<PathBuf>,
    /// JSON object of overrides on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "1")]
    stage: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<PoolingMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Start from this head (e.g. the stage-1 result).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PoolArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long)]
    mode: Option<PoolingMode>,
    /// Only tracklets of this split (train, query, gallery).
    #[arg(long)]
    split: Option<String>,
    /// Only tracklets of this domain (aerial, ground).
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RerankArgs {
    #[arg(long, required_unless_present = "dump_config")]
    query_emb: Option<PathBuf>,
    #[arg(long, required_unless_present = "dump_config")]
    gallery_emb: Option<PathBuf>,
    #[command(flatten)]
    params: RerankFlags,
    /// Write plain cosine distances instead.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    dump_config: bool,
    #[arg(long, required_unless_present = "dump_config")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long)]
    mode: Option<PoolingMode>,
    #[arg(long)]
    rerank: bool,
    #[command(flatten)]
    params: RerankFlags,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `MODE=PATH`; repeat for each pooling head. Without any, mean pooling.
    #[arg(long = "head")]
    heads: Vec<String>,
    /// `K1,K2,LAMBDA`; repeat for each setting. A no-rerank cell is always included.
    #[arg(long = "rerank")]
    reranks: Vec<String>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    configs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    /// Negate grad_w before comparing (the suite should then fail).
    #[arg(long, hide = true)]
    inject_sign_error: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
    {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(1);
    }
    match commands::run(cli.command, cli.threads.max(1)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
