// SPDX-License-Identifier: Apache-2.0

//! `huse`: estimate HUSE from rated JSONL datasets, check the estimator
//! against exactly known distributions, and run the rating service.
//!
//! Exit codes: 0 success, 2 invalid input, 3 failed precondition.

mod synth;

use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use huse_core::dataset::{load_dataset, EvalDataset, Format};
use huse_core::metrics::{
    compute_huse_with, export_surface, feature_score, stability, RaterSampling, StabilityConfig,
};
use huse_core::{Error, FeatureSpec, KnnConfig, LengthNormalizer};
use huse_service::{ServiceConfig, StoreConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "huse",
    version,
    about = "Human-unified statistical evaluation of text generators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute HUSE, HUSE-Q and HUSE-D for a rated dataset.
    Compute(ComputeArgs),
    /// Re-estimate HUSE on subsamples of examples and raters.
    Stability(StabilityArgs),
    /// Emit the k-NN decision surface over the scaled features as TSV.
    Surface(SurfaceArgs),
    /// Run estimator checks against exactly known discrete distributions.
    Synth(synth::SynthArgs),
    /// Start the rating service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Features {
    /// Length-normalized model log-probability and mean human judgment.
    Huse,
    /// Mean human judgment only.
    Hj,
    /// Exact reference and model probabilities (synth only).
    Opt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Normalizer {
    Tokens,
    Hj,
}

#[derive(Args)]
pub struct Common {
    /// Input JSONL dataset (or distribution spec for synth).
    #[arg(long)]
    input: PathBuf,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of neighbors.
    #[arg(long, default_value_t = KnnConfig::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ComputeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "huse")]
    features: Features,
    /// Length normalizer of the model log-probability.
    #[arg(long, value_enum, default_value = "tokens")]
    normalizer: Normalizer,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    common: Common,
    /// Contexts per replicate.
    #[arg(long)]
    examples: usize,
    /// Ratings kept per example in each replicate.
    #[arg(long)]
    raters: usize,
    /// Number of replicates.
    #[arg(long, default_value_t = 100)]
    boot: usize,
    /// Draw one rater panel per replicate instead of per example.
    #[arg(long)]
    panel: bool,
}

#[derive(Args)]
struct SurfaceArgs {
    #[command(flatten)]
    common: Common,
    /// Lattice points per axis.
    #[arg(long, default_value_t = 50)]
    grid: usize,
}

#[derive(Args)]
struct ServeArgs {
    /// Task pool JSONL of {example_id, context, output_text, origin, log_p_model}.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Append-only rating log.
    #[arg(long, default_value = "ratings.jsonl")]
    log: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Static files (the rating UI) served at the root.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value_t = 25)]
    batch_size: usize,
}

/// A failure mapped onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Precondition(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Precondition(e.to_string())
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

fn read_dataset(path: &Path) -> Outcome<EvalDataset> {
    let file = File::open(path)
        .map_err(|e| Failure::Input(format!("cannot open {}: {e}", path.display())))?;
    Ok(load_dataset(BufReader::new(file), Format::Jsonl)?)
}

pub fn emit(out: Option<&Path>, body: &[u8]) -> Outcome {
    let result = match out {
        Some(path) => std::fs::write(path, body),
        None => std::io::stdout().lock().write_all(body),
    };
    result.map_err(|e| Failure::Input(format!("cannot write output: {e}")))
}

pub fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Outcome {
    let mut body = serde_json::to_vec_pretty(value).expect("serializable report");
    body.push(b'\n');
    emit(out, &body)
}

#[derive(Serialize)]
struct SingleScore {
    features: &'static str,
    score: f64,
    n_contexts: usize,
    k: usize,
}

fn compute(args: &ComputeArgs) -> Outcome {
    let dataset = read_dataset(&args.common.input)?;
    let knn = KnnConfig::with_k(args.common.k);
    let out = args.common.out.as_deref();
    match args.features {
        Features::Huse => {
            let normalizer = match args.normalizer {
                Normalizer::Tokens => LengthNormalizer::TokenCount,
                Normalizer::Hj => LengthNormalizer::HumanJudgment,
            };
            emit_json(out, &compute_huse_with(&dataset, &knn, normalizer)?)
        }
        Features::Hj => emit_json(
            out,
            &SingleScore {
                features: "hj",
                score: feature_score(&dataset, &FeatureSpec::HJ, &knn)?,
                n_contexts: dataset.n_contexts(),
                k: knn.k,
            },
        ),
        Features::Opt => Err(Failure::Precondition(
            "exact probability features exist only for synthetic distributions; use `huse synth`"
                .into(),
        )),
    }
}

fn run_stability(args: &StabilityArgs) -> Outcome {
    let dataset = read_dataset(&args.common.input)?;
    let config = StabilityConfig {
        n_examples: args.examples,
        n_raters: args.raters,
        n_bootstrap: args.boot,
        seed: args.common.seed,
        rater_sampling: if args.panel {
            RaterSampling::Panel
        } else {
            RaterSampling::PerExample
        },
    };
    let report = stability(&dataset, &config, &KnnConfig::with_k(args.common.k))?;
    emit_json(args.common.out.as_deref(), &report)
}

fn surface(args: &SurfaceArgs) -> Outcome {
    let dataset = read_dataset(&args.common.input)?;
    let surface = export_surface(&dataset, &KnnConfig::with_k(args.common.k), args.grid)?;
    let mut body = Vec::new();
    surface
        .write_tsv(&mut body)
        .map_err(|e| Failure::Input(e.to_string()))?;
    emit(args.common.out.as_deref(), &body)
}

fn serve(args: &ServeArgs) -> Outcome {
    let config = ServiceConfig {
        pool: args.pool.clone(),
        log: args.log.clone(),
        store: StoreConfig {
            replicate_target: args.replicates,
            batch_size: args.batch_size,
        },
        static_dir: args.static_dir.clone(),
    };
    if args.batch_size == 0 || args.replicates == 0 {
        return Err(Failure::Input(
            "batch size and replicate target must be positive".into(),
        ));
    }
    let app = huse_service::app(&config).map_err(|e| Failure::Input(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| Failure::Precondition(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .map_err(|e| Failure::Precondition(format!("cannot bind {}: {e}", args.addr)))?;
        let local = listener
            .local_addr()
            .map_err(|e| Failure::Precondition(e.to_string()))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        huse_service::serve(listener, app)
            .await
            .map_err(|e| Failure::Precondition(format!("service stopped: {e}")))
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Compute(args) => compute(args),
        Command::Stability(args) => run_stability(args),
        Command::Surface(args) => surface(args),
        Command::Synth(args) => synth::run(args),
        Command::Serve(args) => serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(Failure::Precondition(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(3)
        }
    }
}
