mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use pgds_core::experiment::{MockRunConfig, Strategy};
use pgds_core::parse::ParseMode;
use pgds_core::trainer::Optimizer;
use pgds_core::{Error, Language};

use commands::{
    BackendKind, Completion, CurateRunConfig, EmbedRunConfig, EvalRunConfig, ProviderKind,
    ReportRunConfig, TrainRunConfig,
};
use config::{resolve, Overrides};

#[derive(Debug, Parser)]
#[command(
    name = "pgds",
    version,
    about = "Policy-guided demonstration selection toolkit"
)]
struct Cli {
    /// Run configuration (one JSON record); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Accept only the tagged answer format when scoring.
    #[arg(long, global = true)]
    strict_parse: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Deduplicate and filter a dataset by its images.
    Curate(CurateArgs),
    /// Build an embedding store for a dataset.
    Embed(EmbedArgs),
    /// Train the selection policy.
    Train(TrainArgs),
    /// Score predictions, or generate them with a selection strategy first.
    Eval(EvalArgs),
    /// Self-contained synthetic experiment comparing all strategies.
    MockRun(MockRunArgs),
    /// Summarize report files as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct CurateArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    image_root: Option<PathBuf>,
    #[arg(long)]
    dedup_threshold: Option<f64>,
    #[arg(long)]
    min_width: Option<u32>,
    #[arg(long)]
    min_height: Option<u32>,
    #[arg(long)]
    watermark_threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// hashing | import
    #[arg(long, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    /// Store to import vectors from.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long)]
    text_dim: Option<usize>,
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Concatenate raw modality vectors without normalizing each.
    #[arg(long)]
    raw_concat: bool,
}

#[derive(Debug, Args)]
struct TrainerArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// sga | adam
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// zh | en
    #[arg(long, value_parser = parse_language)]
    language: Option<Language>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    max_in_flight: Option<usize>,
}

impl TrainerArgs {
    fn apply(&self, o: &mut Overrides, prefix: &str) {
        let key = |name: &str| format!("{prefix}{name}");
        o.set(&key("k"), self.k)
            .set(&key("episodes"), self.episodes)
            .set(&key("batch_size"), self.batch_size)
            .set(&key("learning_rate"), self.learning_rate)
            .set(&key("optimizer"), self.optimizer)
            .set(&key("gamma"), self.gamma)
            .set(&key("hidden"), self.hidden)
            .set(&key("pool_size"), self.pool_size)
            .set(&key("language"), self.language)
            .set(&key("retries"), self.retries)
            .set(&key("max_in_flight"), self.max_in_flight);
    }
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// mock | remote (remote reads PGDS_API_URL, PGDS_API_KEY, PGDS_MODEL)
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long)]
    noise_level: Option<f64>,
}

impl BackendArgs {
    fn apply(&self, o: &mut Overrides) {
        o.set("backend.kind", self.backend)
            .set("backend.timeout_secs", self.timeout_secs)
            .set("backend.mock.noise_level", self.noise_level);
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Output directory for checkpoint and training log.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Resume from this checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    trainer: TrainerArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// zero-shot | random-1-shot | rag-1-shot | pgds
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    train_store: Option<PathBuf>,
    #[arg(long)]
    query_store: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Similarity above which a predicted target counts as correct.
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    trainer: TrainerArgs,
}

#[derive(Debug, Args)]
struct MockRunArgs {
    #[arg(long, default_value = "mock_run")]
    out: PathBuf,
    #[arg(long)]
    concept_feature_scale: Option<f64>,
    #[arg(long)]
    noise_level: Option<f64>,
    #[arg(long)]
    train_samples: Option<usize>,
    #[arg(long)]
    heldout_queries: Option<usize>,
    #[command(flatten)]
    trainer: TrainerArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report files written by eval or mock-run.
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_with<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_optimizer(s: &str) -> Result<Optimizer, String> {
    parse_with(s)
}

fn parse_language(s: &str) -> Result<Language, String> {
    parse_with(s)
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    parse_with(s)
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    match s {
        "hashing" => Ok(ProviderKind::Hashing),
        "import" => Ok(ProviderKind::Import),
        other => Err(format!("unknown provider {other:?} (hashing | import)")),
    }
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "mock" => Ok(BackendKind::Mock),
        "remote" => Ok(BackendKind::Remote),
        other => Err(format!("unknown backend {other:?} (mock | remote)")),
    }
}

fn strict(cli: &Cli) -> Option<ParseMode> {
    cli.strict_parse.then_some(ParseMode::Strict)
}

fn run(cli: &Cli, stop: &AtomicBool) -> pgds_core::Result<Completion> {
    let file = cli.config.as_deref();
    match &cli.command {
        Command::Curate(a) => {
            let mut o = Overrides::new();
            o.set("input", a.input.as_ref())
                .set("out", a.out.as_ref())
                .set("report", a.report.as_ref())
                .set("image_root", a.image_root.as_ref())
                .set("curation.dedup_similarity_threshold", a.dedup_threshold)
                .set("curation.min_width", a.min_width)
                .set("curation.min_height", a.min_height)
                .set("curation.watermark_area_threshold", a.watermark_threshold);
            commands::run_curate(&resolve(CurateRunConfig::default(), file, o)?)
        }
        Command::Embed(a) => {
            let mut o = Overrides::new();
            o.set("input", a.input.as_ref())
                .set("out", a.out.as_ref())
                .set("provider", a.provider)
                .set("from", a.from.as_ref())
                .set("text_dim", a.text_dim)
                .set("image_root", a.image_root.as_ref())
                .set("seed", cli.seed)
                .set("joint_mode", a.raw_concat.then_some("raw"));
            commands::run_embed(&resolve(EmbedRunConfig::default(), file, o)?)
        }
        Command::Train(a) => {
            let mut o = Overrides::new();
            o.set("train", a.train.as_ref())
                .set("store", a.store.as_ref())
                .set("out", a.out.as_ref())
                .set("init", a.init.as_ref())
                .set("trainer.seed", cli.seed)
                .set("trainer.parse_mode", strict(cli));
            a.backend.apply(&mut o);
            a.trainer.apply(&mut o, "trainer.");
            commands::run_train(&resolve(TrainRunConfig::default(), file, o)?, stop)
        }
        Command::Eval(a) => {
            let mut o = Overrides::new();
            o.set("gold", a.gold.as_ref())
                .set("predictions", a.predictions.as_ref())
                .set("out", a.out.as_ref())
                .set("strategy", a.strategy)
                .set("train", a.train.as_ref())
                .set("train_store", a.train_store.as_ref())
                .set("query_store", a.query_store.as_ref())
                .set("checkpoint", a.checkpoint.as_ref())
                .set("eval.threshold", a.threshold)
                .set("eval.parse_mode", strict(cli))
                .set("trainer.seed", cli.seed)
                .set("trainer.parse_mode", strict(cli));
            a.backend.apply(&mut o);
            a.trainer.apply(&mut o, "trainer.");
            commands::run_eval(&resolve(EvalRunConfig::default(), file, o)?)
        }
        Command::MockRun(a) => {
            let mut o = Overrides::new();
            o.set("env.seed", cli.seed)
                .set("trainer.seed", cli.seed)
                .set("env.concept_feature_scale", a.concept_feature_scale)
                .set("env.noise_level", a.noise_level)
                .set("train_samples", a.train_samples)
                .set("heldout_queries", a.heldout_queries)
                .set("trainer.parse_mode", strict(cli))
                .set("eval.parse_mode", strict(cli));
            a.trainer.apply(&mut o, "trainer.");
            let cfg: MockRunConfig = resolve(MockRunConfig::default(), file, o)?;
            commands::run_mock(&cfg, &a.out, stop)
        }
        Command::Report(a) => {
            let mut o = Overrides::new();
            o.set("inputs", (!a.inputs.is_empty()).then_some(&a.inputs))
                .set("out", a.out.as_ref());
            commands::run_report(&resolve(ReportRunConfig::default(), file, o)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || {
        eprintln!("interrupt received; finishing the current batch");
        flag.store(true, Ordering::SeqCst);
    }) {
        log::warn!("cannot install interrupt handler: {e}");
    }

    match run(&cli, &stop) {
        Ok(Completion::Done) => ExitCode::SUCCESS,
        Ok(Completion::Interrupted) => {
            eprintln!("interrupted; partial outputs were written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
