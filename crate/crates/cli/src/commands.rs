use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use pgds_core::backend::{
    MockEnvironmentConfig, MockOracle, ModelBackend, RemoteBackend, RemoteConfig,
};
use pgds_core::curation::{curate, no_logo, CurationConfig};
use pgds_core::data::{load_dataset, read_records, save_dataset, write_records, ResponseRecord};
use pgds_core::embed::{joint_embed, store_load, store_save, HashingProvider, JointMode};
use pgds_core::experiment::{
    mock_run, predict_strategy, write_json, write_mock_run, write_sidecar, write_training_log,
    ComparisonReport, EvalInputs, MockRunConfig, Strategy, CHECKPOINT_FILE, LOG_FILE, VERSION,
};
use pgds_core::metrics::{build_report, EmbeddingScorer, EvalConfig, EvalReport};
use pgds_core::policy::{checkpoint_load, checkpoint_save, init_params};
use pgds_core::trainer::{run_training, TrainerConfig};
use pgds_core::{EmbeddingStore, Error, PolicyParams, Result, TrainerState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Outcome of a subcommand that may have been cut short.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    Done,
    Interrupted,
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn ensure_parent(path: &Path) -> Result<()> {
    create_dir(&parent_dir(path))
}

/// A line-delimited file whose first record carries the run configuration.
fn write_with_header<C: Serialize, T: Serialize>(
    path: &Path,
    kind: &str,
    run_config: &C,
    records: &[T],
) -> Result<()> {
    let mut lines = vec![json!({"kind": kind, "version": VERSION, "run_config": run_config})];
    for r in records {
        lines.push(serde_json::to_value(r).map_err(|e| Error::Config(e.to_string()))?);
    }
    write_records(path, &lines)
}

// curate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct CurateRunConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Curation report; defaults to `<out>.curation.jsonl`.
    pub report: Option<PathBuf>,
    /// Directory image paths are relative to; defaults to the input's directory.
    pub image_root: Option<PathBuf>,
    pub curation: CurationConfig,
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("missing required option --{flag}")))
}

pub fn run_curate(cfg: &CurateRunConfig) -> Result<Completion> {
    let input = required(&cfg.input, "in")?;
    let out = required(&cfg.out, "out")?;
    let split = load_dataset(input)?;
    let root = cfg.image_root.clone().unwrap_or_else(|| parent_dir(input));
    let (kept, report) = curate(&split, &root, &cfg.curation, no_logo)?;
    ensure_parent(out)?;
    save_dataset(&kept, out)?;
    write_sidecar(out, "dataset", cfg)?;
    let report_path = cfg
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(out, ".curation.jsonl"));
    write_with_header(&report_path, "curation_report", cfg, &report.records())?;
    println!(
        "kept {} of {} (duplicates {}, commercial {}, low resolution {})",
        report.kept.len(),
        split.len(),
        report.removed_duplicates.len(),
        report.removed_commercial.len(),
        report.removed_low_res.len()
    );
    Ok(Completion::Done)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

// embed

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Hashing,
    Import,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedRunConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub provider: ProviderKind,
    /// Existing store to import vectors from.
    pub from: Option<PathBuf>,
    pub text_dim: usize,
    pub seed: u64,
    pub image_root: Option<PathBuf>,
    pub joint_mode: JointMode,
}

impl Default for EmbedRunConfig {
    fn default() -> Self {
        EmbedRunConfig {
            input: None,
            out: None,
            provider: ProviderKind::Hashing,
            from: None,
            text_dim: HashingProvider::DEFAULT_TEXT_DIM,
            seed: 0,
            image_root: None,
            joint_mode: JointMode::Normalized,
        }
    }
}

pub fn run_embed(cfg: &EmbedRunConfig) -> Result<Completion> {
    let input = required(&cfg.input, "in")?;
    let out = required(&cfg.out, "out")?;
    let split = load_dataset(input)?;
    let store = match cfg.provider {
        ProviderKind::Hashing => {
            if cfg.text_dim == 0 {
                return Err(Error::Config("text_dim must be positive".into()));
            }
            let root = cfg.image_root.clone().unwrap_or_else(|| parent_dir(input));
            let provider = HashingProvider::new(cfg.text_dim, cfg.seed).with_image_root(root);
            let rows = split
                .samples
                .par_iter()
                .map(|s| joint_embed(&provider, s, cfg.joint_mode).map(|v| v.into_values()))
                .collect::<Result<Vec<_>>>()?;
            EmbeddingStore::from_rows(split.samples.iter().map(|s| s.id.clone()).collect(), rows)?
        }
        ProviderKind::Import => {
            let from = required(&cfg.from, "from")?;
            let source = store_load(from)?;
            let missing = source.missing(split.samples.iter().map(|s| s.id.as_str()));
            if !missing.is_empty() {
                return Err(Error::Config(format!(
                    "{} lacks vectors for {} sample(s), first {:?}",
                    from.display(),
                    missing.len(),
                    missing[0]
                )));
            }
            let mut matrix = Vec::with_capacity(split.len() * source.dim());
            for s in &split.samples {
                let row = source.position(&s.id).expect("checked above");
                matrix.extend_from_slice(source.row(row));
            }
            EmbeddingStore::new(
                split.samples.iter().map(|s| s.id.clone()).collect(),
                source.dim(),
                matrix,
            )?
        }
    };
    ensure_parent(out)?;
    store_save(&store, out)?;
    write_sidecar(out, "embedding_store", cfg)?;
    println!(
        "wrote {} vectors of dim {} to {}",
        store.len(),
        store.dim(),
        out.display()
    );
    Ok(Completion::Done)
}

// backend

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Hidden-concept oracle; needs mock-generated samples.
    #[default]
    Mock,
    /// Chat-completion endpoint configured through the environment.
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub mock: MockEnvironmentConfig,
    pub timeout_secs: f64,
    /// Directory images resolve against for the remote backend.
    pub image_root: Option<PathBuf>,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            kind: BackendKind::Mock,
            mock: MockEnvironmentConfig::default(),
            timeout_secs: 60.0,
            image_root: None,
        }
    }
}

fn make_backend<'a>(
    settings: &BackendSettings,
    samples: impl IntoIterator<Item = &'a pgds_core::Sample>,
    default_root: PathBuf,
) -> Result<Box<dyn ModelBackend>> {
    Ok(match settings.kind {
        BackendKind::Mock => Box::new(MockOracle::from_samples(settings.mock.clone(), samples)?),
        BackendKind::Remote => {
            if !(settings.timeout_secs.is_finite() && settings.timeout_secs > 0.0) {
                return Err(Error::Config("timeout_secs must be positive".into()));
            }
            let mut rc = RemoteConfig::from_env().map_err(|e| Error::Config(e.to_string()))?;
            rc.timeout = std::time::Duration::from_secs_f64(settings.timeout_secs);
            rc.image_root = settings.image_root.clone().unwrap_or(default_root);
            Box::new(RemoteBackend::new(rc))
        }
    })
}

// train

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub train: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Checkpoint to resume from instead of a fresh initialization.
    pub init: Option<PathBuf>,
    pub backend: BackendSettings,
    pub trainer: TrainerConfig,
}

pub fn run_train(cfg: &TrainRunConfig, stop: &AtomicBool) -> Result<Completion> {
    let train_path = required(&cfg.train, "train")?;
    let store_path = required(&cfg.store, "store")?;
    let out = required(&cfg.out, "out")?;
    cfg.trainer.validate()?;
    let train = load_dataset(train_path)?;
    let store = store_load(store_path)?;
    let backend = make_backend(&cfg.backend, &train.samples, parent_dir(train_path))?;
    let params = match &cfg.init {
        Some(p) => checkpoint_load(p)?,
        None => init_params(store.dim(), cfg.trainer.hidden, cfg.trainer.seed)?,
    };
    let state = TrainerState::with_params(&cfg.trainer, params);
    let scorer = EmbeddingScorer::new(HashingProvider::default());
    create_dir(out)?;
    let outcome = run_training(
        &cfg.trainer,
        state,
        &train,
        &store,
        backend.as_ref(),
        &scorer,
        &mut |log, _| {
            if log.step % 50 == 0 {
                log::info!(
                    "step {} mean reward {:.4} baseline {:.4} entropy {:.3}",
                    log.step,
                    log.mean_reward,
                    log.baseline,
                    log.entropy
                );
            }
        },
        Some(stop),
    )?;
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint_save(&outcome.state.params, &ckpt)?;
    write_sidecar(&ckpt, "checkpoint", cfg)?;
    write_training_log(&out.join(LOG_FILE), cfg, &outcome.log)?;
    let last = outcome.log.last().map_or(0.0, |l| l.mean_reward);
    println!(
        "{} batches, final batch mean reward {last:.4}, checkpoint {}",
        outcome.log.len(),
        ckpt.display()
    );
    Ok(if outcome.interrupted {
        Completion::Interrupted
    } else {
        Completion::Done
    })
}

// eval

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRunConfig {
    /// Gold-labeled query split.
    pub gold: Option<PathBuf>,
    /// Existing predictions; when absent they are generated with `strategy`.
    pub predictions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub strategy: Option<Strategy>,
    pub train: Option<PathBuf>,
    pub train_store: Option<PathBuf>,
    pub query_store: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub backend: BackendSettings,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput<C> {
    pub kind: String,
    pub version: String,
    pub run_config: C,
    pub report: EvalReport,
}

pub fn run_eval(cfg: &EvalRunConfig) -> Result<Completion> {
    let gold_path = required(&cfg.gold, "gold")?;
    let out = required(&cfg.out, "out")?;
    let gold = load_dataset(gold_path)?;
    let mut eval_cfg = cfg.eval.clone();
    let predictions: Vec<ResponseRecord> = match (&cfg.predictions, cfg.strategy) {
        (Some(path), _) => read_records(path)?,
        (None, Some(strategy)) => {
            eval_cfg.strategy = strategy.name().into();
            let preds = generate_predictions(cfg, strategy, &gold, gold_path)?;
            let path = with_suffix(out, ".predictions.jsonl");
            ensure_parent(&path)?;
            write_records(&path, &preds)?;
            write_sidecar(&path, "predictions", cfg)?;
            preds
        }
        (None, None) => {
            return Err(Error::Config(
                "eval needs --predictions or --strategy".into(),
            ))
        }
    };
    let scorer = EmbeddingScorer::new(HashingProvider::default());
    let report = build_report(&eval_cfg, &gold, &predictions, &scorer)?;
    ensure_parent(out)?;
    write_json(
        out,
        &EvalOutput {
            kind: "eval_report".into(),
            version: VERSION.into(),
            run_config: cfg,
            report: report.clone(),
        },
    )?;
    print!(
        "{}",
        render_table(&[(report.strategy.clone(), report, None)])
    );
    Ok(Completion::Done)
}

fn generate_predictions(
    cfg: &EvalRunConfig,
    strategy: Strategy,
    gold: &pgds_core::DatasetSplit,
    gold_path: &Path,
) -> Result<Vec<ResponseRecord>> {
    let query_store = store_load(required(&cfg.query_store, "query-store")?)?;
    let (train, train_store) = if strategy == Strategy::ZeroShot && cfg.train.is_none() {
        (
            pgds_core::DatasetSplit::new(pgds_core::SplitName::Train, vec![]),
            EmbeddingStore::empty(query_store.dim()),
        )
    } else {
        (
            load_dataset(required(&cfg.train, "train")?)?,
            store_load(required(&cfg.train_store, "train-store")?)?,
        )
    };
    let params = match (&cfg.checkpoint, strategy) {
        (Some(p), _) => checkpoint_load(p)?,
        (None, Strategy::Pgds) => {
            return Err(Error::Config("strategy pgds needs --checkpoint".into()))
        }
        (None, _) => PolicyParams::zeros(query_store.dim(), 1),
    };
    let backend = make_backend(
        &cfg.backend,
        train.samples.iter().chain(&gold.samples),
        parent_dir(gold_path),
    )?;
    let inputs = EvalInputs {
        train: &train,
        train_store: &train_store,
        queries: gold,
        query_store: &query_store,
    };
    Ok(
        predict_strategy(strategy, &cfg.trainer, inputs, &params, backend.as_ref())?
            .into_iter()
            .map(|(r, _)| r)
            .collect(),
    )
}

// mock-run

pub fn run_mock(cfg: &MockRunConfig, out: &Path, stop: &AtomicBool) -> Result<Completion> {
    let artifacts = mock_run(cfg, Some(stop))?;
    let written = write_mock_run(&artifacts, out)?;
    let report = &artifacts.report;
    let rows: Vec<_> = report
        .strategies
        .iter()
        .map(|s| {
            (
                s.strategy.name().to_string(),
                s.report.clone(),
                Some(s.golden_rate),
            )
        })
        .collect();
    print!("{}", render_table(&rows));
    println!(
        "training golden rate (last window) {:.3}; wrote {} files to {}",
        report.training.final_golden_rate,
        written.len(),
        out.display()
    );
    Ok(if report.training.interrupted {
        Completion::Interrupted
    } else {
        Completion::Done
    })
}

// report

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.2}", 100.0 * x))
}

/// Markdown table of the headline metrics, one row per strategy.
pub fn render_table(rows: &[(String, EvalReport, Option<f64>)]) -> String {
    let mut s = String::from(
        "| strategy | n | acc | P | R | F1 | macro-F1 | target acc | BLEU-4 | golden |\n|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for (name, r, golden) in rows {
        let c = r.classification.as_ref();
        let _ = writeln!(
            s,
            "| {name} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.evaluated,
            pct(c.map(|c| c.accuracy)),
            pct(c.map(|c| c.precision)),
            pct(c.map(|c| c.recall)),
            pct(c.map(|c| c.f1_positive)),
            pct(c.map(|c| c.f1_macro)),
            pct(r.generation.target_accuracy),
            pct(r.generation.bleu4),
            pct(*golden),
        );
    }
    s
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRunConfig {
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn run_report(cfg: &ReportRunConfig) -> Result<Completion> {
    if cfg.inputs.is_empty() {
        return Err(Error::Config("report needs at least one input file".into()));
    }
    let mut rows = Vec::new();
    for path in &cfg.inputs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: invalid JSON: {e}", path.display())))?;
        match value.get("kind").and_then(|k| k.as_str()) {
            Some("mock_run_report") => {
                let r: ComparisonReport = parse_as(path, value)?;
                rows.extend(
                    r.strategies
                        .into_iter()
                        .map(|s| (s.strategy.name().to_string(), s.report, Some(s.golden_rate))),
                );
            }
            Some("eval_report") => {
                let r: EvalOutput<serde_json::Value> = parse_as(path, value)?;
                rows.push((r.report.strategy.clone(), r.report, None));
            }
            other => {
                return Err(Error::Config(format!(
                    "{}: unsupported report kind {other:?}",
                    path.display()
                )))
            }
        }
    }
    let table = render_table(&rows);
    match &cfg.out {
        Some(out) => {
            ensure_parent(out)?;
            std::fs::write(out, &table)
                .map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
            write_sidecar(out, "report_table", cfg)?;
        }
        None => print!("{table}"),
    }
    Ok(Completion::Done)
}

fn parse_as<T: serde::de::DeserializeOwned>(path: &Path, value: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(value)
        .map_err(|e| Error::Config(format!("{}: {}: {}", path.display(), e.path(), e.inner())))
}
