//! End-to-end synthetic experiment: generate a planted mock environment,
//! train the policy against the mock oracle, then compare selection
//! strategies on held-out queries.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::mock::{generate_mock_dataset, MockEnvironmentConfig, MockOracle, MockWorld};
use crate::backend::{respond_with_retry, ModelBackend};
use crate::data::{write_records, DatasetSplit, ResponseRecord, Sample};
use crate::embed::{
    retrieve_candidates, store_save, EmbeddingStore, EmbeddingVector, HashingProvider,
};
use crate::error::{Error, Result};
use crate::hashing::StableHasher;
use crate::metrics::{build_report, EmbeddingScorer, EvalConfig, EvalReport};
use crate::policy::{checkpoint_save, forward, greedy_top_k, PolicyParams};
use crate::prompt::build_prompt;
use crate::trainer::{run_training, BatchLog, TrainerConfig, TrainerState};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockRunConfig {
    pub env: MockEnvironmentConfig,
    pub trainer: TrainerConfig,
    pub train_samples: usize,
    pub heldout_queries: usize,
    pub eval: EvalConfig,
}

impl Default for MockRunConfig {
    fn default() -> Self {
        MockRunConfig {
            env: MockEnvironmentConfig::default(),
            trainer: TrainerConfig {
                learning_rate: DEFAULT_MOCK_LEARNING_RATE,
                retry_base_ms: 0,
                ..TrainerConfig::default()
            },
            train_samples: 500,
            heldout_queries: 2000,
            eval: EvalConfig::default(),
        }
    }
}

/// Step size used by the synthetic experiment.
pub const DEFAULT_MOCK_LEARNING_RATE: f64 = 10.0;

impl MockRunConfig {
    /// Sets every seed in the run from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.env.seed = seed;
        self.trainer.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.trainer.validate()?;
        if self.train_samples < 2 {
            return Err(Error::Config("train_samples must be at least 2".into()));
        }
        if self.heldout_queries == 0 {
            return Err(Error::Config("heldout_queries must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    ZeroShot,
    #[serde(rename = "random-1-shot")]
    Random1Shot,
    #[serde(rename = "rag-1-shot")]
    Rag1Shot,
    Pgds,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::ZeroShot,
        Strategy::Random1Shot,
        Strategy::Rag1Shot,
        Strategy::Pgds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero-shot",
            Strategy::Random1Shot => "random-1-shot",
            Strategy::Rag1Shot => "rag-1-shot",
            Strategy::Pgds => "pgds",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    /// Share of queries whose demonstrations include one with the query's
    /// hidden concept.
    pub golden_rate: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub episodes: usize,
    pub batches: usize,
    pub final_baseline: f64,
    /// Golden-selection rate over the last 100 batches of training.
    pub final_golden_rate: f64,
    /// Mean reward per consecutive 100-batch window.
    pub window_mean_rewards: Vec<f64>,
    pub interrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub kind: String,
    pub version: String,
    pub run_config: MockRunConfig,
    pub training: TrainingSummary,
    pub strategies: Vec<StrategyResult>,
}

impl ComparisonReport {
    pub fn strategy(&self, s: Strategy) -> Option<&StrategyResult> {
        self.strategies.iter().find(|r| r.strategy == s)
    }

    /// Classification accuracy of a strategy, 0 when nothing was evaluated.
    pub fn accuracy(&self, s: Strategy) -> f64 {
        self.strategy(s)
            .and_then(|r| r.report.classification.as_ref())
            .map_or(0.0, |c| c.accuracy)
    }
}

#[derive(Debug, Clone)]
pub struct MockRunArtifacts {
    pub report: ComparisonReport,
    pub params: PolicyParams,
    pub log: Vec<BatchLog>,
    pub world: MockWorld,
}

const WINDOW: usize = 100;

fn derived_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = StableHasher::new(seed);
    h.write_str(tag);
    h.write_u64(index);
    h.finish()
}

/// Demonstrations a strategy picks for one query.
#[allow(clippy::too_many_arguments)]
fn select_demos(
    strategy: Strategy,
    k: usize,
    pool_size: usize,
    seed: u64,
    index: usize,
    query_id: &str,
    query: &EmbeddingVector,
    train: &DatasetSplit,
    store: &EmbeddingStore,
    params: &PolicyParams,
) -> Result<Vec<String>> {
    let exclude: HashSet<&str> = [query_id].into();
    Ok(match strategy {
        Strategy::ZeroShot => vec![],
        Strategy::Random1Shot => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derived_seed(seed, "random-1-shot", index as u64));
            vec![train.samples[rng.random_range(0..train.len())].id.clone()]
        }
        Strategy::Rag1Shot => retrieve_candidates(query, store, 1, &exclude)?
            .into_iter()
            .map(|c| c.id)
            .collect(),
        Strategy::Pgds => {
            let pool: Vec<(String, EmbeddingVector)> =
                retrieve_candidates(query, store, pool_size, &exclude)?
                    .into_iter()
                    .map(|c| (c.id, store.vector(c.row)))
                    .collect();
            let fwd = forward(params, query, &pool)?;
            greedy_top_k(&fwd.dist, k.min(pool.len()))?.ids
        }
    })
}

/// Training pool and query set a strategy is evaluated on.
#[derive(Debug, Clone, Copy)]
pub struct EvalInputs<'a> {
    pub train: &'a DatasetSplit,
    pub train_store: &'a EmbeddingStore,
    pub queries: &'a DatasetSplit,
    pub query_store: &'a EmbeddingStore,
}

/// One answer per query, paired with the demonstration ids it was given.
///
/// Backend faults that survive the retry budget yield an empty response.
pub fn predict_strategy<B: ModelBackend + ?Sized>(
    strategy: Strategy,
    trainer: &TrainerConfig,
    inputs: EvalInputs<'_>,
    params: &PolicyParams,
    backend: &B,
) -> Result<Vec<(ResponseRecord, Vec<String>)>> {
    if inputs.train.is_empty() && strategy != Strategy::ZeroShot {
        return Err(Error::EmptyPool);
    }
    let retry = trainer.retry_policy();
    inputs
        .queries
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let emb = inputs
                .query_store
                .get(&q.id)
                .ok_or_else(|| Error::IdMismatch(format!("{} has no embedding", q.id)))?;
            let ids = select_demos(
                strategy,
                trainer.k,
                trainer.pool_size,
                trainer.seed,
                i,
                &q.id,
                &emb,
                inputs.train,
                inputs.train_store,
                params,
            )?;
            let demos: Vec<Sample> = ids
                .iter()
                .map(|id| {
                    inputs
                        .train
                        .get(id)
                        .cloned()
                        .ok_or_else(|| Error::UnknownCandidate(id.clone()))
                })
                .collect::<Result<_>>()?;
            let bundle = build_prompt(&demos, q, trainer.language)?;
            let response = respond_with_retry(backend, &bundle, &retry).unwrap_or_else(|e| {
                log::warn!("{} on {}: backend fault: {e}", strategy.name(), q.id);
                String::new()
            });
            Ok((
                ResponseRecord {
                    id: q.id.clone(),
                    response,
                    strategy: Some(strategy.name().into()),
                },
                ids,
            ))
        })
        .collect()
}

/// Runs one strategy over every held-out query.
pub fn evaluate_strategy<B: ModelBackend + ?Sized>(
    strategy: Strategy,
    cfg: &MockRunConfig,
    world: &MockWorld,
    oracle: &MockOracle,
    backend: &B,
    params: &PolicyParams,
) -> Result<StrategyResult> {
    let inputs = EvalInputs {
        train: &world.train,
        train_store: &world.train_store,
        queries: &world.heldout,
        query_store: &world.query_store,
    };
    let rows = predict_strategy(strategy, &cfg.trainer, inputs, params, backend)?;
    let golden = rows
        .iter()
        .filter(|(r, ids)| ids.iter().any(|d| oracle.is_golden(&r.id, d)))
        .count() as f64
        / rows.len().max(1) as f64;
    let predictions: Vec<ResponseRecord> = rows.into_iter().map(|(r, _)| r).collect();
    let eval_cfg = EvalConfig {
        strategy: strategy.name().into(),
        ..cfg.eval.clone()
    };
    let scorer = EmbeddingScorer::new(HashingProvider::default());
    Ok(StrategyResult {
        strategy,
        golden_rate: golden,
        report: build_report(&eval_cfg, &world.heldout, &predictions, &scorer)?,
    })
}

/// Generates the environment, trains, and evaluates all four strategies.
pub fn mock_run(cfg: &MockRunConfig, stop: Option<&AtomicBool>) -> Result<MockRunArtifacts> {
    cfg.validate()?;
    let world = generate_mock_dataset(&cfg.env, cfg.train_samples, cfg.heldout_queries)?;
    let oracle = MockOracle::new(cfg.env.clone(), world.hidden.clone());
    let scorer = EmbeddingScorer::new(HashingProvider::default());
    let state = TrainerState::new(&cfg.trainer, world.train_store.dim())?;

    let mut golden_per_batch: Vec<(usize, usize)> = Vec::new();
    let outcome = run_training(
        &cfg.trainer,
        state,
        &world.train,
        &world.train_store,
        &oracle,
        &scorer,
        &mut |_, episodes| {
            let hits = episodes
                .iter()
                .filter(|e| {
                    e.selected
                        .ids
                        .iter()
                        .any(|d| oracle.is_golden(&e.query_id, d))
                })
                .count();
            golden_per_batch.push((hits, episodes.len()));
        },
        stop,
    )?;

    let tail = &golden_per_batch[golden_per_batch.len().saturating_sub(WINDOW)..];
    let (hits, total) = tail
        .iter()
        .fold((0, 0), |(h, t), (bh, bt)| (h + bh, t + bt));
    let training = TrainingSummary {
        episodes: outcome.log.iter().map(|l| l.episodes).sum(),
        batches: outcome.log.len(),
        final_baseline: outcome.state.baseline,
        final_golden_rate: if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        },
        window_mean_rewards: outcome
            .log
            .chunks(WINDOW)
            .map(|w| w.iter().map(|l| l.mean_reward).sum::<f64>() / w.len() as f64)
            .collect(),
        interrupted: outcome.interrupted,
    };

    let params = outcome.state.params;
    let strategies = Strategy::ALL
        .iter()
        .map(|&s| evaluate_strategy(s, cfg, &world, &oracle, &oracle, &params))
        .collect::<Result<_>>()?;
    Ok(MockRunArtifacts {
        report: ComparisonReport {
            kind: "mock_run_report".into(),
            version: VERSION.into(),
            run_config: cfg.clone(),
            training,
            strategies,
        },
        params,
        log: outcome.log,
        world,
    })
}

/// Training-log header line carrying the run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogHeader<C> {
    pub kind: String,
    pub version: String,
    pub run_config: C,
}

/// Sidecar provenance for binary artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactMeta<C> {
    pub kind: String,
    pub version: String,
    pub artifact: String,
    pub run_config: C,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_sidecar<C: Serialize>(path: &Path, kind: &str, run_config: &C) -> Result<()> {
    write_json(
        &sidecar_path(path),
        &ArtifactMeta {
            kind: kind.into(),
            version: VERSION.into(),
            artifact: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            run_config,
        },
    )
}

/// Writes a line-delimited training log whose first line is a header.
pub fn write_training_log<C: Serialize>(
    path: &Path,
    run_config: &C,
    log: &[BatchLog],
) -> Result<()> {
    let mut lines = Vec::with_capacity(log.len() + 1);
    let header = LogHeader {
        kind: "training_log".to_string(),
        version: VERSION.into(),
        run_config,
    };
    lines.push(serde_json::to_value(&header).map_err(|e| Error::Config(e.to_string()))?);
    for entry in log {
        lines.push(serde_json::to_value(entry).map_err(|e| Error::Config(e.to_string()))?);
    }
    write_records(path, &lines)
}

pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "policy.pgds";
pub const LOG_FILE: &str = "training_log.jsonl";

/// Writes the report, checkpoint, training log and mock fixtures.
pub fn write_mock_run(artifacts: &MockRunArtifacts, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg = &artifacts.report.run_config;
    let mut written = Vec::new();

    let report = out_dir.join(REPORT_FILE);
    write_json(&report, &artifacts.report)?;
    written.push(report);

    let ckpt = out_dir.join(CHECKPOINT_FILE);
    checkpoint_save(&artifacts.params, &ckpt)?;
    write_sidecar(&ckpt, "checkpoint", cfg)?;
    written.push(ckpt);

    let log = out_dir.join(LOG_FILE);
    write_training_log(&log, cfg, &artifacts.log)?;
    written.push(log);

    let w = &artifacts.world;
    for (name, split, store) in [
        ("train", &w.train, &w.train_store),
        ("heldout", &w.heldout, &w.query_store),
    ] {
        let data = out_dir.join(format!("mock_{name}.jsonl"));
        crate::data::save_dataset(split, &data)?;
        write_sidecar(&data, "dataset", cfg)?;
        let emb = out_dir.join(format!("mock_{name}.emb"));
        store_save(store, &emb)?;
        write_sidecar(&emb, "embedding_store", cfg)?;
        written.extend([data, emb]);
    }
    Ok(written)
}
