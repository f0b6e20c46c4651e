//! REINFORCE training of the selection policy with an EMA baseline.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{respond_with_retry, ModelBackend, RetryPolicy};
use crate::data::{DatasetSplit, ParsedResponse, Sample};
use crate::embed::{retrieve_candidates, EmbeddingStore, EmbeddingVector, DEFAULT_POOL_SIZE};
use crate::error::{Error, Result};
use crate::hashing::StableHasher;
use crate::metrics::SemanticScorer;
use crate::parse::ParseMode;
use crate::policy::{
    forward, init_params, log_prob_grad_from, sample_top_k, PolicyParams, SelectedSet,
    DEFAULT_HIDDEN,
};
use crate::prompt::{build_prompt, Language};
use crate::reward::{score_response, RewardBreakdown, RewardWeights};

/// Rule turning the batch policy-gradient estimate into a parameter step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// `theta += lr * g`.
    #[default]
    Sga,
    /// Bias-corrected moment estimates scale each coordinate's step.
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } = *self
        {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                return Err(Error::Config(format!(
                    "invalid adam settings beta1={beta1} beta2={beta2} epsilon={epsilon}"
                )));
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sga" | "sgd" => Ok(Optimizer::Sga),
            "adam" => Ok(Optimizer::adam()),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub k: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub gamma: f64,
    pub initial_baseline: f64,
    pub weights: RewardWeights,
    pub episodes: usize,
    pub seed: u64,
    pub hidden: usize,
    pub pool_size: usize,
    pub language: Language,
    pub parse_mode: ParseMode,
    pub retries: u32,
    pub retry_base_ms: u64,
    /// Upper bound on concurrent backend calls within a batch.
    pub max_in_flight: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            k: 1,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: Optimizer::Sga,
            gamma: 0.9,
            initial_baseline: 0.0,
            weights: RewardWeights::uniform(),
            episodes: 5000,
            seed: 7,
            hidden: DEFAULT_HIDDEN,
            pool_size: DEFAULT_POOL_SIZE,
            language: Language::Zh,
            parse_mode: ParseMode::Lenient,
            retries: 2,
            retry_base_ms: 500,
            max_in_flight: 8,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optimizer.validate()?;
        if self.k == 0 || self.k > self.pool_size {
            return Err(Error::KOutOfRange {
                k: self.k,
                pool: self.pool_size,
            });
        }
        if self.batch_size == 0 || self.hidden == 0 || self.max_in_flight == 0 {
            return Err(Error::Config(
                "batch_size, hidden and max_in_flight must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma {} must lie in [0, 1)",
                self.gamma
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !self.initial_baseline.is_finite() {
            return Err(Error::Config("initial baseline must be finite".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.retries,
            base_delay: Duration::from_millis(self.retry_base_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub params: PolicyParams,
    pub baseline: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub moments: Option<Moments>,
    pub step: u64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Running first and second moments for [`Optimizer::Adam`].
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub updates: i32,
}

impl TrainerState {
    pub fn new(cfg: &TrainerConfig, dim: usize) -> Result<Self> {
        Ok(Self::with_params(
            cfg,
            init_params(dim, cfg.hidden, cfg.seed)?,
        ))
    }

    pub fn with_params(cfg: &TrainerConfig, params: PolicyParams) -> Self {
        TrainerState {
            params,
            baseline: cfg.initial_baseline,
            gamma: cfg.gamma,
            learning_rate: cfg.learning_rate,
            optimizer: cfg.optimizer,
            moments: None,
            step: 0,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        }
    }

    pub fn update_baseline(&mut self, reward: f64) -> f64 {
        self.baseline = ema_update(self.baseline, reward, self.gamma);
        self.baseline
    }
}

/// `gamma * b + (1 - gamma) * r`.
pub fn ema_update(baseline: f64, reward: f64, gamma: f64) -> f64 {
    gamma * baseline + (1.0 - gamma) * reward
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub index: u64,
    pub query_id: String,
    pub candidate_ids: Vec<String>,
    pub selected: SelectedSet,
    pub parsed: Option<ParsedResponse>,
    pub reward: RewardBreakdown,
    pub entropy: f64,
    pub grad: PolicyParams,
    pub fault: Option<String>,
}

/// Applies one policy-gradient step from a batch, then moves the baseline
/// toward the batch-mean reward.
pub fn reinforce_update(state: &mut TrainerState, episodes: &[Episode]) -> Result<()> {
    if episodes.is_empty() {
        return Ok(());
    }
    for ep in episodes {
        if let Some(bad) = ep.grad.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                episode: ep.index,
                parameter: ep.grad.describe_index(bad),
            });
        }
    }
    let b = state.baseline;
    let mut acc: Option<PolicyParams> = None;
    for ep in episodes {
        let advantage = ep.reward.total - b;
        if advantage == 0.0 {
            continue;
        }
        match &mut acc {
            Some(a) => a.add_scaled(&ep.grad, advantage),
            None => {
                let mut a = PolicyParams::zeros(ep.grad.dim(), ep.grad.hidden());
                a.add_scaled(&ep.grad, advantage);
                acc = Some(a);
            }
        }
    }
    if let Some(mut acc) = acc {
        let inv_n = 1.0 / episodes.len() as f64;
        match state.optimizer {
            Optimizer::Sga => state.params.add_scaled(&acc, state.learning_rate * inv_n),
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let len = acc.len();
                let m = state.moments.get_or_insert_with(|| Moments {
                    first: vec![0.0; len],
                    second: vec![0.0; len],
                    updates: 0,
                });
                m.updates += 1;
                let c1 = 1.0 - beta1.powi(m.updates);
                let c2 = 1.0 - beta2.powi(m.updates);
                for ((g, m1), m2) in acc
                    .as_mut_slice()
                    .iter_mut()
                    .zip(&mut m.first)
                    .zip(&mut m.second)
                {
                    let d = *g * inv_n;
                    *m1 = beta1 * *m1 + (1.0 - beta1) * d;
                    *m2 = beta2 * *m2 + (1.0 - beta2) * d * d;
                    *g = (*m1 / c1) / ((*m2 / c2).sqrt() + epsilon);
                }
                state.params.add_scaled(&acc, state.learning_rate);
            }
        }
        if let Some(bad) = state.params.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                episode: episodes[0].index,
                parameter: state.params.describe_index(bad),
            });
        }
    }
    let mean = episodes.iter().map(|e| e.reward.total).sum::<f64>() / episodes.len() as f64;
    state.update_baseline(mean);
    state.step += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub step: u64,
    pub episodes: usize,
    pub mean_reward: f64,
    /// Baseline used for this batch's advantages.
    pub baseline: f64,
    pub entropy: f64,
    pub faults: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub state: TrainerState,
    pub log: Vec<BatchLog>,
    pub interrupted: bool,
}

fn derived_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = StableHasher::new(seed);
    h.write_str(tag);
    h.write_u64(index);
    h.finish()
}

struct Rollout<'a, B: ?Sized, S: ?Sized> {
    cfg: &'a TrainerConfig,
    dataset: &'a DatasetSplit,
    store: &'a EmbeddingStore,
    backend: &'a B,
    scorer: &'a S,
    foreign: HashSet<&'a str>,
    retry: RetryPolicy,
}

impl<B: ModelBackend + ?Sized, S: SemanticScorer + ?Sized> Rollout<'_, B, S> {
    fn run(&self, params: &PolicyParams, index: u64, query: &Sample) -> Result<Episode> {
        let q = self
            .store
            .get(&query.id)
            .ok_or_else(|| Error::IdMismatch(format!("{} has no embedding", query.id)))?;
        let mut exclude = self.foreign.clone();
        exclude.insert(query.id.as_str());
        let candidates = retrieve_candidates(&q, self.store, self.cfg.pool_size, &exclude)?;
        let pool: Vec<(String, EmbeddingVector)> = candidates
            .iter()
            .map(|c| (c.id.clone(), self.store.vector(c.row)))
            .collect();
        let fwd = forward(params, &q, &pool)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(self.cfg.seed, "episode", index));
        let k = self.cfg.k.min(pool.len());
        let selected = sample_top_k(&fwd.dist, k, &mut rng)?;
        let grad = log_prob_grad_from(params, &fwd, &selected.indices);
        let demos: Vec<Sample> = selected
            .ids
            .iter()
            .map(|id| {
                self.dataset
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownCandidate(id.clone()))
            })
            .collect::<Result<_>>()?;
        let bundle = build_prompt(&demos, query, self.cfg.language)?;
        let (parsed, reward, fault) = match respond_with_retry(self.backend, &bundle, &self.retry) {
            Ok(raw) => {
                let scored = score_response(
                    &raw,
                    query,
                    &self.cfg.weights,
                    self.scorer,
                    self.cfg.parse_mode,
                )?;
                (scored.parsed, scored.reward, None)
            }
            Err(e) => {
                log::warn!("episode {index} ({}): backend fault: {e}", query.id);
                (None, RewardBreakdown::zero(), Some(e.to_string()))
            }
        };
        Ok(Episode {
            index,
            query_id: query.id.clone(),
            candidate_ids: candidates.into_iter().map(|c| c.id).collect(),
            selected,
            parsed,
            reward,
            entropy: fwd.dist.entropy(),
            grad,
            fault,
        })
    }
}

/// Seeded per-epoch visiting order over the training queries.
pub fn episode_schedule(n_queries: usize, episodes: usize, seed: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(episodes);
    let mut epoch = 0u64;
    while out.len() < episodes && n_queries > 0 {
        let mut order: Vec<usize> = (0..n_queries).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derived_seed(
            seed, "epoch", epoch,
        )));
        out.extend(order.into_iter().take(episodes - out.len()));
        epoch += 1;
    }
    out
}

/// Runs the training loop. `on_batch` sees each batch after its update;
/// setting `stop` ends training at the next batch boundary.
#[allow(clippy::too_many_arguments)]
pub fn run_training<B, S>(
    cfg: &TrainerConfig,
    mut state: TrainerState,
    dataset: &DatasetSplit,
    store: &EmbeddingStore,
    backend: &B,
    scorer: &S,
    on_batch: &mut dyn FnMut(&BatchLog, &[Episode]),
    stop: Option<&AtomicBool>,
) -> Result<TrainingOutcome>
where
    B: ModelBackend + ?Sized,
    S: SemanticScorer + ?Sized,
{
    cfg.validate()?;
    if state.params.dim() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.params.dim(),
            actual: store.dim(),
        });
    }
    for s in &dataset.samples {
        if s.label.is_none() {
            return Err(Error::Config(format!(
                "training sample {:?} has no label",
                s.id
            )));
        }
    }
    let missing = store.missing(dataset.samples.iter().map(|s| s.id.as_str()));
    if !missing.is_empty() {
        return Err(Error::IdMismatch(format!(
            "{} training samples lack embeddings (first: {})",
            missing.len(),
            missing[0]
        )));
    }
    let index = dataset.index();
    let rollout = Rollout {
        cfg,
        dataset,
        store,
        backend,
        scorer,
        foreign: store
            .ids()
            .iter()
            .map(String::as_str)
            .filter(|id| !index.contains_key(id))
            .collect(),
        retry: cfg.retry_policy(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    let schedule = episode_schedule(dataset.len(), cfg.episodes, cfg.seed);
    let mut log = Vec::new();
    let mut interrupted = false;
    for (b, chunk) in schedule.chunks(cfg.batch_size).enumerate() {
        if stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
            interrupted = true;
            break;
        }
        let first = (b * cfg.batch_size) as u64;
        let params = &state.params;
        let episodes: Vec<Episode> = pool.install(|| {
            chunk
                .par_iter()
                .enumerate()
                .map(|(i, &qi)| rollout.run(params, first + i as u64, &dataset.samples[qi]))
                .collect::<Result<_>>()
        })?;
        let baseline = state.baseline;
        reinforce_update(&mut state, &episodes)?;
        let n = episodes.len() as f64;
        let entry = BatchLog {
            step: state.step,
            episodes: episodes.len(),
            mean_reward: episodes.iter().map(|e| e.reward.total).sum::<f64>() / n,
            baseline,
            entropy: episodes.iter().map(|e| e.entropy).sum::<f64>() / n,
            faults: episodes.iter().filter(|e| e.fault.is_some()).count(),
        };
        on_batch(&entry, &episodes);
        log.push(entry);
    }
    Ok(TrainingOutcome {
        state,
        log,
        interrupted,
    })
}
