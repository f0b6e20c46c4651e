//! Deterministic mock oracle and the planted synthetic environment.
//!
//! Every sample carries a hidden concept id. Embeddings are a unit-scale
//! surface-cluster vector followed by a small concept indicator, with
//! surface clusters drawn independently of concepts. The oracle answers
//! correctly exactly when some demonstration shares the query's concept.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, Capabilities, ModelBackend};
use crate::data::{DatasetSplit, Sample, SplitName};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::hashing::StableHasher;
use crate::parse::render_tagged;
use crate::prompt::PromptBundle;

/// Sample `extra` key holding the hidden concept id.
pub const CONCEPT_KEY: &str = "mock_concept";
/// Sample `extra` key holding the surface cluster id.
pub const SURFACE_KEY: &str = "mock_surface";

const DECOY_TARGET: &str = "无关对象";
const DECOY_EXPLANATION: &str = "误将字面内容当作讽刺";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockEnvironmentConfig {
    pub concept_count: usize,
    pub surface_dim: usize,
    pub concept_dim: usize,
    pub concept_feature_scale: f64,
    /// Probability that a response without a concept match is a fair coin
    /// flip between right and wrong instead of a confident wrong answer.
    pub noise_level: f64,
    /// Training samples per surface cluster.
    pub samples_per_cluster: usize,
    /// Training samples per surface group. Clusters of one group sit close
    /// together, so a query's candidate pool is drawn from its own group.
    pub group_size: usize,
    /// Distance of each cluster vector from its group center.
    pub surface_spread: f64,
    pub seed: u64,
}

impl Default for MockEnvironmentConfig {
    fn default() -> Self {
        MockEnvironmentConfig {
            concept_count: 8,
            surface_dim: 64,
            concept_dim: 8,
            concept_feature_scale: 0.1,
            noise_level: 0.0,
            samples_per_cluster: 2,
            group_size: 100,
            surface_spread: 0.2,
            seed: 7,
        }
    }
}

impl MockEnvironmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concept_count == 0
            || self.surface_dim == 0
            || self.samples_per_cluster == 0
            || self.group_size == 0
        {
            return Err(Error::Config(
                "concept_count, surface_dim, samples_per_cluster and group_size must be positive"
                    .into(),
            ));
        }
        if !(self.surface_spread.is_finite() && self.surface_spread >= 0.0) {
            return Err(Error::Config(
                "surface_spread must be finite and >= 0".into(),
            ));
        }
        if self.concept_dim < self.concept_count {
            return Err(Error::Config(format!(
                "concept_dim {} cannot index {} concepts",
                self.concept_dim, self.concept_count
            )));
        }
        if !(self.concept_feature_scale.is_finite() && self.concept_feature_scale >= 0.0) {
            return Err(Error::Config(
                "concept_feature_scale must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!(
                "noise_level {} is not a probability",
                self.noise_level
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.surface_dim + self.concept_dim
    }
}

/// What the oracle knows about a sample and the policy does not.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenInfo {
    pub concept: u32,
    pub label: u8,
    pub target: String,
    pub explanation: String,
}

pub type HiddenConcepts = BTreeMap<String, HiddenInfo>;

/// Collects hidden info from samples that carry a concept id.
pub fn hidden_concepts<'a>(
    samples: impl IntoIterator<Item = &'a Sample>,
) -> Result<HiddenConcepts> {
    let mut map = BTreeMap::new();
    for s in samples {
        let Some(raw) = s.extra.get(CONCEPT_KEY) else {
            continue;
        };
        let concept = raw.parse::<u32>().map_err(|_| {
            Error::Config(format!("sample {:?} has a non-integer {CONCEPT_KEY}", s.id))
        })?;
        let label = s
            .label
            .ok_or_else(|| Error::Config(format!("mock sample {:?} has no label", s.id)))?;
        map.insert(
            s.id.clone(),
            HiddenInfo {
                concept,
                label,
                target: s.target.clone().unwrap_or_default(),
                explanation: s.explanation.clone().unwrap_or_default(),
            },
        );
    }
    Ok(map)
}

fn lookup<'a>(hidden: &'a HiddenConcepts, id: &str) -> Result<&'a HiddenInfo, BackendError> {
    hidden
        .get(id)
        .ok_or_else(|| BackendError::UnknownSample(id.to_string()))
}

/// Whether the bundle holds a demonstration sharing the query's concept.
pub fn has_golden(bundle: &PromptBundle, hidden: &HiddenConcepts) -> Result<bool, BackendError> {
    let query = lookup(hidden, &bundle.query.id)?;
    let mut golden = false;
    for d in &bundle.demos {
        golden |= lookup(hidden, &d.id)?.concept == query.concept;
    }
    Ok(golden)
}

fn coin(cfg: &MockEnvironmentConfig, bundle: &PromptBundle, salt: u64) -> f64 {
    let mut demo_ids = bundle.demo_ids();
    demo_ids.sort_unstable();
    let mut h = StableHasher::new(cfg.seed);
    h.write_u64(salt);
    h.write_str(&bundle.query.id);
    h.write_u64(demo_ids.len() as u64);
    for id in demo_ids {
        h.write_str(id);
    }
    h.write_u64(cfg.noise_level.to_bits());
    h.finish_unit()
}

/// Answers a prompt from the hidden concept map alone.
pub fn mock_oracle_respond(
    cfg: &MockEnvironmentConfig,
    bundle: &PromptBundle,
    hidden: &HiddenConcepts,
) -> Result<String, BackendError> {
    let query = lookup(hidden, &bundle.query.id)?;
    let correct = has_golden(bundle, hidden)?
        || (coin(cfg, bundle, 0) < cfg.noise_level && coin(cfg, bundle, 1) < 0.5);
    let lang = bundle.language;
    Ok(match (correct, query.label) {
        (true, 1) => render_tagged(true, &query.target, &query.explanation, lang),
        (true, _) | (false, 1) => render_tagged(false, "", "", lang),
        (false, _) => render_tagged(true, DECOY_TARGET, DECOY_EXPLANATION, lang),
    })
}

#[derive(Debug, Clone)]
pub struct MockOracle {
    pub cfg: MockEnvironmentConfig,
    pub hidden: HiddenConcepts,
}

impl MockOracle {
    pub fn new(cfg: MockEnvironmentConfig, hidden: HiddenConcepts) -> Self {
        MockOracle { cfg, hidden }
    }

    pub fn from_samples<'a>(
        cfg: MockEnvironmentConfig,
        samples: impl IntoIterator<Item = &'a Sample>,
    ) -> Result<Self> {
        Ok(MockOracle::new(cfg, hidden_concepts(samples)?))
    }

    pub fn is_golden(&self, query: &str, demo: &str) -> bool {
        match (self.hidden.get(query), self.hidden.get(demo)) {
            (Some(q), Some(d)) => q.concept == d.concept,
            _ => false,
        }
    }
}

impl ModelBackend for MockOracle {
    fn respond(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        mock_oracle_respond(&self.cfg, bundle, &self.hidden)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::MULTI_IMAGE
    }
}

/// A generated environment: training pool, held-out queries and their
/// embedding stores.
#[derive(Debug, Clone)]
pub struct MockWorld {
    pub train: DatasetSplit,
    pub heldout: DatasetSplit,
    pub train_store: EmbeddingStore,
    pub query_store: EmbeddingStore,
    pub hidden: HiddenConcepts,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn mock_sample(id: String, concept: usize, surface: usize, label: u8) -> Sample {
    let mut s = Sample::new(id.clone(), format!("配文 {id}")).with_label(label);
    if label == 1 {
        s = s.with_gold(
            format!("对象{concept}"),
            format!("{id} 借图文反差讽刺了对象{concept}"),
        );
    }
    s.extra.insert(CONCEPT_KEY.into(), concept.to_string());
    s.extra.insert(SURFACE_KEY.into(), surface.to_string());
    s
}

/// Builds `n_samples` training samples and `queries` held-out queries.
///
/// Training samples fill surface clusters evenly; held-out queries pick a
/// cluster uniformly. Concepts and labels are uniform and independent.
pub fn generate_mock_dataset(
    cfg: &MockEnvironmentConfig,
    n_samples: usize,
    queries: usize,
) -> Result<MockWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clusters = n_samples.div_ceil(cfg.samples_per_cluster).max(1);
    let groups = n_samples.div_ceil(cfg.group_size).max(1);
    let group_centers: Vec<Vec<f64>> = (0..groups)
        .map(|_| random_unit(&mut rng, cfg.surface_dim))
        .collect();
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|c| {
            let offset = random_unit(&mut rng, cfg.surface_dim);
            let v: Vec<f64> = group_centers[c % groups]
                .iter()
                .zip(&offset)
                .map(|(g, o)| g + cfg.surface_spread * o)
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let embed = |surface: usize, concept: usize| -> Vec<f64> {
        let mut v = centers[surface].clone();
        v.extend((0..cfg.concept_dim).map(|j| {
            if j == concept {
                cfg.concept_feature_scale
            } else {
                0.0
            }
        }));
        v
    };

    let mut assignment: Vec<usize> = (0..n_samples).map(|i| i % clusters).collect();
    assignment.shuffle(&mut rng);

    let draw = |prefix: char, i: usize, surface: usize, rng: &mut ChaCha8Rng| {
        let concept = rng.random_range(0..cfg.concept_count);
        let label = u8::from(rng.random_bool(0.5));
        let id = format!("{prefix}{i:05}");
        (
            mock_sample(id, concept, surface, label),
            embed(surface, concept),
        )
    };

    let (train, train_rows): (Vec<Sample>, Vec<Vec<f64>>) = assignment
        .iter()
        .enumerate()
        .map(|(i, &surface)| draw('m', i, surface, &mut rng))
        .unzip();
    let (heldout, query_rows): (Vec<Sample>, Vec<Vec<f64>>) = (0..queries)
        .map(|i| {
            let surface = rng.random_range(0..clusters);
            draw('q', i, surface, &mut rng)
        })
        .unzip();

    let train_store =
        EmbeddingStore::from_rows(train.iter().map(|s| s.id.clone()).collect(), train_rows)?;
    let query_store =
        EmbeddingStore::from_rows(heldout.iter().map(|s| s.id.clone()).collect(), query_rows)?;
    let hidden = hidden_concepts(train.iter().chain(&heldout))?;
    Ok(MockWorld {
        train: DatasetSplit::new(SplitName::Train, train),
        heldout: DatasetSplit::new(SplitName::Test, heldout),
        train_store,
        query_store,
        hidden,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::retrieve_candidates;
    use crate::embed::HashingProvider;
    use crate::metrics::EmbeddingScorer;
    use crate::prompt::{build_prompt, Language};
    use crate::reward::{compute_reward, RewardWeights};
    use std::collections::HashSet;

    fn world() -> MockWorld {
        generate_mock_dataset(&MockEnvironmentConfig::default(), 500, 200).unwrap()
    }

    fn pick(w: &MockWorld, pred: impl Fn(&HiddenInfo, &HiddenInfo) -> bool) -> (&Sample, &Sample) {
        for q in &w.heldout.samples {
            for d in &w.train.samples {
                if pred(&w.hidden[&q.id], &w.hidden[&d.id]) {
                    return (q, d);
                }
            }
        }
        panic!("no pair")
    }

    #[test]
    fn matched_demo_is_fully_correct() {
        let w = world();
        let scorer = EmbeddingScorer::new(HashingProvider::default());
        for noise in [0.0, 0.5, 1.0] {
            let cfg = MockEnvironmentConfig {
                noise_level: noise,
                ..Default::default()
            };
            let (q, d) = pick(&w, |q, d| q.concept == d.concept && q.label == 1);
            let bundle = build_prompt(std::slice::from_ref(d), q, Language::Zh).unwrap();
            let raw = mock_oracle_respond(&cfg, &bundle, &w.hidden).unwrap();
            let r = compute_reward(&raw, q, &RewardWeights::uniform(), &scorer).unwrap();
            assert_eq!(r.total, 1.0);
        }
    }

    #[test]
    fn unmatched_at_zero_noise_is_wrong() {
        let w = world();
        let scorer = EmbeddingScorer::new(HashingProvider::default());
        let cfg = MockEnvironmentConfig::default();
        for label in [0, 1] {
            let (q, d) = pick(&w, |q, d| q.concept != d.concept && q.label == label);
            let bundle = build_prompt(std::slice::from_ref(d), q, Language::En).unwrap();
            let raw = mock_oracle_respond(&cfg, &bundle, &w.hidden).unwrap();
            let r = compute_reward(&raw, q, &RewardWeights::uniform(), &scorer).unwrap();
            assert_eq!((r.format, r.cls), (1.0, 0.0));
        }
    }

    #[test]
    fn full_noise_is_a_coin_flip() {
        let w = world();
        let cfg = MockEnvironmentConfig {
            noise_level: 1.0,
            ..Default::default()
        };
        let mut correct = 0;
        let mut total = 0;
        for q in &w.heldout.samples {
            let d = w
                .train
                .samples
                .iter()
                .find(|d| w.hidden[&d.id].concept != w.hidden[&q.id].concept)
                .unwrap();
            let bundle = build_prompt(std::slice::from_ref(d), q, Language::Zh).unwrap();
            let raw = mock_oracle_respond(&cfg, &bundle, &w.hidden).unwrap();
            let parsed = crate::parse::parse_structured_output(&raw, Default::default()).unwrap();
            total += 1;
            correct += usize::from(Some(parsed.label()) == q.label);
        }
        let rate = correct as f64 / total as f64;
        assert!((0.35..0.65).contains(&rate), "{rate}");
    }

    #[test]
    fn oracle_is_pure() {
        let w = world();
        let cfg = MockEnvironmentConfig {
            noise_level: 0.5,
            ..Default::default()
        };
        let q = &w.heldout.samples[0];
        let a = w.train.samples[0].clone();
        let b = w.train.samples[1].clone();
        let ab = build_prompt(&[a.clone(), b.clone()], q, Language::Zh).unwrap();
        let ba = build_prompt(&[b, a], q, Language::Zh).unwrap();
        let first = mock_oracle_respond(&cfg, &ab, &w.hidden).unwrap();
        for _ in 0..100 {
            assert_eq!(mock_oracle_respond(&cfg, &ab, &w.hidden).unwrap(), first);
        }
        assert_eq!(mock_oracle_respond(&cfg, &ba, &w.hidden).unwrap(), first);
    }

    #[test]
    fn unknown_id_is_error() {
        let w = world();
        let bundle = build_prompt(&[], &Sample::new("ghost", "x"), Language::Zh).unwrap();
        assert!(matches!(
            mock_oracle_respond(&MockEnvironmentConfig::default(), &bundle, &w.hidden),
            Err(BackendError::UnknownSample(_))
        ));
    }

    #[test]
    fn same_concept_and_surface_embed_identically() {
        let w = world();
        let by_key = |s: &Sample| (s.extra[SURFACE_KEY].clone(), s.extra[CONCEPT_KEY].clone());
        let mut seen: BTreeMap<(String, String), &str> = BTreeMap::new();
        let mut checked = 0;
        for s in &w.train.samples {
            if let Some(prev) = seen.insert(by_key(s), &s.id) {
                assert_eq!(w.train_store.get(prev), w.train_store.get(&s.id));
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn zero_scale_hides_concepts() {
        let cfg = MockEnvironmentConfig {
            concept_feature_scale: 0.0,
            ..Default::default()
        };
        let w = generate_mock_dataset(&cfg, 100, 10).unwrap();
        for row in 0..w.train_store.len() {
            assert!(w.train_store.row(row)[cfg.surface_dim..]
                .iter()
                .all(|&x| x == 0.0));
        }
    }

    #[test]
    fn retrieval_follows_surface_not_concept() {
        let w = world();
        let mut surface_hits = 0;
        let mut concept_hits = 0;
        for (row, s) in w.train.samples.iter().enumerate() {
            let exclude: HashSet<&str> = [s.id.as_str()].into();
            let top = retrieve_candidates(&w.train_store.vector(row), &w.train_store, 1, &exclude)
                .unwrap();
            let n = w.train.get(&top[0].id).unwrap();
            // Brute force: the nearest row by full scan.
            let q = w.train_store.vector(row);
            let mut best: Option<(f64, &str)> = None;
            for (r, id) in w.train_store.ids().iter().enumerate() {
                if r == row {
                    continue;
                }
                let sim = crate::embed::cosine_similarity(&q, &w.train_store.vector(r)).unwrap();
                if best.is_none_or(|(b, bid)| sim > b || (sim == b && id.as_str() < bid)) {
                    best = Some((sim, id));
                }
            }
            assert_eq!(best.unwrap().1, top[0].id);
            surface_hits += usize::from(n.extra[SURFACE_KEY] == s.extra[SURFACE_KEY]);
            concept_hits += usize::from(n.extra[CONCEPT_KEY] == s.extra[CONCEPT_KEY]);
        }
        assert!(surface_hits as f64 / 500.0 > 0.8, "{surface_hits}");
        assert!(concept_hits < surface_hits);
    }

    #[test]
    fn config_validation() {
        let bad = MockEnvironmentConfig {
            noise_level: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MockEnvironmentConfig {
            concept_dim: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
