//! Task metrics for identification, target recognition and explanation
//! generation, plus report assembly.

mod bleu;
mod classification;
mod report;

pub use bleu::{bleu4, tokenize, Tokenization};
pub use classification::{classification_metrics, harmonic, ClassificationReport, ConfusionCounts};
pub use report::{build_report, EvalConfig, EvalReport, GenerationReport, Prediction};

use crate::embed::{cosine_slices, EmbeddingProvider};
use crate::error::{Error, Result};

/// Default threshold for counting a predicted target as a match.
pub const DEFAULT_TARGET_THRESHOLD: f64 = 0.7;

/// Graded similarity between a predicted and a gold string, in [0, 1].
pub trait SemanticScorer: Send + Sync {
    fn score(&self, pred: &str, gold: &str) -> Result<f64>;
}

/// Clamped cosine of provider text embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingScorer<P> {
    provider: P,
}

impl<P: EmbeddingProvider> EmbeddingScorer<P> {
    pub fn new(provider: P) -> Self {
        EmbeddingScorer { provider }
    }
}

impl<P: EmbeddingProvider> SemanticScorer for EmbeddingScorer<P> {
    fn score(&self, pred: &str, gold: &str) -> Result<f64> {
        semantic_score(pred, gold, &self.provider)
    }
}

impl<S: SemanticScorer + ?Sized> SemanticScorer for &S {
    fn score(&self, pred: &str, gold: &str) -> Result<f64> {
        (**self).score(pred, gold)
    }
}

/// `max(0, cosine(embed(pred), embed(gold)))`; identical strings score 1.
pub fn semantic_score<P: EmbeddingProvider + ?Sized>(
    pred: &str,
    gold: &str,
    provider: &P,
) -> Result<f64> {
    if pred == gold {
        return Ok(1.0);
    }
    let wrap = |message: String| Error::Provider {
        id: "<semantic-score>".into(),
        message,
    };
    let a = provider.embed_text(pred).map_err(wrap)?;
    let b = provider.embed_text(gold).map_err(wrap)?;
    Ok(cosine_slices(&a, &b).clamp(0.0, 1.0))
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fraction of gold-positive pairs whose predicted target matches: equal
/// after whitespace normalization, or scored at or above `threshold`.
/// `None` when there are no pairs.
pub fn target_accuracy<S: SemanticScorer + ?Sized>(
    pairs: &[(&str, &str)],
    scorer: &S,
    threshold: f64,
) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    for &(pred, gold) in pairs {
        if normalize_ws(pred) == normalize_ws(gold) || scorer.score(pred, gold)? >= threshold {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / pairs.len() as f64))
}
