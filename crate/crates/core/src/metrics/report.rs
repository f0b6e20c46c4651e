use serde::{Deserialize, Serialize};

use super::{
    bleu4, classification_metrics, target_accuracy, ClassificationReport, SemanticScorer,
    Tokenization,
};
use crate::data::{DatasetSplit, ResponseRecord};
use crate::error::{Error, Result};
use crate::parse::{parse_structured_output, ParseMode};

pub type Prediction = ResponseRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub strategy: String,
    pub scorer: String,
    pub threshold: f64,
    pub tokenization: Tokenization,
    pub parse_mode: ParseMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            strategy: "unspecified".into(),
            scorer: "hashing".into(),
            threshold: super::DEFAULT_TARGET_THRESHOLD,
            tokenization: Tokenization::Char,
            parse_mode: ParseMode::Lenient,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    /// Gold-positive samples the generation metrics average over.
    pub positives: usize,
    pub target_accuracy: Option<f64>,
    pub bleu4: Option<f64>,
    pub semantic_score_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: String,
    /// `"ok"`, or `"no_data"` when nothing was evaluated.
    pub status: String,
    pub strategy: String,
    pub evaluated: usize,
    pub parse_failures: usize,
    pub classification: Option<ClassificationReport>,
    pub generation: GenerationReport,
    pub config: EvalConfig,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Aggregates predictions against gold samples matched by id.
///
/// Unparseable answers count as a non-sarcastic verdict with empty target
/// and explanation, and are tallied in `parse_failures`.
pub fn build_report<S: SemanticScorer + ?Sized>(
    cfg: &EvalConfig,
    gold: &DatasetSplit,
    predictions: &[Prediction],
    scorer: &S,
) -> Result<EvalReport> {
    let index = gold.index();
    let mut labels = Vec::with_capacity(predictions.len());
    let mut targets: Vec<(String, String)> = Vec::new();
    let mut bleu = Vec::new();
    let mut semantic = Vec::new();
    let mut parse_failures = 0;

    for pred in predictions {
        let sample = index
            .get(pred.id.as_str())
            .ok_or_else(|| Error::IdMismatch(pred.id.clone()))?;
        let gold_label = sample
            .label
            .ok_or_else(|| Error::Config(format!("gold sample {:?} has no label", sample.id)))?;
        let (label, target, explanation) =
            match parse_structured_output(&pred.response, cfg.parse_mode) {
                Ok(p) => (
                    p.label(),
                    p.target().to_string(),
                    p.explanation().to_string(),
                ),
                Err(_) => {
                    parse_failures += 1;
                    (0, String::new(), String::new())
                }
            };
        labels.push((label, gold_label));
        if gold_label == 1 {
            let gold_target = sample.target.clone().unwrap_or_default();
            let gold_exp = sample.explanation.clone().unwrap_or_default();
            bleu.push(bleu4(&explanation, &[gold_exp.as_str()], cfg.tokenization));
            semantic.push(scorer.score(&explanation, &gold_exp)?.clamp(0.0, 1.0));
            targets.push((target, gold_target));
        }
    }

    let classification = if labels.is_empty() {
        None
    } else {
        Some(classification_metrics(&labels)?)
    };
    let target_pairs: Vec<(&str, &str)> = targets
        .iter()
        .map(|(p, g)| (p.as_str(), g.as_str()))
        .collect();
    Ok(EvalReport {
        kind: "eval_report".into(),
        status: if labels.is_empty() { "no_data" } else { "ok" }.into(),
        strategy: cfg.strategy.clone(),
        evaluated: labels.len(),
        parse_failures,
        classification,
        generation: GenerationReport {
            positives: targets.len(),
            target_accuracy: target_accuracy(&target_pairs, scorer, cfg.threshold)?,
            bleu4: mean(&bleu),
            semantic_score_mean: mean(&semantic),
        },
        config: cfg.clone(),
    })
}
