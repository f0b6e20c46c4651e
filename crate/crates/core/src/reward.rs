//! Multi-component episode reward: format compliance, label correctness,
//! and semantic quality of the target and explanation.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ParsedResponse, Sample};
use crate::error::{Error, Result};
use crate::metrics::SemanticScorer;
use crate::parse::{parse_structured_output, ParseMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub format: f64,
    pub cls: f64,
    pub target: f64,
    pub explanation: f64,
}

impl RewardWeights {
    pub fn new(format: f64, cls: f64, target: f64, explanation: f64) -> Result<Self> {
        let w = RewardWeights {
            format,
            cls,
            target,
            explanation,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn uniform() -> Self {
        RewardWeights {
            format: 0.25,
            cls: 0.25,
            target: 0.25,
            explanation: 0.25,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.format, self.cls, self.target, self.explanation]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "reward weights must be non-negative: {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("reward weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl FromStr for RewardWeights {
    type Err = Error;

    /// Parses `"w_format,w_cls,w_target,w_exp"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad weight {p:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            &[a, b, c, d] => RewardWeights::new(a, b, c, d),
            _ => Err(Error::Config(format!(
                "expected 4 comma-separated weights, got {}",
                parts.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub cls: f64,
    pub target: f64,
    pub explanation: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn zero() -> Self {
        RewardBreakdown::default()
    }

    pub fn from_components(
        format: f64,
        cls: f64,
        target: f64,
        explanation: f64,
        weights: &RewardWeights,
    ) -> Self {
        let total = weights.format * format
            + weights.cls * cls
            + weights.target * target
            + weights.explanation * explanation;
        RewardBreakdown {
            format,
            cls,
            target,
            explanation,
            total: total.clamp(0.0, 1.0),
        }
    }
}

/// Reward together with the parse result it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResponse {
    pub parsed: Option<ParsedResponse>,
    pub reward: RewardBreakdown,
}

/// Scores one backend answer against its gold sample.
///
/// A format failure zeroes every component. For a non-sarcastic gold
/// sample, a correct negative verdict earns full target and explanation
/// credit since nothing is expected there.
pub fn score_response<S: SemanticScorer + ?Sized>(
    raw: &str,
    gold: &Sample,
    weights: &RewardWeights,
    scorer: &S,
    mode: ParseMode,
) -> Result<ScoredResponse> {
    let gold_label = gold
        .label
        .ok_or_else(|| Error::Config(format!("gold sample {:?} has no label", gold.id)))?;
    let parsed = match parse_structured_output(raw, mode) {
        Ok(p) => p,
        Err(_) => {
            return Ok(ScoredResponse {
                parsed: None,
                reward: RewardBreakdown::zero(),
            })
        }
    };
    let cls = if parsed.label() == gold_label {
        1.0
    } else {
        0.0
    };
    let (target, explanation) = match (gold_label, parsed.is_sarcastic()) {
        (1, true) => {
            let gold_target = gold
                .target
                .as_deref()
                .ok_or(Error::IncompleteDemonstration {
                    id: gold.id.clone(),
                    field: "target",
                })?;
            let gold_exp = gold
                .explanation
                .as_deref()
                .ok_or(Error::IncompleteDemonstration {
                    id: gold.id.clone(),
                    field: "explanation",
                })?;
            (
                scorer.score(parsed.target(), gold_target)?.clamp(0.0, 1.0),
                scorer
                    .score(parsed.explanation(), gold_exp)?
                    .clamp(0.0, 1.0),
            )
        }
        (0, false) => (1.0, 1.0),
        _ => (0.0, 0.0),
    };
    Ok(ScoredResponse {
        reward: RewardBreakdown::from_components(1.0, cls, target, explanation, weights),
        parsed: Some(parsed),
    })
}

pub fn compute_reward<S: SemanticScorer + ?Sized>(
    raw: &str,
    gold: &Sample,
    weights: &RewardWeights,
    scorer: &S,
) -> Result<RewardBreakdown> {
    score_response(raw, gold, weights, scorer, ParseMode::Lenient).map(|s| s.reward)
}
