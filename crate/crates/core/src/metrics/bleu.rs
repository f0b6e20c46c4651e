//! Sentence-level BLEU-4.
//!
//! Clipped n-gram precisions for n = 1..=4, uniform geometric mean and a
//! brevity penalty against the closest reference length. A zero precision
//! is replaced by `1 / (2 * candidate_ngrams + 1)`.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    /// Every non-whitespace character is a token.
    #[default]
    Char,
    Whitespace,
}

impl FromStr for Tokenization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "char" => Ok(Tokenization::Char),
            "whitespace" | "word" => Ok(Tokenization::Whitespace),
            other => Err(Error::Config(format!("unknown tokenization {other:?}"))),
        }
    }
}

pub fn tokenize(text: &str, tok: Tokenization) -> Vec<String> {
    match tok {
        Tokenization::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
        Tokenization::Whitespace => text.split_whitespace().map(str::to_string).collect(),
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

pub fn bleu4(hypothesis: &str, references: &[&str], tok: Tokenization) -> f64 {
    let hyp = tokenize(hypothesis, tok);
    if hyp.is_empty() || references.is_empty() {
        return 0.0;
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r, tok)).collect();

    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(&hyp, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (gram, count) in ngram_counts(r, n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        let matched: usize = cand
            .iter()
            .map(|(gram, &count)| count.min(max_ref.get(gram).copied().unwrap_or(0)))
            .sum();
        let total = hyp.len().saturating_sub(n - 1);
        let precision = if matched > 0 {
            matched as f64 / total as f64
        } else {
            1.0 / (2.0 * total as f64 + 1.0)
        };
        log_sum += precision.ln() / 4.0;
    }

    let c = hyp.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("references is non-empty");
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    (bp * log_sum.exp()).clamp(0.0, 1.0)
}
