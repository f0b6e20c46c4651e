//! Joint text+image embeddings and exact cosine retrieval.

mod provider;
mod store;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use provider::{EmbeddingProvider, HashingProvider};
pub use store::{store_load, store_save, EmbeddingStore};

use crate::data::Sample;
use crate::error::{Error, Result};

/// Default candidate pool size for retrieval.
pub const DEFAULT_POOL_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(v: Vec<f64>) -> Self {
        EmbeddingVector(v)
    }
}

/// How modality vectors are combined into one joint vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMode {
    /// L2-normalize each modality before concatenating.
    #[default]
    Normalized,
    /// Concatenate raw encoder outputs.
    Raw,
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Concatenates a text vector and an optional image vector.
pub fn joint_from_parts(
    text: Vec<f64>,
    image: Option<Vec<f64>>,
    image_dim: usize,
    mode: JointMode,
) -> EmbeddingVector {
    let image = image.unwrap_or_else(|| vec![0.0; image_dim]);
    let (text, image) = match mode {
        JointMode::Normalized => (normalize(text), normalize(image)),
        JointMode::Raw => (text, image),
    };
    let mut out = text;
    out.extend(image);
    EmbeddingVector(out)
}

pub fn joint_embed<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    sample: &Sample,
    mode: JointMode,
) -> Result<EmbeddingVector> {
    let wrap = |message: String| Error::Provider {
        id: sample.id.clone(),
        message,
    };
    let text = provider.embed_text(&sample.text).map_err(wrap)?;
    if text.len() != provider.text_dim() {
        return Err(wrap(format!(
            "text vector has dim {}, provider declares {}",
            text.len(),
            provider.text_dim()
        )));
    }
    let image = match &sample.image_path {
        Some(path) => {
            let v = provider.embed_image(path).map_err(wrap)?;
            if v.len() != provider.image_dim() {
                return Err(wrap(format!(
                    "image vector has dim {}, provider declares {}",
                    v.len(),
                    provider.image_dim()
                )));
            }
            Some(v)
        }
        None => None,
    };
    Ok(joint_from_parts(text, image, provider.image_dim(), mode))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(cosine_slices(a.values(), b.values()))
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub row: usize,
    pub similarity: f64,
}

/// Exact top-`m` by cosine similarity, ties broken by ascending id.
pub fn retrieve_candidates(
    query: &EmbeddingVector,
    store: &EmbeddingStore,
    m: usize,
    exclude: &HashSet<&str>,
) -> Result<Vec<Candidate>> {
    if query.dim() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            actual: query.dim(),
        });
    }
    let q = query.values();
    let qn = l2_norm(q);
    let mut scored: Vec<Candidate> = (0..store.len())
        .filter(|&row| !exclude.contains(store.id(row)))
        .map(|row| {
            let r = store.row(row);
            let rn = store.row_norm(row);
            let similarity = if qn == 0.0 || rn == 0.0 {
                0.0
            } else {
                q.iter().zip(r).map(|(x, &y)| x * f64::from(y)).sum::<f64>() / (qn * rn)
            };
            Candidate {
                id: store.id(row).to_string(),
                row,
                similarity,
            }
        })
        .collect();
    if scored.is_empty() {
        return Err(Error::EmptyPool);
    }
    let by_rank = |a: &Candidate, b: &Candidate| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.id.cmp(&b.id))
    };
    if m < scored.len() {
        scored.select_nth_unstable_by(m, by_rank);
        scored.truncate(m);
    }
    scored.sort_by(by_rank);
    Ok(scored)
}
