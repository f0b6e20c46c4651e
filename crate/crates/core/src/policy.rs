//! Selection policy: a two-layer ReLU MLP scores each (query, candidate)
//! pair, a softmax over the pool turns scores into probabilities, and
//! Plackett-Luce sampling draws an ordered set of demonstrations.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"PGDS";

/// Default hidden width of the scoring MLP.
pub const DEFAULT_HIDDEN: usize = 256;

/// MLP parameters, stored flat as `W1 (H x 2dim) | b1 (H) | W2 (H) | b2`.
///
/// Gradients use the same type so they can be added to parameters directly.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    dim: usize,
    hidden: usize,
    values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        PolicyParams {
            dim,
            hidden,
            values: vec![0.0; hidden * 2 * dim + 2 * hidden + 1],
        }
    }

    pub fn from_parts(
        dim: usize,
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    ) -> Result<Self> {
        for (got, want) in [
            (w1.len(), hidden * 2 * dim),
            (b1.len(), hidden),
            (w2.len(), hidden),
        ] {
            if got != want {
                return Err(Error::DimensionMismatch {
                    expected: want,
                    actual: got,
                });
            }
        }
        let mut values = w1;
        values.extend(b1);
        values.extend(w2);
        values.push(b2);
        Ok(PolicyParams {
            dim,
            hidden,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        2 * self.dim
    }

    fn w1_len(&self) -> usize {
        self.hidden * 2 * self.dim
    }

    pub fn w1(&self) -> &[f64] {
        &self.values[..self.w1_len()]
    }

    pub fn b1(&self) -> &[f64] {
        let s = self.w1_len();
        &self.values[s..s + self.hidden]
    }

    pub fn w2(&self) -> &[f64] {
        let s = self.w1_len() + self.hidden;
        &self.values[s..s + self.hidden]
    }

    pub fn b2(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// All parameters as one flat slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Human-readable location of flat index `i`.
    pub fn describe_index(&self, i: usize) -> String {
        let w1 = self.w1_len();
        let in_dim = self.input_dim();
        if i < w1 {
            format!("W1[{}][{}]", i / in_dim, i % in_dim)
        } else if i < w1 + self.hidden {
            format!("b1[{}]", i - w1)
        } else if i < w1 + 2 * self.hidden {
            format!("W2[{}]", i - w1 - self.hidden)
        } else {
            "b2".to_string()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        assert_eq!(
            self.values.len(),
            other.values.len(),
            "parameter shape mismatch"
        );
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases, reproducible per seed.
pub fn init_params(dim: usize, hidden: usize, seed: u64) -> Result<PolicyParams> {
    if dim == 0 || hidden == 0 {
        return Err(Error::Config(format!(
            "policy dims must be positive (dim {dim}, hidden {hidden})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |limit: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| (2.0 * rng.random::<f64>() - 1.0) * limit)
            .collect()
    };
    let w1_limit = (6.0 / (2 * dim + hidden) as f64).sqrt();
    let w2_limit = (6.0 / (hidden + 1) as f64).sqrt();
    let w1 = uniform(w1_limit, hidden * 2 * dim);
    let w2 = uniform(w2_limit, hidden);
    PolicyParams::from_parts(dim, hidden, w1, vec![0.0; hidden], w2, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDistribution {
    pub candidate_ids: Vec<String>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl SelectionDistribution {
    pub fn from_logits(candidate_ids: Vec<String>, logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        SelectionDistribution {
            candidate_ids,
            logits,
            probs,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.candidate_ids
            .iter()
            .position(|c| c == id)
            .ok_or_else(|| Error::UnknownCandidate(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSet {
    pub ids: Vec<String>,
    /// Positions of `ids` within the candidate pool.
    pub indices: Vec<usize>,
    pub log_prob: f64,
}

/// Softmax with max-logit subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cached forward pass over one candidate pool.
#[derive(Debug, Clone)]
pub struct PolicyForward {
    inputs: Vec<Vec<f64>>,
    query: Vec<f64>,
    pre_activations: Vec<Vec<f64>>,
    pub dist: SelectionDistribution,
}

/// Evaluates the MLP on every `[h_q; h_i]` and normalizes over the pool.
pub fn forward(
    params: &PolicyParams,
    query: &EmbeddingVector,
    pool: &[(String, EmbeddingVector)],
) -> Result<PolicyForward> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    params.check_dim(query.values())?;
    let dim = params.dim;
    let in_dim = params.input_dim();
    let w1 = params.w1();
    let b1 = params.b1();
    let w2 = params.w2();

    // W1 [h_q; h_i] = W1_q h_q + W1_i h_i; the query half is shared.
    let q = query.values();
    let query_part: Vec<f64> = (0..params.hidden)
        .map(|j| {
            let row = &w1[j * in_dim..j * in_dim + dim];
            b1[j] + row.iter().zip(q).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect();

    let mut inputs = Vec::with_capacity(pool.len());
    let mut pre_activations = Vec::with_capacity(pool.len());
    let mut logits = Vec::with_capacity(pool.len());
    for (_, cand) in pool {
        params.check_dim(cand.values())?;
        let c = cand.values();
        let z: Vec<f64> = (0..params.hidden)
            .map(|j| {
                let row = &w1[j * in_dim + dim..(j + 1) * in_dim];
                query_part[j] + row.iter().zip(c).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let logit = params.b2()
            + z.iter()
                .zip(w2)
                .map(|(z, w)| if *z > 0.0 { w * z } else { 0.0 })
                .sum::<f64>();
        logits.push(logit);
        pre_activations.push(z);
        inputs.push(c.to_vec());
    }
    let ids = pool.iter().map(|(id, _)| id.clone()).collect();
    Ok(PolicyForward {
        inputs,
        query: q.to_vec(),
        pre_activations,
        dist: SelectionDistribution::from_logits(ids, logits),
    })
}

pub fn score_candidates(
    params: &PolicyParams,
    query: &EmbeddingVector,
    pool: &[(String, EmbeddingVector)],
) -> Result<SelectionDistribution> {
    forward(params, query, pool).map(|f| f.dist)
}

/// Plackett-Luce log-likelihood of an ordered selection, from probabilities:
/// sum over draws of log(p_s / sum of p over the not-yet-drawn items).
fn pl_log_prob(probs: &[f64], indices: &[usize]) -> f64 {
    let mut taken = vec![false; probs.len()];
    let mut log_prob = 0.0;
    for &s in indices {
        let remaining: f64 = probs
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(p, _)| p)
            .sum();
        log_prob += (probs[s] / remaining).ln();
        taken[s] = true;
    }
    log_prob
}

fn check_k(k: usize, pool: usize) -> Result<()> {
    if k == 0 || k > pool {
        return Err(Error::KOutOfRange { k, pool });
    }
    Ok(())
}

/// Sequential sampling without replacement, renormalizing after each draw.
pub fn sample_top_k<R: Rng + ?Sized>(
    dist: &SelectionDistribution,
    k: usize,
    rng: &mut R,
) -> Result<SelectedSet> {
    check_k(k, dist.len())?;
    let mut taken = vec![false; dist.len()];
    let mut indices = Vec::with_capacity(k);
    for _ in 0..k {
        let remaining: f64 = dist
            .probs
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(p, _)| p)
            .sum();
        let target = rng.random::<f64>() * remaining;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, p) in dist.probs.iter().enumerate() {
            if taken[i] {
                continue;
            }
            acc += p;
            pick = Some(i);
            if target < acc {
                break;
            }
        }
        // Rounding can leave `target` at the very top of the range; the
        // last untaken item is the right answer then.
        let pick = pick.expect("k <= pool size leaves an untaken item");
        taken[pick] = true;
        indices.push(pick);
    }
    Ok(selected(dist, indices))
}

/// Deterministic alternative for inference: the `k` most probable
/// candidates in descending order, ties by pool position.
pub fn greedy_top_k(dist: &SelectionDistribution, k: usize) -> Result<SelectedSet> {
    check_k(k, dist.len())?;
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.probs[b].total_cmp(&dist.probs[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(selected(dist, order))
}

fn selected(dist: &SelectionDistribution, indices: Vec<usize>) -> SelectedSet {
    SelectedSet {
        ids: indices
            .iter()
            .map(|&i| dist.candidate_ids[i].clone())
            .collect(),
        log_prob: pl_log_prob(&dist.probs, &indices),
        indices,
    }
}

fn resolve(dist: &SelectionDistribution, ids: &[String]) -> Result<Vec<usize>> {
    let mut indices = Vec::with_capacity(ids.len());
    for id in ids {
        let i = dist.index_of(id)?;
        if indices.contains(&i) {
            return Err(Error::Config(format!("selection repeats id {id:?}")));
        }
        indices.push(i);
    }
    check_k(indices.len(), dist.len())?;
    Ok(indices)
}

pub fn selection_log_prob(dist: &SelectionDistribution, ids: &[String]) -> Result<f64> {
    let indices = resolve(dist, ids)?;
    Ok(pl_log_prob(&dist.probs, &indices))
}

/// d log pi / d logit_i for an ordered Plackett-Luce selection.
fn logit_gradient(logits: &[f64], indices: &[usize]) -> Vec<f64> {
    let mut grad = vec![0.0; logits.len()];
    let mut taken = vec![false; logits.len()];
    for &s in indices {
        let max = logits
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(l, _)| (l - max).exp())
            .sum();
        for (i, l) in logits.iter().enumerate() {
            if !taken[i] {
                grad[i] -= (l - max).exp() / total;
            }
        }
        grad[s] += 1.0;
        taken[s] = true;
    }
    grad
}

/// Gradient of the selection log-probability with respect to all
/// parameters, reusing a cached forward pass.
pub fn log_prob_grad_from(
    params: &PolicyParams,
    fwd: &PolicyForward,
    indices: &[usize],
) -> PolicyParams {
    let dim = params.dim;
    let in_dim = params.input_dim();
    let hidden = params.hidden;
    let w2 = params.w2();
    let dlogits = logit_gradient(&fwd.dist.logits, indices);

    let mut grad = PolicyParams::zeros(dim, hidden);
    let w1_len = grad.w1_len();
    let (gw1, rest) = grad.values.split_at_mut(w1_len);
    let (gb1, rest) = rest.split_at_mut(hidden);
    let (gw2, gb2) = rest.split_at_mut(hidden);

    // dz accumulated over candidates for the shared query half of W1.
    let mut dz_total = vec![0.0; hidden];
    for (c, &g) in dlogits.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        gb2[0] += g;
        let z = &fwd.pre_activations[c];
        let x = &fwd.inputs[c];
        for j in 0..hidden {
            if z[j] <= 0.0 {
                continue;
            }
            gw2[j] += g * z[j];
            let dz = g * w2[j];
            dz_total[j] += dz;
            let row = &mut gw1[j * in_dim + dim..(j + 1) * in_dim];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += dz * xi;
            }
        }
    }
    for j in 0..hidden {
        let dz = dz_total[j];
        if dz == 0.0 {
            continue;
        }
        gb1[j] += dz;
        let row = &mut gw1[j * in_dim..j * in_dim + dim];
        for (w, q) in row.iter_mut().zip(&fwd.query) {
            *w += dz * q;
        }
    }
    grad
}

pub fn policy_log_prob_grad(
    params: &PolicyParams,
    query: &EmbeddingVector,
    pool: &[(String, EmbeddingVector)],
    ids: &[String],
) -> Result<PolicyParams> {
    let fwd = forward(params, query, pool)?;
    let indices = resolve(&fwd.dist, ids)?;
    Ok(log_prob_grad_from(params, &fwd, &indices))
}

pub fn checkpoint_save(params: &PolicyParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_u32 = |n: usize| {
        u32::try_from(n).map_err(|_| Error::InvalidCheckpoint(format!("{n} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(12 + params.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&to_u32(params.dim)?.to_le_bytes());
    buf.extend_from_slice(&to_u32(params.hidden)?.to_le_bytes());
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<PolicyParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::InvalidCheckpoint("bad magic or header".into()));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let hidden = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = PolicyParams::zeros(dim, hidden).len();
    let body = &bytes[12..];
    if body.len() != expected * 8 {
        return Err(Error::InvalidCheckpoint(format!(
            "expected {} parameter bytes, found {}",
            expected * 8,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = PolicyParams {
        dim,
        hidden,
        values,
    };
    if !params.is_finite() {
        return Err(Error::InvalidCheckpoint("non-finite parameter".into()));
    }
    Ok(params)
}
