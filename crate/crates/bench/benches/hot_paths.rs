use std::collections::HashSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pgds_core::curation::{compute_phash, PixelGrid};
use pgds_core::embed::retrieve_candidates;
use pgds_core::metrics::{bleu4, Tokenization};
use pgds_core::policy::{forward, init_params, policy_log_prob_grad};
use pgds_core::{EmbeddingStore, EmbeddingVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn retrieval(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 1024;
    let rows = random_rows(&mut rng, 5000, dim);
    let ids = (0..rows.len()).map(|i| format!("s{i:05}")).collect();
    let store = EmbeddingStore::from_rows(ids, rows).unwrap();
    let query = EmbeddingVector::new(random_rows(&mut rng, 1, dim).remove(0));
    let exclude = HashSet::new();
    c.bench_function("retrieve top-50 of 5000x1024", |b| {
        b.iter(|| retrieve_candidates(black_box(&query), &store, 50, &exclude).unwrap())
    });
}

fn policy(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = 72;
    let params = init_params(dim, 256, 7).unwrap();
    let query = EmbeddingVector::new(random_rows(&mut rng, 1, dim).remove(0));
    let pool: Vec<(String, EmbeddingVector)> = random_rows(&mut rng, 50, dim)
        .into_iter()
        .enumerate()
        .map(|(i, r)| (format!("c{i}"), EmbeddingVector::new(r)))
        .collect();
    let picked = vec!["c3".to_string()];
    c.bench_function("policy forward, pool 50", |b| {
        b.iter(|| forward(black_box(&params), &query, &pool).unwrap())
    });
    c.bench_function("policy log-prob gradient, pool 50", |b| {
        b.iter(|| policy_log_prob_grad(black_box(&params), &query, &pool, &picked).unwrap())
    });
}

fn phash(c: &mut Criterion) {
    let grid = PixelGrid::from_fn(640, 480, |x, y| ((x * 3 + y * 7) % 256) as f64).unwrap();
    c.bench_function("phash 640x480", |b| {
        b.iter(|| compute_phash(black_box(&grid)))
    });
}

fn bleu(c: &mut Criterion) {
    let hyp = "这幅图用反差讽刺了形式主义的检查工作，表面认真实则敷衍";
    let reference = "图文反差讽刺了检查工作中的形式主义，看似认真其实敷衍了事";
    c.bench_function("bleu-4 char", |b| {
        b.iter(|| bleu4(black_box(hyp), &[reference], Tokenization::Char))
    });
}

criterion_group!(benches, retrieval, policy, phash, bleu);
criterion_main!(benches);
