//! Ranking metrics, pool construction, the embedding store and top-k search
//! checked against direct recomputation.

use std::collections::HashSet;

use faser_core::corpus::CorpusIndex;
use faser_core::encoder::{Encoder, EncoderConfig};
use faser_core::evaluate::{build_pools, evaluate_pools, rank_pool, summarize_ranks, SearchPool};
use faser_core::fixtures::{generate, SynthConfig};
use faser_core::index::{build_index, top_k, EmbeddingStore};
use faser_core::ingest::to_function_string;
use faser_core::normalize::{NormalizationMode, NormalizedFunction, Normalizer};
use faser_core::tokenize::{build_vocab, GlobalPolicy};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Vectors on a 1/8 grid: every dot product is exact in f32 and ties are common.
fn grid_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2i32..=2) as f32 / 8.0).collect())
        .collect()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn random_pool(rng: &mut ChaCha8Rng, id: usize, n: usize) -> SearchPool {
    let size = rng.random_range(2..n);
    let mut others: Vec<usize> = (1..n).collect();
    others.shuffle(rng);
    let candidates = others[..size - 1].to_vec();
    SearchPool {
        id,
        query: 0,
        positive: candidates[rng.random_range(0..candidates.len())],
        candidates,
    }
}

#[test]
fn metrics_match_similarity_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut pools = Vec::new();
    let mut embeddings = Vec::new();
    let mut expected_ranks = Vec::new();
    for id in 0..1000 {
        let n = rng.random_range(3..24);
        let e = grid_vectors(&mut rng, n, 4);
        let pool = random_pool(&mut rng, id, n);
        let sim: Vec<Vec<f64>> = e.iter().map(|a| e.iter().map(|b| dot(a, b)).collect()).collect();
        let sp = sim[0][pool.positive];
        let at = pool.candidates.iter().position(|&c| c == pool.positive).unwrap();
        let above = pool.candidates.iter().filter(|&&c| sim[0][c] > sp).count();
        let tied_before = pool.candidates[..at].iter().filter(|&&c| sim[0][c] == sp).count();
        let rank = 1 + above + tied_before;
        expected_ranks.push(rank);

        let result = rank_pool(&pool, &e);
        assert_eq!(result.rank_of_positive, rank, "pool {id}");
        assert_eq!(result.ranked.len(), pool.candidates.len());
        for w in result.ranked.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        pools.push(pool);
        embeddings.push(e);
    }

    let n = expected_ranks.len() as f64;
    let recall = expected_ranks.iter().filter(|&&r| r == 1).count() as f64 / n;
    let mrr = expected_ranks.iter().map(|&r| if r > 10 { 0.0 } else { 1.0 / r as f64 }).sum::<f64>() / n;
    let mean = expected_ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
    let mut sorted: Vec<f64> = expected_ranks.iter().map(|&r| r as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[499] + sorted[500]) / 2.0;

    let s = summarize_ranks(&expected_ranks).unwrap();
    assert!((s.recall_at_1 - recall).abs() < 1e-12);
    assert!((s.mrr_at_10 - mrr).abs() < 1e-12);
    assert!((s.mean_rank - mean).abs() < 1e-12);
    assert_eq!(s.median_rank, median);

    // same numbers through the pool-level entry point, one pool at a time
    for (pool, e) in pools.iter().zip(&embeddings) {
        let (_, one) = evaluate_pools(std::slice::from_ref(pool), e).unwrap();
        assert_eq!(one.ranks, vec![expected_ranks[pool.id]]);
    }
}

#[test]
fn worked_ranks() {
    let s = summarize_ranks(&[1, 1, 2, 11]).unwrap();
    assert_eq!(s.recall_at_1, 0.5);
    assert_eq!(s.mrr_at_10, 0.625);
    assert_eq!(s.mean_rank, 3.75);
    assert_eq!(s.median_rank, 1.5);
    assert!(summarize_ranks(&[]).is_err());
}

proptest! {
    #[test]
    fn improving_a_rank_never_hurts(ranks in prop::collection::vec(1usize..30, 1..40), pick in any::<prop::sample::Index>()) {
        let before = summarize_ranks(&ranks).unwrap();
        prop_assert!(before.recall_at_1 <= before.mrr_at_10);
        prop_assert!(before.mrr_at_10 <= 1.0);
        let i = pick.index(ranks.len());
        let mut better = ranks.clone();
        better[i] = better[i].saturating_sub(1).max(1);
        let after = summarize_ranks(&better).unwrap();
        prop_assert!(after.recall_at_1 >= before.recall_at_1);
        prop_assert!(after.mrr_at_10 >= before.mrr_at_10);
        prop_assert!(after.mean_rank <= before.mean_rank);
        prop_assert!(after.median_rank <= before.median_rank);
    }

    #[test]
    fn top_k_matches_brute_force(seed in any::<u64>(), n in 1usize..64, k in 1usize..70, dupes in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let mut vectors: Vec<Vec<f32>> = (0..n)
            .map(|_| {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.iter().map(|x| x / norm).collect()
            })
            .collect();
        for _ in 0..dupes {
            let j = rng.random_range(0..vectors.len());
            vectors.push(vectors[j].clone());
        }
        let mut store = EmbeddingStore::new(dim, 9);
        for (i, v) in vectors.iter().enumerate() {
            store.push(1000 + i as u64, format!("l{i}"), 0, v).unwrap();
        }
        let query = vectors[rng.random_range(0..vectors.len())].clone();
        let got = top_k(&store, &query, k).unwrap();
        prop_assert_eq!(got.len(), k.min(vectors.len()));

        let exact: Vec<f64> = vectors.iter().map(|v| dot(v, &query)).collect();
        let mut ids = HashSet::new();
        for w in got.windows(2) {
            prop_assert!(w[0].1 >= w[1].1);
            if w[0].1 == w[1].1 {
                prop_assert!(w[0].0 < w[1].0);
            }
        }
        for &(id, s) in &got {
            prop_assert!(ids.insert(id));
            prop_assert!((s as f64 - exact[(id - 1000) as usize]).abs() < 1e-5);
        }
        let worst = got.last().unwrap().1 as f64;
        for (row, &e) in exact.iter().enumerate() {
            if !ids.contains(&(1000 + row as u64)) {
                prop_assert!(e <= worst + 1e-5, "row {} scored {} above {}", row, e, worst);
            }
        }
    }
}

#[test]
fn pools_are_well_formed() {
    let labels: Vec<String> = (0..60).map(|i| format!("l{}", i / 3)).collect();
    let index = CorpusIndex::new(&labels);
    let pools = build_pools(&index, 300, 10, 4).unwrap();
    assert_eq!(pools, build_pools(&index, 300, 10, 4).unwrap());
    assert_ne!(pools, build_pools(&index, 300, 10, 5).unwrap());
    for (id, p) in pools.iter().enumerate() {
        assert_eq!(p.id, id);
        assert_eq!(p.candidates.len(), 11);
        assert_ne!(p.query, p.positive);
        assert_eq!(index.label_of(p.query), index.label_of(p.positive));
        assert!(p.candidates.contains(&p.positive));
        assert!(!p.candidates.contains(&p.query));
        let neg_labels: HashSet<usize> = p.negatives().map(|c| index.label_of(c)).collect();
        assert_eq!(neg_labels.len(), 10);
        assert!(!neg_labels.contains(&index.label_of(p.query)));
    }
    assert!(build_pools(&index, 10, 20, 0).is_err());
}

fn small_corpus() -> Vec<NormalizedFunction> {
    let cfg = SynthConfig {
        num_labels: 6,
        variants_per_label: 2,
        seed: 3,
        ..SynthConfig::default()
    };
    let nrm = Normalizer::new(NormalizationMode::NRM);
    generate(&cfg)
        .unwrap()
        .iter()
        .map(|f| nrm.normalize_function(&to_function_string(f)).unwrap())
        .collect()
}

#[test]
fn built_store_round_trips_and_is_deterministic() {
    let corpus = small_corpus();
    let vocab = build_vocab(&corpus, 1).unwrap();
    let mut cfg = EncoderConfig::desk(vocab.len());
    cfg.input_len = 64;
    let enc = Encoder::new(cfg, 8).unwrap();
    let a = build_index(&corpus, &enc, &vocab, GlobalPolicy::ClsOnly, 5).unwrap();
    let b = build_index(&corpus, &enc, &vocab, GlobalPolicy::ClsOnly, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), corpus.len());

    let mut bytes = Vec::new();
    a.write(&mut bytes).unwrap();
    let back = EmbeddingStore::read(bytes.as_slice()).unwrap();
    assert_eq!(back, a);
    let mut again = Vec::new();
    back.write(&mut again).unwrap();
    assert_eq!(again, bytes);

    for row in 0..a.len() {
        let hit = top_k(&a, a.vector(row), 1).unwrap();
        assert!((hit[0].1 - 1.0).abs() < 1e-5);
    }

    let empty = build_index(&[], &enc, &vocab, GlobalPolicy::ClsOnly, 4).unwrap();
    assert!(empty.is_empty());
    let mut bytes = Vec::new();
    empty.write(&mut bytes).unwrap();
    assert_eq!(EmbeddingStore::read(bytes.as_slice()).unwrap(), empty);
    assert!(top_k(&empty, &vec![0.0; empty.dim()], 3).unwrap().is_empty());

    let wrong = build_vocab(&corpus[..2], 1).unwrap();
    assert!(build_index(&corpus, &enc, &wrong, GlobalPolicy::ClsOnly, 4).is_err());
}
