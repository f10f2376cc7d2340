//! Search-pool retrieval metrics and vulnerability-style ranking.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusIndex;
use crate::normalize::canonical_architecture;
use crate::train::similarity;
use crate::{Error, Result};

/// One query, its positive and `N` negatives, as corpus positions.
/// `candidates` holds the positive and negatives in a shuffled order that
/// decides ties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchPool {
    pub id: usize,
    pub query: usize,
    pub positive: usize,
    pub candidates: Vec<usize>,
}

impl SearchPool {
    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.candidates.iter().copied().filter(move |&c| c != self.positive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub pool: usize,
    /// `(corpus position, cosine)` in descending similarity.
    pub ranked: Vec<(usize, f32)>,
    pub rank_of_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub recall_at_1: f64,
    pub mrr_at_10: f64,
    pub ranks: Vec<usize>,
    pub mean_rank: f64,
    pub median_rank: f64,
}

/// Builds `num_pools` pools of one positive and `negatives` negatives.
pub fn build_pools(index: &CorpusIndex, num_pools: usize, negatives: usize, seed: u64) -> Result<Vec<SearchPool>> {
    build_pools_where(index, num_pools, negatives, seed, |_| true)
}

/// As [`build_pools`], drawing queries only from positions accepted by
/// `allow_query`. Positives and negatives stay unconstrained.
pub fn build_pools_where<F: Fn(usize) -> bool>(
    index: &CorpusIndex,
    num_pools: usize,
    negatives: usize,
    seed: u64,
    allow_query: F,
) -> Result<Vec<SearchPool>> {
    let labels = index.num_labels();
    if labels < negatives + 1 {
        return Err(Error::CorpusTooSmall {
            required: negatives + 1,
            available: labels,
        });
    }
    // (label, queries) for every label that can supply a query and a positive
    let eligible: Vec<(usize, Vec<usize>)> = (0..labels)
        .filter(|&l| index.members(l).len() >= 2)
        .map(|l| (l, index.members(l).iter().copied().filter(|&p| allow_query(p)).collect::<Vec<_>>()))
        .filter(|(_, q)| !q.is_empty())
        .collect();
    if eligible.is_empty() {
        return Err(Error::Empty("no label offers a query with a positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools = Vec::with_capacity(num_pools);
    for id in 0..num_pools {
        let (label, queries) = eligible.choose(&mut rng).expect("non-empty");
        let query = *queries.choose(&mut rng).expect("non-empty");
        let others: Vec<usize> = index.members(*label).iter().copied().filter(|&p| p != query).collect();
        let positive = *others.choose(&mut rng).expect("label has two members");
        let mut candidates = Vec::with_capacity(negatives + 1);
        candidates.push(positive);
        for i in index::sample(&mut rng, labels - 1, negatives) {
            let neg_label = if i >= *label { i + 1 } else { i };
            let members = index.members(neg_label);
            candidates.push(members[rng.random_range(0..members.len())]);
        }
        candidates.shuffle(&mut rng);
        pools.push(SearchPool {
            id,
            query,
            positive,
            candidates,
        });
    }
    Ok(pools)
}

fn rank_candidates<E: AsRef<[f32]>>(query: &[f32], candidates: &[usize], embeddings: &[E]) -> Vec<(usize, f32)> {
    let mut ranked: Vec<(usize, f32)> = candidates
        .iter()
        .map(|&c| (c, similarity(query, embeddings[c].as_ref())))
        .collect();
    // stable: equal scores keep candidate order
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

/// Ranks a pool by cosine to the query over precomputed unit embeddings
/// indexed by corpus position.
pub fn rank_pool<E: AsRef<[f32]>>(pool: &SearchPool, embeddings: &[E]) -> RankResult {
    let ranked = rank_candidates(embeddings[pool.query].as_ref(), &pool.candidates, embeddings);
    let rank_of_positive = ranked.iter().position(|&(c, _)| c == pool.positive).expect("positive in pool") + 1;
    RankResult {
        pool: pool.id,
        ranked,
        rank_of_positive,
    }
}

/// Metrics from 1-based ranks.
pub fn summarize_ranks(ranks: &[usize]) -> Result<EvalSummary> {
    if ranks.is_empty() {
        return Err(Error::Empty("no ranks to summarize"));
    }
    let n = ranks.len() as f64;
    let hits = ranks.iter().filter(|&&r| r == 1).count() as f64;
    let mrr = ranks.iter().map(|&r| if r <= 10 { 1.0 / r as f64 } else { 0.0 }).sum::<f64>();
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    } else {
        sorted[mid] as f64
    };
    Ok(EvalSummary {
        recall_at_1: hits / n,
        mrr_at_10: mrr / n,
        ranks: ranks.to_vec(),
        mean_rank: ranks.iter().sum::<usize>() as f64 / n,
        median_rank: median,
    })
}

pub fn summarize(results: &[RankResult]) -> Result<EvalSummary> {
    let ranks: Vec<usize> = results.iter().map(|r| r.rank_of_positive).collect();
    summarize_ranks(&ranks)
}

/// Ranks every pool and summarizes.
pub fn evaluate_pools<E: AsRef<[f32]> + Sync>(pools: &[SearchPool], embeddings: &[E]) -> Result<(Vec<RankResult>, EvalSummary)> {
    let results: Vec<RankResult> = pools.iter().map(|p| rank_pool(p, embeddings)).collect();
    let summary = summarize(&results)?;
    Ok((results, summary))
}

/// A labelled query for [`vuln_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnQuery {
    pub name: String,
    pub label: String,
    pub architecture: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnResult {
    pub query: String,
    pub architecture: String,
    /// Best rank of a same-label target; `None` when the label is absent.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnReport {
    pub results: Vec<VulnResult>,
    /// Over present queries only; `None` when every query is absent.
    pub summary: Option<EvalSummary>,
    pub absent: Vec<String>,
}

impl VulnReport {
    /// One row per query architecture: ranks in query order joined by `:`,
    /// absent queries shown as `-`, then mean and median of present ranks.
    pub fn table(&self) -> String {
        let mut groups: BTreeMap<&str, Vec<Option<usize>>> = BTreeMap::new();
        for r in &self.results {
            groups.entry(&r.architecture).or_default().push(r.rank);
        }
        let mut out = String::new();
        for (arch, ranks) in groups {
            let row: Vec<String> = ranks.iter().map(|r| r.map_or("-".into(), |r| r.to_string())).collect();
            let present: Vec<usize> = ranks.iter().flatten().copied().collect();
            let stats = summarize_ranks(&present)
                .map(|s| format!("mean {:.2} median {:.1}", s.mean_rank, s.median_rank))
                .unwrap_or_else(|_| "absent".into());
            out.push_str(&format!("{arch}\t{}\t{stats}\n", row.join(":")));
        }
        if let Some(s) = &self.summary {
            out.push_str(&format!("all\tmean {:.2} median {:.1}\n", s.mean_rank, s.median_rank));
        }
        out
    }
}

/// Ranks the whole target corpus against each query. The rank of a query
/// is the best rank of any target sharing its label.
pub fn vuln_search<E: AsRef<[f32]>>(queries: &[VulnQuery], target_labels: &[String], target_embeddings: &[E]) -> Result<VulnReport> {
    if target_labels.is_empty() {
        return Err(Error::Empty("empty target corpus"));
    }
    if target_labels.len() != target_embeddings.len() {
        return Err(Error::Batch(format!(
            "{} target labels for {} embeddings",
            target_labels.len(),
            target_embeddings.len()
        )));
    }
    let all: Vec<usize> = (0..target_labels.len()).collect();
    let mut results = Vec::with_capacity(queries.len());
    let mut absent = Vec::new();
    for q in queries {
        let ranked = rank_candidates(&q.embedding, &all, target_embeddings);
        let rank = ranked.iter().position(|&(c, _)| target_labels[c] == q.label).map(|p| p + 1);
        if rank.is_none() {
            absent.push(q.name.clone());
        }
        results.push(VulnResult {
            query: q.name.clone(),
            architecture: q.architecture.clone(),
            rank,
        });
    }
    let present: Vec<usize> = results.iter().filter_map(|r| r.rank).collect();
    Ok(VulnReport {
        summary: summarize_ranks(&present).ok(),
        results,
        absent,
    })
}

/// Checks that `holdout` never occurs among the training architectures and
/// occurs at least once in the evaluation corpus.
pub fn check_holdout<'a, 'b, T, E>(train_architectures: T, eval_architectures: E, holdout: &str) -> Result<()>
where
    T: IntoIterator<Item = &'a str>,
    E: IntoIterator<Item = &'b str>,
{
    let key = canonical_architecture(holdout);
    let trained: BTreeSet<String> = train_architectures.into_iter().map(canonical_architecture).collect();
    if trained.contains(&key) {
        return Err(Error::Contamination(holdout.to_string()));
    }
    if !eval_architectures.into_iter().any(|a| canonical_architecture(a) == key) {
        return Err(Error::EmptyHoldout(holdout.to_string()));
    }
    Ok(())
}

/// Zero-shot pools: queries drawn only from the held-out architecture,
/// after the contamination guard.
pub fn zero_shot_pools<'a, T>(
    train_architectures: T,
    eval_architectures: &[String],
    holdout: &str,
    index: &CorpusIndex,
    num_pools: usize,
    negatives: usize,
    seed: u64,
) -> Result<Vec<SearchPool>>
where
    T: IntoIterator<Item = &'a str>,
{
    check_holdout(train_architectures, eval_architectures.iter().map(String::as_str), holdout)?;
    let key = canonical_architecture(holdout);
    build_pools_where(index, num_pools, negatives, seed, |p| canonical_architecture(&eval_architectures[p]) == key)
}

/// Zero-shot evaluation over precomputed embeddings of the evaluation corpus.
#[allow(clippy::too_many_arguments)]
pub fn zero_shot_eval<'a, T, E>(
    train_architectures: T,
    eval_architectures: &[String],
    holdout: &str,
    index: &CorpusIndex,
    embeddings: &[E],
    num_pools: usize,
    negatives: usize,
    seed: u64,
) -> Result<EvalSummary>
where
    T: IntoIterator<Item = &'a str>,
    E: AsRef<[f32]> + Sync,
{
    let pools = zero_shot_pools(train_architectures, eval_architectures, holdout, index, num_pools, negatives, seed)?;
    Ok(evaluate_pools(&pools, embeddings)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs_index(labels: usize) -> CorpusIndex {
        CorpusIndex::new((0..labels * 2).map(|i| format!("l{}", i / 2)))
    }

    #[test]
    fn pools_respect_invariants() {
        let idx = pairs_index(102);
        let pools = build_pools(&idx, 50, 100, 1).unwrap();
        for p in &pools {
            assert_eq!(p.candidates.len(), 101);
            assert!(!p.candidates.contains(&p.query));
            assert_eq!(idx.label_of(p.positive), idx.label_of(p.query));
            let mut labels: Vec<usize> = p.negatives().map(|n| idx.label_of(n)).collect();
            assert_eq!(labels.len(), 100);
            assert!(!labels.contains(&idx.label_of(p.query)));
            labels.sort();
            labels.dedup();
            assert_eq!(labels.len(), 100);
        }
        assert_eq!(pools, build_pools(&idx, 50, 100, 1).unwrap());
    }

    #[test]
    fn smallest_pool_and_too_small_corpus() {
        let idx = pairs_index(2);
        let pools = build_pools(&idx, 3, 1, 0).unwrap();
        assert!(pools.iter().all(|p| p.candidates.len() == 2));
        match build_pools(&idx, 1, 2, 0) {
            Err(Error::CorpusTooSmall { required: 3, available: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }

    fn pool(candidates: Vec<usize>, positive: usize) -> SearchPool {
        SearchPool { id: 0, query: 0, positive, candidates }
    }

    #[test]
    fn constructed_rankings() {
        let e = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        assert_eq!(rank_pool(&pool(vec![2, 1, 3], 1), &e).rank_of_positive, 1);
        // positive at 0.5, three negatives above it
        let s = |c: f32| vec![c, (1.0 - c * c).sqrt()];
        let e = vec![vec![1.0, 0.0], s(0.5), s(0.9), s(0.8), s(0.7), s(0.1)];
        assert_eq!(rank_pool(&pool(vec![5, 1, 2, 3, 4], 1), &e).rank_of_positive, 4);
        let flat = vec![vec![1.0f32, 0.0]; 5];
        assert_eq!(rank_pool(&pool(vec![3, 4, 1, 2], 1), &flat).rank_of_positive, 3);
    }

    #[test]
    fn summary_examples() {
        let s = summarize_ranks(&[1, 1, 2, 11]).unwrap();
        assert_eq!((s.recall_at_1, s.mrr_at_10), (0.5, 0.625));
        let s = summarize_ranks(&[1, 1, 1]).unwrap();
        assert_eq!((s.recall_at_1, s.mrr_at_10), (1.0, 1.0));
        let s = summarize_ranks(&[3, 7]).unwrap();
        assert_eq!((s.mean_rank, s.median_rank), (5.0, 5.0));
        let s = summarize_ranks(&[1, 5, 1, 1]).unwrap();
        assert_eq!((s.mean_rank, s.median_rank), (2.0, 1.0));
        assert!(summarize_ranks(&[]).is_err());
    }

    fn query(name: &str, label: &str, arch: &str, e: Vec<f32>) -> VulnQuery {
        VulnQuery { name: name.into(), label: label.into(), architecture: arch.into(), embedding: e }
    }

    #[test]
    fn vulnerability_table() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let e = vec![vec![1.0f32, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let qs = vec![
            query("q1", "a", "arm", vec![1.0, 0.0]),
            query("q2", "b", "arm", vec![1.0, 0.0]),
            query("q3", "zzz", "mips", vec![1.0, 0.0]),
        ];
        let r = vuln_search(&qs, &labels, &e).unwrap();
        assert_eq!(r.results[0].rank, Some(1));
        assert_eq!(r.results[1].rank, Some(3));
        assert_eq!(r.absent, vec!["q3".to_string()]);
        assert_eq!(r.summary.as_ref().unwrap().ranks, vec![1, 3]);
        let table = r.table();
        assert!(table.contains("arm\t1:3\tmean 2.00 median 2.0"), "{table}");
        assert!(table.contains("mips\t-\tabsent"));
        assert!(vuln_search(&qs, &[], &Vec::<Vec<f32>>::new()).is_err());
    }

    #[test]
    fn holdout_guards() {
        let eval = ["arm64".to_string(), "x86-64".to_string()];
        match check_holdout(["x86_64", "mips32"], eval.iter().map(String::as_str), "amd64") {
            Err(Error::Contamination(_)) => {}
            other => panic!("{other:?}"),
        }
        match check_holdout(["x86_64"], eval.iter().map(String::as_str), "riscv64") {
            Err(Error::EmptyHoldout(_)) => {}
            other => panic!("{other:?}"),
        }
        assert!(check_holdout(["x86_64"], eval.iter().map(String::as_str), "aarch64").is_ok());
    }

    #[test]
    fn zero_shot_queries_come_from_holdout() {
        let idx = pairs_index(10);
        let archs: Vec<String> = (0..20).map(|i| if i % 2 == 0 { "arm64" } else { "x86" }.to_string()).collect();
        let pools = zero_shot_pools(["mips32"], &archs, "arm64", &idx, 20, 5, 3).unwrap();
        assert!(pools.iter().all(|p| archs[p.query] == "arm64"));
    }
}
