//! Random batches and a quadratic batch-hard miner.

use faser_core::train::MinedPair;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn unit_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Labels with at least two members each and at least two labels.
pub fn batch_labels(rng: &mut ChaCha8Rng, max: usize) -> Vec<u32> {
    let groups = rng.random_range(2..=max / 2);
    let mut labels: Vec<u32> = (0..groups as u32).flat_map(|g| [g, g]).collect();
    while labels.len() < max && rng.random_bool(0.5) {
        labels.push(rng.random_range(0..groups as u32));
    }
    labels
}

/// Quadratic scan: hardest positive and hardest negative per anchor, first index on ties.
pub fn brute_force(e: &[Vec<f32>], labels: &[u32]) -> Vec<MinedPair> {
    let sim = |a: &[f32], b: &[f32]| {
        let mut s = 0.0f32;
        for i in 0..a.len() {
            s += a[i] * b[i];
        }
        s.clamp(-1.0, 1.0)
    };
    (0..e.len())
        .map(|a| {
            let mut best_p = (usize::MAX, f32::INFINITY);
            let mut best_n = (usize::MAX, f32::NEG_INFINITY);
            for j in 0..e.len() {
                let s = sim(&e[a], &e[j]);
                if j != a && labels[j] == labels[a] && s < best_p.1 {
                    best_p = (j, s);
                }
                if labels[j] != labels[a] && s > best_n.1 {
                    best_n = (j, s);
                }
            }
            MinedPair { positive: best_p.0, s_p: best_p.1, negative: best_n.0, s_n: best_n.1 }
        })
        .collect()
}
