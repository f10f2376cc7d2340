use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hardest positive and negative for one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinedPair {
    pub positive: usize,
    pub s_p: f32,
    pub negative: usize,
    pub s_n: f32,
}

/// One [`MinedPair`] per anchor, in batch order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedPairs {
    pub anchors: Vec<MinedPair>,
}

/// Cosine of two unit vectors, accumulated left to right.
pub fn similarity(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s.clamp(-1.0, 1.0)
}

/// Full similarity matrix, row-major.
pub fn similarity_matrix<E: AsRef<[f32]>>(embeddings: &[E]) -> Vec<f32> {
    let n = embeddings.len();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = similarity(embeddings[i].as_ref(), embeddings[j].as_ref());
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    s
}

/// Per anchor: the least similar same-label example and the most similar
/// other-label example. Ties go to the lowest index.
pub fn mine_batch_hard<E: AsRef<[f32]>, L: PartialEq + std::fmt::Debug>(
    embeddings: &[E],
    labels: &[L],
) -> Result<MinedPairs> {
    if embeddings.len() != labels.len() {
        return Err(Error::Batch(format!(
            "{} embeddings for {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    let n = labels.len();
    let sim = similarity_matrix(embeddings);
    let mut anchors = Vec::with_capacity(n);
    for a in 0..n {
        let mut pos: Option<(usize, f32)> = None;
        let mut neg: Option<(usize, f32)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let s = sim[a * n + j];
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| s < best) {
                    pos = Some((j, s));
                }
            } else if neg.is_none_or(|(_, best)| s > best) {
                neg = Some((j, s));
            }
        }
        let (Some((positive, s_p)), Some((negative, s_n))) = (pos, neg) else {
            let why = if pos.is_none() {
                "has no other member in the batch"
            } else {
                "is the only label in the batch"
            };
            return Err(Error::Batch(format!("label {:?} {why}", labels[a])));
        };
        anchors.push(MinedPair {
            positive,
            s_p,
            negative,
            s_n,
        });
    }
    Ok(MinedPairs { anchors })
}
