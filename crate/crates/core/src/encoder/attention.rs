//! Sliding-window attention with designated global positions.
//!
//! A non-global query `i` attends, through the local projections, to every
//! unmasked key `j` with `|i - j| <= window / 2` plus every unmasked global
//! position. A global query attends to all unmasked keys through the global
//! projections. Cost is `O(n · (window + globals))` per head.

use super::tensor::dot;

/// Row-major `n × hidden` query, key and value matrices.
#[derive(Debug, Clone, Copy)]
pub struct Qkv<'a> {
    pub query: &'a [f32],
    pub key: &'a [f32],
    pub value: &'a [f32],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QkvGrad {
    pub query: Vec<f32>,
    pub key: Vec<f32>,
    pub value: Vec<f32>,
}

impl QkvGrad {
    fn zeros(len: usize) -> Self {
        Self {
            query: vec![0.0; len],
            key: vec![0.0; len],
            value: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub seq_len: usize,
    pub hidden: usize,
    pub heads: usize,
    pub window: usize,
}

impl AttentionShape {
    fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Key sets and softmax probabilities retained for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct AttentionCache {
    offsets: Vec<usize>,
    keys: Vec<u32>,
    // per query: heads × |keys(i)|, head-major
    probs: Vec<f32>,
    global_query: Vec<bool>,
}

impl AttentionCache {
    /// Positions query `i` was allowed to attend to.
    pub fn keys_of(&self, i: usize) -> &[u32] {
        &self.keys[self.offsets[i]..self.offsets[i + 1]]
    }
}

fn key_sets(attention_mask: &[bool], global_mask: &[bool], window: usize) -> (Vec<usize>, Vec<u32>) {
    let n = attention_mask.len();
    let half = window / 2;
    let globals: Vec<usize> = (0..n).filter(|&j| global_mask[j] && attention_mask[j]).collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut keys = Vec::new();
    offsets.push(0);
    for (i, &is_global) in global_mask.iter().enumerate().take(n) {
        if is_global {
            keys.extend((0..n).filter(|&j| attention_mask[j]).map(|j| j as u32));
        } else {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            keys.extend((lo..=hi).filter(|&j| attention_mask[j]).map(|j| j as u32));
            keys.extend(
                globals
                    .iter()
                    .filter(|&&g| g < lo || g > hi)
                    .map(|&g| g as u32),
            );
        }
        offsets.push(keys.len());
    }
    (offsets, keys)
}

/// Forward pass. `global` supplies the projections used by global queries;
/// `None` means they share the local ones.
pub fn attention_forward(
    local: Qkv<'_>,
    global: Option<Qkv<'_>>,
    attention_mask: &[bool],
    global_mask: &[bool],
    shape: AttentionShape,
) -> (Vec<f32>, AttentionCache) {
    let AttentionShape {
        seq_len: n,
        hidden: h,
        heads,
        window,
    } = shape;
    assert_eq!(attention_mask.len(), n);
    assert_eq!(global_mask.len(), n);
    assert_eq!(local.query.len(), n * h);
    let d = shape.head_dim();
    let scale = 1.0 / (d as f32).sqrt();
    let (offsets, keys) = key_sets(attention_mask, global_mask, window);
    let mut probs = vec![0.0f32; keys.len() * heads];
    let mut out = vec![0.0f32; n * h];
    let mut logits = Vec::new();

    for i in 0..n {
        let ks = &keys[offsets[i]..offsets[i + 1]];
        if ks.is_empty() {
            continue;
        }
        let proj = match (global_mask[i], global) {
            (true, Some(g)) => g,
            _ => local,
        };
        let base = offsets[i] * heads;
        for hd in 0..heads {
            let c0 = hd * d;
            let q = &proj.query[i * h + c0..i * h + c0 + d];
            logits.clear();
            logits.extend(ks.iter().map(|&j| {
                let j = j as usize;
                dot(q, &proj.key[j * h + c0..j * h + c0 + d]) * scale
            }));
            let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                sum += *l;
            }
            let p = &mut probs[base + hd * ks.len()..base + (hd + 1) * ks.len()];
            let o = &mut out[i * h + c0..i * h + c0 + d];
            for ((pt, &l), &j) in p.iter_mut().zip(&logits).zip(ks) {
                *pt = l / sum;
                let j = j as usize;
                let v = &proj.value[j * h + c0..j * h + c0 + d];
                o.iter_mut().zip(v).for_each(|(o, v)| *o += *pt * v);
            }
        }
    }
    let cache = AttentionCache {
        offsets,
        keys,
        probs,
        global_query: global_mask.to_vec(),
    };
    (out, cache)
}

/// Windowed attention without retaining a cache.
pub fn sliding_window_attention(
    local: Qkv<'_>,
    global: Option<Qkv<'_>>,
    attention_mask: &[bool],
    global_mask: &[bool],
    shape: AttentionShape,
) -> Vec<f32> {
    attention_forward(local, global, attention_mask, global_mask, shape).0
}

/// Backward pass: gradients for the local and (if present) global projections.
pub fn attention_backward(
    d_out: &[f32],
    local: Qkv<'_>,
    global: Option<Qkv<'_>>,
    cache: &AttentionCache,
    shape: AttentionShape,
) -> (QkvGrad, Option<QkvGrad>) {
    let AttentionShape {
        seq_len: n,
        hidden: h,
        heads,
        ..
    } = shape;
    let d = shape.head_dim();
    let scale = 1.0 / (d as f32).sqrt();
    let mut dl = QkvGrad::zeros(n * h);
    let mut dg = global.map(|_| QkvGrad::zeros(n * h));
    let mut dp = Vec::new();

    for i in 0..n {
        let ks = cache.keys_of(i);
        if ks.is_empty() {
            continue;
        }
        let use_global = cache.global_query[i] && global.is_some();
        let (proj, grad) = if use_global {
            (global.unwrap(), dg.as_mut().unwrap())
        } else {
            (local, &mut dl)
        };
        let base = cache.offsets[i] * heads;
        for hd in 0..heads {
            let c0 = hd * d;
            let p = &cache.probs[base + hd * ks.len()..base + (hd + 1) * ks.len()];
            let g_out = &d_out[i * h + c0..i * h + c0 + d];
            dp.clear();
            for (&j, &pt) in ks.iter().zip(p) {
                let j = j as usize;
                let v = &proj.value[j * h + c0..j * h + c0 + d];
                dp.push(dot(g_out, v));
                grad.value[j * h + c0..j * h + c0 + d]
                    .iter_mut()
                    .zip(g_out)
                    .for_each(|(dv, go)| *dv += pt * go);
            }
            let mean: f32 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            let q = &proj.query[i * h + c0..i * h + c0 + d];
            for ((&j, &pt), &dpt) in ks.iter().zip(p).zip(&dp) {
                let j = j as usize;
                let dlogit = pt * (dpt - mean) * scale;
                if dlogit == 0.0 {
                    continue;
                }
                let k = &proj.key[j * h + c0..j * h + c0 + d];
                grad.query[i * h + c0..i * h + c0 + d]
                    .iter_mut()
                    .zip(k)
                    .for_each(|(dq, k)| *dq += dlogit * k);
                grad.key[j * h + c0..j * h + c0 + d]
                    .iter_mut()
                    .zip(q)
                    .for_each(|(dk, q)| *dk += dlogit * q);
            }
        }
    }
    (dl, dg)
}
