//! Central-difference gradient check of the encoder and Circle Loss against
//! an independent f64 forward pass and loss.

use faser_core::encoder::{Encoder, EncoderConfig};
use faser_core::tokenize::{EncodedFunction, GlobalPolicy, CLS};
use faser_core::train::{batch_gradient, CircleLossConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{param_map, reference_forward_with, ParamMap};

pub const EPS: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-2;
/// Floor for tensors whose exact gradient is zero (key biases cancel in
/// the softmax); compared against the whole-model gradient norm.
pub const ZERO_TOL: f64 = 1e-5;

pub fn tiny_config(tie: bool) -> EncoderConfig {
    EncoderConfig {
        input_len: 8,
        num_blocks: 2,
        hidden_dim: 4,
        intermediate_dim: 8,
        num_heads: 2,
        window: 4,
        embed_dim: 4,
        vocab_size: 12,
        dropout: 0.0,
        tie_global_projections: tie,
    }
}

pub fn inputs(rng: &mut ChaCha8Rng, n: usize, policy: GlobalPolicy) -> Vec<EncodedFunction> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(3..=8);
            let mut ids = vec![CLS];
            ids.extend((1..len).map(|_| rng.random_range(1..12)));
            EncodedFunction::from_ids(&ids, 8, policy)
        })
        .collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Circle Loss written out from its definition, mined or all-pairs.
pub fn reference_loss(embs: &[Vec<f64>], labels: &[usize], c: &CircleLossConfig, all_pairs: bool) -> f64 {
    let (m, g) = (c.margin, c.scale);
    let pos = |s: f64| -g * (1.0 + m - s).max(0.0) * (s - (1.0 - m));
    let neg = |s: f64| g * (s + m).max(0.0) * (s - m);
    let lse = |v: Vec<f64>| {
        let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
    };
    let n = embs.len();
    let mut total = 0.0;
    for a in 0..n {
        let others = (0..n).filter(|&j| j != a);
        let ps: Vec<f64> = others.clone().filter(|&j| labels[j] == labels[a]).map(|j| cos(&embs[a], &embs[j])).collect();
        let ns: Vec<f64> = others.filter(|&j| labels[j] != labels[a]).map(|j| cos(&embs[a], &embs[j])).collect();
        let x = if all_pairs {
            lse(ns.into_iter().map(neg).collect()) + lse(ps.into_iter().map(pos).collect())
        } else {
            let sp = ps.iter().copied().fold(f64::INFINITY, f64::min);
            let sn = ns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            neg(sn) + pos(sp)
        };
        total += if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    }
    total / n as f64
}

fn loss_of(cfg: &EncoderConfig, p: &ParamMap, data: &[EncodedFunction], labels: &[usize], t: &TrainConfig) -> f64 {
    let embs: Vec<Vec<f64>> = data.iter().map(|d| reference_forward_with(cfg, p, d)).collect();
    reference_loss(&embs, labels, &t.loss, t.all_pairs)
}

/// Checks every parameter tensor; returns one line per failing tensor.
pub fn check(tie: bool, policy: GlobalPolicy, loss: CircleLossConfig, all_pairs: bool, seed: u64) -> Result<usize, Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = Encoder::new(tiny_config(tie), seed).unwrap();
    // large weights but small biases, so embeddings spread out instead of
    // collapsing onto the output bias where cosine gradients vanish
    for name in enc.params.names() {
        let (lo, hi) = match name.rsplit('.').next() {
            Some("gain") => (0.8, 1.2),
            Some("bias") => (-0.05, 0.05),
            _ => (-0.6, 0.6),
        };
        let t = enc.params.get_mut(&name).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(lo..hi));
    }
    let data = inputs(&mut rng, 6, policy);
    let labels = [0, 0, 1, 1, 2, 2];
    let cfg = TrainConfig { loss, all_pairs, ..TrainConfig::default() };
    let refs: Vec<&EncodedFunction> = data.iter().collect();
    let (l0, grads) = batch_gradient(&enc, &refs, &labels, &cfg, None).unwrap();
    let mut p = param_map(&enc.params);
    let lref = loss_of(&enc.config, &p, &data, &labels, &cfg);
    if (l0 - lref).abs() > 1e-4 * lref.abs().max(1.0) {
        return Err(vec![format!("loss {l0} vs reference {lref}")]);
    }

    let total_norm: f64 = grads.tensors().iter().flat_map(|t| t.data()).map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
    let mut failures = Vec::new();
    let mut checked = 0;
    for name in enc.params.names() {
        let analytic = grads.get(&name).unwrap().data().to_vec();
        let mut numeric = vec![0.0f64; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = p[&name][i];
            p.get_mut(&name).unwrap()[i] = orig + EPS;
            let up = loss_of(&enc.config, &p, &data, &labels, &cfg);
            p.get_mut(&name).unwrap()[i] = orig - EPS;
            let down = loss_of(&enc.config, &p, &data, &labels, &cfg);
            p.get_mut(&name).unwrap()[i] = orig;
            *slot = (up - down) / (2.0 * EPS);
        }
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut analytic.iter().zip(&numeric).map(|(a, n)| *a as f64 - n));
        let scale = norm(&mut analytic.iter().map(|&a| a as f64)).max(norm(&mut numeric.iter().copied()));
        if scale <= ZERO_TOL * total_norm {
            continue;
        }
        checked += 1;
        let rel = diff / scale;
        if rel >= REL_TOL {
            failures.push(format!("{name}: relative error {rel:.3e} (|g| = {scale:.3e})"));
        }
    }
    if failures.is_empty() {
        Ok(checked)
    } else {
        Err(failures)
    }
}
