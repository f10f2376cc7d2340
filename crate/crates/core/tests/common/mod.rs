//! Reference implementations and generators shared by the integration tests.
#![allow(dead_code)]

pub mod esil;
pub mod gradcheck;
pub mod mining;

use std::collections::HashMap;

use faser_core::encoder::{Encoder, EncoderConfig, Parameters};
use faser_core::tokenize::EncodedFunction;

pub fn allowed(i: usize, j: usize, mask: &[bool], global: &[bool], window: usize) -> bool {
    mask[j] && (global[i] || global[j] || i.abs_diff(j) <= window / 2)
}

/// Masked dense multi-head attention; global rows use `gq/gk/gv`.
#[allow(clippy::too_many_arguments)]
pub fn dense_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    g: Option<(&[f64], &[f64], &[f64])>,
    mask: &[bool],
    global: &[bool],
    window: usize,
    n: usize,
    h: usize,
    heads: usize,
) -> Vec<f64> {
    let d = h / heads;
    let mut out = vec![0.0; n * h];
    for i in 0..n {
        let (qq, kk, vv) = match (global[i], g) {
            (true, Some(g)) => g,
            _ => (q, k, v),
        };
        for hd in 0..heads {
            let cols = hd * d..(hd + 1) * d;
            let mut logits = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                if allowed(i, j, mask, global, window) {
                    logits[j] = cols.clone().map(|c| qq[i * h + c] * kk[j * h + c]).sum::<f64>()
                        / (d as f64).sqrt();
                }
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = w.iter().sum();
            for j in 0..n {
                for c in cols.clone() {
                    out[i * h + c] += w[j] / z * vv[j * h + c];
                }
            }
        }
    }
    out
}

pub fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Parameters as named f64 tensors.
pub type ParamMap = HashMap<String, Vec<f64>>;

pub fn param_map(p: &Parameters) -> ParamMap {
    p.named().into_iter().map(|(n, t)| (n, widen(t.data()))).collect()
}

fn linear(x: &[f64], rows: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    let inp = w.len() / out;
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        for o in 0..out {
            y[r * out + o] = b[o] + (0..inp).map(|i| x[r * inp + i] * w[i * out + o]).sum::<f64>();
        }
    }
    y
}

fn layer_norm(x: &[f64], rows: usize, g: &[f64], b: &[f64]) -> Vec<f64> {
    let h = g.len();
    let mut y = vec![0.0; rows * h];
    for r in 0..rows {
        let row = &x[r * h..(r + 1) * h];
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h as f64;
        for c in 0..h {
            y[r * h + c] = (row[c] - mean) / (var + 1e-5).sqrt() * g[c] + b[c];
        }
    }
    y
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn reference_forward(enc: &Encoder, input: &EncodedFunction) -> Vec<f64> {
    reference_forward_with(&enc.config, &param_map(&enc.params), input)
}

pub fn reference_forward_with(cfg: &EncoderConfig, p: &ParamMap, input: &EncodedFunction) -> Vec<f64> {
    let t = |p: &ParamMap, name: &str| p.get(name).unwrap_or_else(|| panic!("missing {name}")).clone();
    let (n, h) = (cfg.input_len, cfg.hidden_dim);
    let tok = t(p, "embeddings.token");
    let pos = t(p, "embeddings.position");
    let mut x = vec![0.0; n * h];
    for r in 0..n {
        let id = input.ids[r] as usize;
        for c in 0..h {
            x[r * h + c] = tok[id * h + c] + pos[r * h + c];
        }
    }
    for b in 0..cfg.num_blocks {
        let pre = |s: &str| format!("blocks.{b}.{s}");
        let lin = |x: &[f64], s: &str| linear(x, n, &t(p, &pre(&format!("{s}.weight"))), &t(p, &pre(&format!("{s}.bias"))));
        let h1 = layer_norm(&x, n, &t(p, &pre("attn_norm.gain")), &t(p, &pre("attn_norm.bias")));
        let (q, k, v) = (lin(&h1, "attn.query"), lin(&h1, "attn.key"), lin(&h1, "attn.value"));
        let g = if cfg.tie_global_projections {
            None
        } else {
            Some((lin(&h1, "attn.query_global"), lin(&h1, "attn.key_global"), lin(&h1, "attn.value_global")))
        };
        let ctx = dense_attention(
            &q,
            &k,
            &v,
            g.as_ref().map(|(a, b, c)| (&a[..], &b[..], &c[..])),
            &input.attention_mask,
            &input.global_mask,
            cfg.window,
            n,
            h,
            cfg.num_heads,
        );
        let a = lin(&ctx, "attn.output");
        x.iter_mut().zip(&a).for_each(|(x, a)| *x += a);
        let h2 = layer_norm(&x, n, &t(p, &pre("ffn_norm.gain")), &t(p, &pre("ffn_norm.bias")));
        let f: Vec<f64> = lin(&h2, "ffn.in").into_iter().map(gelu).collect();
        let y = lin(&f, "ffn.out");
        x.iter_mut().zip(&y).for_each(|(x, y)| *x += y);
    }
    let cls = layer_norm(&x[..h], 1, &t(p, "final_norm.gain"), &t(p, "final_norm.bias"));
    let a: Vec<f64> = linear(&cls, 1, &t(p, "head.dense.weight"), &t(p, "head.dense.bias"))
        .into_iter()
        .map(gelu)
        .collect();
    let z = linear(&a, 1, &t(p, "head.out.weight"), &t(p, "head.out.bias"));
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    z.iter().map(|v| v / norm).collect()
}

