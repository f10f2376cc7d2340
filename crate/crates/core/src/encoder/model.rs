//! Encoder forward and backward passes.
//!
//! `tokens + positions -> B × [pre-LN windowed attention, pre-LN FFN] ->
//! final LN at CLS -> dense, GELU, dense -> L2 normalize`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::attention::{attention_backward, attention_forward, AttentionCache, AttentionShape, Qkv};
use super::config::EncoderConfig;
use super::params::{LayerNorm, Linear, Parameters};
use super::tensor::{gemm, gemm_a_bt, gemm_at_b_acc};
use super::EmbeddingVector;
use crate::error::{Error, Result};
use crate::tokenize::EncodedFunction;

const LN_EPS: f32 = 1e-5;

// tanh approximation of GELU
const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn linear_forward(x: &[f32], rows: usize, lin: &Linear) -> Vec<f32> {
    let (inp, out) = (lin.in_dim(), lin.out_dim());
    let mut y = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        y.extend_from_slice(lin.bias.data());
    }
    gemm(rows, inp, out, x, lin.weight.data(), 1.0, &mut y);
    y
}

/// Accumulates weight/bias gradients into `grad` and writes (or adds, when
/// `accumulate`) the input gradient into `dx`.
fn linear_backward(
    x: &[f32],
    dy: &[f32],
    rows: usize,
    lin: &Linear,
    grad: &mut Linear,
    dx: &mut [f32],
    accumulate: bool,
) {
    let (inp, out) = (lin.in_dim(), lin.out_dim());
    gemm_at_b_acc(inp, rows, out, x, dy, grad.weight.data_mut());
    let db = grad.bias.data_mut();
    for r in 0..rows {
        db.iter_mut()
            .zip(&dy[r * out..(r + 1) * out])
            .for_each(|(b, g)| *b += g);
    }
    gemm_a_bt(rows, out, inp, dy, lin.weight.data(), if accumulate { 1.0 } else { 0.0 }, dx);
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Vec<f32>,
    rstd: Vec<f32>,
}

fn layer_norm_forward(x: &[f32], rows: usize, ln: &LayerNorm) -> (Vec<f32>, NormCache) {
    let h = ln.gain.len();
    let mut y = vec![0.0; rows * h];
    let mut xhat = vec![0.0; rows * h];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * h..(r + 1) * h];
        let mean = row.iter().sum::<f32>() / h as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / h as f32;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..h {
            let xh = (row[c] - mean) * rs;
            xhat[r * h + c] = xh;
            y[r * h + c] = xh * ln.gain.data()[c] + ln.bias.data()[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Adds the input gradient into `dx`.
fn layer_norm_backward(dy: &[f32], rows: usize, cache: &NormCache, ln: &LayerNorm, grad: &mut LayerNorm, dx: &mut [f32]) {
    let h = ln.gain.len();
    let mut dxhat = vec![0.0; h];
    for r in 0..rows {
        let dyr = &dy[r * h..(r + 1) * h];
        let xh = &cache.xhat[r * h..(r + 1) * h];
        {
            let dg = grad.gain.data_mut();
            for c in 0..h {
                dg[c] += dyr[c] * xh[c];
            }
        }
        {
            let db = grad.bias.data_mut();
            for c in 0..h {
                db[c] += dyr[c];
            }
        }
        for c in 0..h {
            dxhat[c] = dyr[c] * ln.gain.data()[c];
        }
        let m1 = dxhat.iter().sum::<f32>() / h as f32;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f32>() / h as f32;
        let rs = cache.rstd[r];
        for c in 0..h {
            dx[r * h + c] += rs * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
}

fn dropout_mask<R: Rng>(len: usize, p: f32, rng: &mut R) -> Vec<f32> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f32>() < p { 0.0 } else { keep })
        .collect()
}

fn apply_mask(x: &mut [f32], mask: Option<&Vec<f32>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    attn_norm: NormCache,
    h1: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    global: Option<[Vec<f32>; 3]>,
    attn: AttentionCache,
    ctx: Vec<f32>,
    drop_attn: Option<Vec<f32>>,
    ffn_norm: NormCache,
    h2: Vec<f32>,
    f_pre: Vec<f32>,
    f_act: Vec<f32>,
    drop_ffn: Option<Vec<f32>>,
}

/// Activations retained by [`Encoder::forward_train`] for [`Encoder::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rows: usize,
    ids: Vec<u32>,
    drop_embed: Option<Vec<f32>>,
    blocks: Vec<BlockCache>,
    final_norm: NormCache,
    cls: Vec<f32>,
    head_pre: Vec<f32>,
    head_act: Vec<f32>,
    norm: f32,
    embedding: Vec<f32>,
}

impl ForwardCache {
    pub fn embedding(&self) -> &[f32] {
        &self.embedding
    }
}

/// The embedding model: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: Parameters,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Parameters::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: EncoderConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        if !params.matches(&config) {
            return Err(Error::Config("parameter shapes do not match encoder config".into()));
        }
        Ok(Self { config, params })
    }

    fn check_input(&self, enc: &EncodedFunction) -> Result<()> {
        if enc.ids.len() != self.config.input_len
            || enc.attention_mask.len() != enc.ids.len()
            || enc.global_mask.len() != enc.ids.len()
        {
            return Err(Error::InputLength {
                expected: self.config.input_len,
                got: enc.ids.len(),
            });
        }
        let v = self.config.vocab_size;
        if let Some(&id) = enc.ids.iter().find(|&&id| id as usize >= v) {
            return Err(Error::TokenOutOfRange { id, vocab_size: v });
        }
        Ok(())
    }

    /// Inference forward pass; dropout disabled.
    pub fn forward(&self, enc: &EncodedFunction) -> Result<EmbeddingVector> {
        let cache = self.run(enc, None)?;
        Ok(EmbeddingVector::from_unit(cache.embedding))
    }

    /// Forward pass that keeps activations. Dropout is applied when a seed
    /// is given and the configured rate is non-zero.
    pub fn forward_train(&self, enc: &EncodedFunction, dropout_seed: Option<u64>) -> Result<ForwardCache> {
        let mut rng = dropout_seed
            .filter(|_| self.config.dropout > 0.0)
            .map(ChaCha8Rng::seed_from_u64);
        self.run(enc, rng.as_mut())
    }

    /// Embeds many inputs, in parallel across sequences.
    pub fn embed_batch(&self, encs: &[EncodedFunction]) -> Result<Vec<EmbeddingVector>> {
        encs.par_iter().map(|e| self.forward(e)).collect()
    }

    fn run(&self, enc: &EncodedFunction, mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardCache> {
        self.check_input(enc)?;
        let cfg = &self.config;
        let p = &self.params;
        let h = cfg.hidden_dim;
        let f = cfg.intermediate_dim;
        // Rows past the last attended position cannot influence CLS.
        let rows = enc
            .attention_mask
            .iter()
            .rposition(|&m| m)
            .map_or(1, |last| last + 1);
        let ids = enc.ids[..rows].to_vec();
        let attention_mask = &enc.attention_mask[..rows];
        let global_mask = &enc.global_mask[..rows];
        let shape = AttentionShape {
            seq_len: rows,
            hidden: h,
            heads: cfg.num_heads,
            window: cfg.window,
        };
        let drop_p = cfg.dropout;

        let mut x = vec![0.0f32; rows * h];
        for (r, &id) in ids.iter().enumerate() {
            let tok = p.token_embedding.row(id as usize);
            let pos = p.position_embedding.row(r);
            for c in 0..h {
                x[r * h + c] = tok[c] + pos[c];
            }
        }
        let drop_embed = rng.as_deref_mut().map(|g| dropout_mask(rows * h, drop_p, g));
        apply_mask(&mut x, drop_embed.as_ref());

        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for b in &p.blocks {
            let x_in = x;
            let (h1, attn_norm) = layer_norm_forward(&x_in, rows, &b.attn_norm);
            let q = linear_forward(&h1, rows, &b.local.query);
            let k = linear_forward(&h1, rows, &b.local.key);
            let v = linear_forward(&h1, rows, &b.local.value);
            let global = b.global.as_ref().map(|g| {
                [
                    linear_forward(&h1, rows, &g.query),
                    linear_forward(&h1, rows, &g.key),
                    linear_forward(&h1, rows, &g.value),
                ]
            });
            let local_qkv = Qkv { query: &q, key: &k, value: &v };
            let global_qkv = global.as_ref().map(|[gq, gk, gv]| Qkv { query: gq, key: gk, value: gv });
            let (ctx, attn) = attention_forward(local_qkv, global_qkv, attention_mask, global_mask, shape);
            let mut a = linear_forward(&ctx, rows, &b.attn_out);
            let drop_attn = rng.as_deref_mut().map(|g| dropout_mask(rows * h, drop_p, g));
            apply_mask(&mut a, drop_attn.as_ref());
            let x_mid: Vec<f32> = x_in.iter().zip(&a).map(|(x, a)| x + a).collect();

            let (h2, ffn_norm) = layer_norm_forward(&x_mid, rows, &b.ffn_norm);
            let f_pre = linear_forward(&h2, rows, &b.ffn_in);
            let f_act: Vec<f32> = f_pre.iter().map(|&z| gelu(z)).collect();
            let mut y = linear_forward(&f_act, rows, &b.ffn_out);
            let drop_ffn = rng.as_deref_mut().map(|g| dropout_mask(rows * h, drop_p, g));
            apply_mask(&mut y, drop_ffn.as_ref());
            x = x_mid.iter().zip(&y).map(|(x, y)| x + y).collect();
            debug_assert_eq!(f_act.len(), rows * f);

            blocks.push(BlockCache {
                attn_norm,
                h1,
                q,
                k,
                v,
                global,
                attn,
                ctx,
                drop_attn,
                ffn_norm,
                h2,
                f_pre,
                f_act,
                drop_ffn,
            });
        }

        let (cls, final_norm) = layer_norm_forward(&x[..h], 1, &p.final_norm);
        let head_pre = linear_forward(&cls, 1, &p.head_dense);
        let head_act: Vec<f32> = head_pre.iter().map(|&z| gelu(z)).collect();
        let z = linear_forward(&head_act, 1, &p.head_out);
        let norm = z.iter().map(|v| v * v).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
        let embedding: Vec<f32> = z.iter().map(|v| v / norm).collect();

        Ok(ForwardCache {
            rows,
            ids,
            drop_embed,
            blocks,
            final_norm,
            cls,
            head_pre,
            head_act,
            norm,
            embedding,
        })
    }

    /// Back-propagates `d_embedding` (gradient w.r.t. the unit-norm output)
    /// and accumulates parameter gradients into `grads`.
    pub fn backward(&self, cache: &ForwardCache, d_embedding: &[f32], grads: &mut Parameters) {
        let cfg = &self.config;
        let p = &self.params;
        let h = cfg.hidden_dim;
        let f = cfg.intermediate_dim;
        let rows = cache.rows;
        let shape = AttentionShape {
            seq_len: rows,
            hidden: h,
            heads: cfg.num_heads,
            window: cfg.window,
        };

        let e = &cache.embedding;
        let proj: f32 = e.iter().zip(d_embedding).map(|(a, b)| a * b).sum();
        let dz: Vec<f32> = e
            .iter()
            .zip(d_embedding)
            .map(|(e, g)| (g - e * proj) / cache.norm)
            .collect();
        let mut d_act = vec![0.0; h];
        linear_backward(&cache.head_act, &dz, 1, &p.head_out, &mut grads.head_out, &mut d_act, false);
        let d_pre: Vec<f32> = d_act
            .iter()
            .zip(&cache.head_pre)
            .map(|(g, &z)| g * gelu_grad(z))
            .collect();
        let mut d_cls = vec![0.0; h];
        linear_backward(&cache.cls, &d_pre, 1, &p.head_dense, &mut grads.head_dense, &mut d_cls, false);

        let mut dx = vec![0.0f32; rows * h];
        layer_norm_backward(&d_cls, 1, &cache.final_norm, &p.final_norm, &mut grads.final_norm, &mut dx[..h]);

        for (bi, (b, bc)) in p.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let gb = &mut grads.blocks[bi];
            // FFN sublayer: x_out = x_mid + drop(ffn(LN(x_mid)))
            let mut dy = dx.clone();
            apply_mask(&mut dy, bc.drop_ffn.as_ref());
            let mut d_fact = vec![0.0; rows * f];
            linear_backward(&bc.f_act, &dy, rows, &b.ffn_out, &mut gb.ffn_out, &mut d_fact, false);
            for (g, &z) in d_fact.iter_mut().zip(&bc.f_pre) {
                *g *= gelu_grad(z);
            }
            let mut d_h2 = vec![0.0; rows * h];
            linear_backward(&bc.h2, &d_fact, rows, &b.ffn_in, &mut gb.ffn_in, &mut d_h2, false);
            let mut d_mid = dx;
            layer_norm_backward(&d_h2, rows, &bc.ffn_norm, &b.ffn_norm, &mut gb.ffn_norm, &mut d_mid);

            // attention sublayer: x_mid = x_in + drop(out(attn(LN(x_in))))
            let mut da = d_mid.clone();
            apply_mask(&mut da, bc.drop_attn.as_ref());
            let mut d_ctx = vec![0.0; rows * h];
            linear_backward(&bc.ctx, &da, rows, &b.attn_out, &mut gb.attn_out, &mut d_ctx, false);
            let local_qkv = Qkv { query: &bc.q, key: &bc.k, value: &bc.v };
            let global_qkv = bc.global.as_ref().map(|[gq, gk, gv]| Qkv { query: gq, key: gk, value: gv });
            let (dl, dg) = attention_backward(&d_ctx, local_qkv, global_qkv, &bc.attn, shape);
            let mut d_h1 = vec![0.0; rows * h];
            linear_backward(&bc.h1, &dl.query, rows, &b.local.query, &mut gb.local.query, &mut d_h1, true);
            linear_backward(&bc.h1, &dl.key, rows, &b.local.key, &mut gb.local.key, &mut d_h1, true);
            linear_backward(&bc.h1, &dl.value, rows, &b.local.value, &mut gb.local.value, &mut d_h1, true);
            if let (Some(gp), Some(gg), Some(dg)) = (b.global.as_ref(), gb.global.as_mut(), dg) {
                linear_backward(&bc.h1, &dg.query, rows, &gp.query, &mut gg.query, &mut d_h1, true);
                linear_backward(&bc.h1, &dg.key, rows, &gp.key, &mut gg.key, &mut d_h1, true);
                linear_backward(&bc.h1, &dg.value, rows, &gp.value, &mut gg.value, &mut d_h1, true);
            }
            let mut d_in = d_mid;
            layer_norm_backward(&d_h1, rows, &bc.attn_norm, &b.attn_norm, &mut gb.attn_norm, &mut d_in);
            dx = d_in;
        }

        apply_mask(&mut dx, cache.drop_embed.as_ref());
        for (r, &id) in cache.ids.iter().enumerate() {
            let g = &dx[r * h..(r + 1) * h];
            grads.token_embedding
                .row_mut(id as usize)
                .iter_mut()
                .zip(g)
                .for_each(|(t, g)| *t += g);
            grads.position_embedding
                .row_mut(r)
                .iter_mut()
                .zip(g)
                .for_each(|(t, g)| *t += g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f32, -1.0, -0.1, 0.0, 0.4, 2.5] {
            let h = 1e-3;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let ln = LayerNorm {
            gain: super::super::tensor::Tensor::filled(&[4], 1.0),
            bias: super::super::tensor::Tensor::zeros(&[4]),
        };
        let (y, _) = layer_norm_forward(&[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 0.0, 1.0], 2, &ln);
        for r in 0..2 {
            let row = &y[r * 4..r * 4 + 4];
            let mean: f32 = row.iter().sum::<f32>() / 4.0;
            let var: f32 = row.iter().map(|v| v * v).sum::<f32>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
