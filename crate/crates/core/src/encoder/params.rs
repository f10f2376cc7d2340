use rand::Rng;

use super::config::EncoderConfig;
use super::tensor::Tensor;

const INIT_STD: f32 = 0.02;

/// Dense layer `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn zeros(inp: usize, out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inp, out]),
            bias: Tensor::zeros(&[out]),
        }
    }


    pub fn in_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    fn zeros(dim: usize) -> Self {
        Self {
            gain: Tensor::zeros(&[dim]),
            bias: Tensor::zeros(&[dim]),
        }
    }

}

/// Q/K/V projections for one attention flavour.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

impl Projections {
    fn zeros(h: usize) -> Self {
        Self {
            query: Linear::zeros(h, h),
            key: Linear::zeros(h, h),
            value: Linear::zeros(h, h),
        }
    }

}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: LayerNorm,
    pub local: Projections,
    /// `None` when global attention reuses the local projections.
    pub global: Option<Projections>,
    pub attn_out: Linear,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

/// All trainable tensors of the encoder. Also used as the gradient and
/// optimizer-moment container, since those share its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
    pub head_dense: Linear,
    pub head_out: Linear,
}

impl Parameters {
    /// Weights and embeddings ~ N(0, 0.02²), layer-norm gains 1, biases 0.
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        let names = p.names();
        for (name, t) in names.iter().zip(p.tensors_mut()) {
            if name.ends_with(".gain") {
                t.fill(1.0);
            } else if name.ends_with(".weight") || name.starts_with("embeddings.") {
                *t = Tensor::normal(t.dims(), INIT_STD, rng);
            }
        }
        p
    }

    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let h = cfg.hidden_dim;
        let blocks = (0..cfg.num_blocks)
            .map(|_| Block {
                attn_norm: LayerNorm::zeros(h),
                local: Projections::zeros(h),
                global: (!cfg.tie_global_projections).then(|| Projections::zeros(h)),
                attn_out: Linear::zeros(h, h),
                ffn_norm: LayerNorm::zeros(h),
                ffn_in: Linear::zeros(h, cfg.intermediate_dim),
                ffn_out: Linear::zeros(cfg.intermediate_dim, h),
            })
            .collect();
        Self {
            token_embedding: Tensor::zeros(&[cfg.vocab_size, h]),
            position_embedding: Tensor::zeros(&[cfg.input_len, h]),
            blocks,
            final_norm: LayerNorm::zeros(h),
            head_dense: Linear::zeros(h, h),
            head_out: Linear::zeros(h, cfg.embed_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.fill(0.0);
        p
    }

    /// Tensor names in canonical (checkpoint) order.
    pub fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embeddings.token".into(), &self.token_embedding),
            ("embeddings.position".into(), &self.position_embedding),
        ];
        fn lin<'a>(out: &mut Vec<(String, &'a Tensor)>, p: &str, l: &'a Linear) {
            out.push((format!("{p}.weight"), &l.weight));
            out.push((format!("{p}.bias"), &l.bias));
        }
        fn ln<'a>(out: &mut Vec<(String, &'a Tensor)>, p: &str, l: &'a LayerNorm) {
            out.push((format!("{p}.gain"), &l.gain));
            out.push((format!("{p}.bias"), &l.bias));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            ln(&mut out, &format!("{p}.attn_norm"), &b.attn_norm);
            lin(&mut out, &format!("{p}.attn.query"), &b.local.query);
            lin(&mut out, &format!("{p}.attn.key"), &b.local.key);
            lin(&mut out, &format!("{p}.attn.value"), &b.local.value);
            if let Some(g) = &b.global {
                lin(&mut out, &format!("{p}.attn.query_global"), &g.query);
                lin(&mut out, &format!("{p}.attn.key_global"), &g.key);
                lin(&mut out, &format!("{p}.attn.value_global"), &g.value);
            }
            lin(&mut out, &format!("{p}.attn.output"), &b.attn_out);
            ln(&mut out, &format!("{p}.ffn_norm"), &b.ffn_norm);
            lin(&mut out, &format!("{p}.ffn.in"), &b.ffn_in);
            lin(&mut out, &format!("{p}.ffn.out"), &b.ffn_out);
        }
        ln(&mut out, "final_norm", &self.final_norm);
        lin(&mut out, "head.dense", &self.head_dense);
        lin(&mut out, "head.out", &self.head_out);
        out
    }

    /// Mutable tensors in the same order as [`Parameters::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.token_embedding, &mut self.position_embedding];
        for b in &mut self.blocks {
            out.extend([&mut b.attn_norm.gain, &mut b.attn_norm.bias]);
            for l in [&mut b.local.query, &mut b.local.key, &mut b.local.value] {
                out.extend([&mut l.weight, &mut l.bias]);
            }
            if let Some(g) = &mut b.global {
                for l in [&mut g.query, &mut g.key, &mut g.value] {
                    out.extend([&mut l.weight, &mut l.bias]);
                }
            }
            out.extend([&mut b.attn_out.weight, &mut b.attn_out.bias]);
            out.extend([&mut b.ffn_norm.gain, &mut b.ffn_norm.bias]);
            out.extend([&mut b.ffn_in.weight, &mut b.ffn_in.bias]);
            out.extend([&mut b.ffn_out.weight, &mut b.ffn_out.bias]);
        }
        out.extend([&mut self.final_norm.gain, &mut self.final_norm.bias]);
        out.extend([&mut self.head_dense.weight, &mut self.head_dense.bias]);
        out.extend([&mut self.head_out.weight, &mut self.head_out.bias]);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.named().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let idx = self.names().iter().position(|n| n == name)?;
        self.tensors_mut().into_iter().nth(idx)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn fill(&mut self, v: f32) {
        self.tensors_mut().into_iter().for_each(|t| t.fill(v));
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Names and shapes agree with what `cfg` describes.
    pub fn matches(&self, cfg: &EncoderConfig) -> bool {
        let want = Self::zeros(cfg);
        let got = self.named();
        let want = want.named();
        got.len() == want.len()
            && got
                .iter()
                .zip(&want)
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.dims() == t2.dims())
    }
}
