use serde::{Deserialize, Serialize};

use crate::encoder::Parameters;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f32,
    /// Micro-batches summed before each update.
    pub accumulation_steps: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            accumulation_steps: 64,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    /// A zero learning rate is accepted so moments can be advanced without
    /// moving parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.accumulation_steps == 0 {
            return Err(Error::Config("accumulation_steps must be >= 1".into()));
        }
        let unit = |b: f32| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction; no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: OptimizerConfig,
    pub first: Parameters,
    pub second: Parameters,
    pub step: u64,
}

impl Adam {
    pub fn new(config: OptimizerConfig, like: &Parameters) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: like.zeros_like(),
            second: like.zeros_like(),
            step: 0,
        })
    }

    pub fn update(&mut self, params: &mut Parameters, grads: &Parameters) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let pts = params.tensors_mut();
        let gts = grads.tensors();
        let mts = self.first.tensors_mut();
        let vts = self.second.tensors_mut();
        for (((p, g), m), v) in pts.into_iter().zip(gts).zip(mts).zip(vts) {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            input_len: 4,
            num_blocks: 1,
            hidden_dim: 2,
            intermediate_dim: 2,
            num_heads: 1,
            window: 2,
            embed_dim: 2,
            vocab_size: 4,
            dropout: 0.0,
            tie_global_projections: true,
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Parameters::zeros(&tiny());
        let mut g = p.zeros_like();
        g.fill(3.0);
        let mut adam = Adam::new(OptimizerConfig { learning_rate: 0.1, ..Default::default() }, &p).unwrap();
        adam.update(&mut p, &g);
        // bias-corrected first step is lr * sign(g)
        for t in p.tensors() {
            assert!(t.data().iter().all(|&v| (v + 0.1).abs() < 1e-6));
        }
    }

    #[test]
    fn zero_rate_keeps_parameters() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut p = Parameters::init(&tiny(), &mut rng);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.fill(-0.5);
        let mut adam = Adam::new(OptimizerConfig { learning_rate: 0.0, ..Default::default() }, &p).unwrap();
        adam.update(&mut p, &g);
        assert_eq!(p, before);
        assert_eq!(adam.step, 1);
        assert!(adam.first.tensors()[0].data()[0] != 0.0);
    }

    use rand::SeedableRng;

    #[test]
    fn validation() {
        assert!(OptimizerConfig { accumulation_steps: 0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
    }
}
