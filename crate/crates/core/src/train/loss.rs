use serde::{Deserialize, Serialize};

use super::mining::MinedPairs;
use crate::{Error, Result};

/// Circle Loss margin and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircleLossConfig {
    pub margin: f64,
    pub scale: f64,
}

impl Default for CircleLossConfig {
    fn default() -> Self {
        Self {
            margin: 0.25,
            scale: 256.0,
        }
    }
}

impl CircleLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::Config(format!("circle margin must be in (0, 1), got {}", self.margin)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("circle scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    /// Logit of a positive similarity with its derivative.
    fn positive_logit(&self, s: f64) -> (f64, f64) {
        let (o, delta) = (1.0 + self.margin, 1.0 - self.margin);
        let alpha = (o - s).max(0.0);
        let d_alpha = if o - s > 0.0 { -1.0 } else { 0.0 };
        let logit = -self.scale * alpha * (s - delta);
        (logit, -self.scale * (d_alpha * (s - delta) + alpha))
    }

    fn negative_logit(&self, s: f64) -> (f64, f64) {
        let (o, delta) = (-self.margin, self.margin);
        let alpha = (s - o).max(0.0);
        let d_alpha = if s - o > 0.0 { 1.0 } else { 0.0 };
        let logit = self.scale * alpha * (s - delta);
        (logit, self.scale * (d_alpha * (s - delta) + alpha))
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-sum-exp of the logits, writing the softmax weights times the logit
/// derivatives into `grad`.
fn lse(values: &[(f64, f64)], grad: &mut [f64]) -> f64 {
    let max = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = values.iter().map(|v| (v.0 - max).exp()).sum();
    for (g, v) in grad.iter_mut().zip(values) {
        *g = (v.0 - max).exp() / z * v.1;
    }
    max + z.ln()
}

/// Loss of one anchor over its positive and negative similarities, with
/// the derivative of the loss with respect to each similarity.
pub fn anchor_loss(
    positives: &[f64],
    negatives: &[f64],
    cfg: &CircleLossConfig,
) -> (f64, Vec<f64>, Vec<f64>) {
    let pos: Vec<(f64, f64)> = positives.iter().map(|&s| cfg.positive_logit(s)).collect();
    let neg: Vec<(f64, f64)> = negatives.iter().map(|&s| cfg.negative_logit(s)).collect();
    let mut dp = vec![0.0; pos.len()];
    let mut dn = vec![0.0; neg.len()];
    let x = lse(&neg, &mut dn) + lse(&pos, &mut dp);
    let w = sigmoid(x);
    dp.iter_mut().chain(dn.iter_mut()).for_each(|g| *g *= w);
    (softplus(x), dp, dn)
}

/// Loss for one mined pair: `(loss, dL/ds_p, dL/ds_n)`.
pub fn pair_loss(s_p: f64, s_n: f64, cfg: &CircleLossConfig) -> (f64, f64, f64) {
    let (l, dp, dn) = anchor_loss(&[s_p], &[s_n], cfg);
    (l, dp[0], dn[0])
}

/// Mean loss over anchors.
pub fn circle_loss(pairs: &MinedPairs, cfg: &CircleLossConfig) -> f64 {
    circle_loss_with_grad(pairs, cfg).0
}

/// Mean loss plus per-anchor `(dL/ds_p, dL/ds_n)` of that mean.
pub fn circle_loss_with_grad(pairs: &MinedPairs, cfg: &CircleLossConfig) -> (f64, Vec<(f64, f64)>) {
    let n = pairs.anchors.len().max(1) as f64;
    let mut total = 0.0;
    let grads = pairs
        .anchors
        .iter()
        .map(|p| {
            let (l, dp, dn) = pair_loss(p.s_p as f64, p.s_n as f64, cfg);
            total += l;
            (dp / n, dn / n)
        })
        .collect();
    (total / n, grads)
}

/// All-pairs variant over a row-major similarity matrix. Returns the mean
/// loss and its gradient with respect to every matrix entry.
pub fn all_pairs_circle_loss<L: PartialEq>(
    sim: &[f32],
    labels: &[L],
    cfg: &CircleLossConfig,
) -> Result<(f64, Vec<f64>)> {
    let n = labels.len();
    if sim.len() != n * n {
        return Err(Error::Batch(format!("similarity matrix of {} for {n} labels", sim.len())));
    }
    let mut grad = vec![0.0; n * n];
    let mut total = 0.0;
    for a in 0..n {
        let (mut pi, mut ni) = (Vec::new(), Vec::new());
        for j in (0..n).filter(|&j| j != a) {
            if labels[j] == labels[a] {
                pi.push(j);
            } else {
                ni.push(j);
            }
        }
        if pi.is_empty() || ni.is_empty() {
            return Err(Error::Batch(format!("anchor {a} lacks a positive or a negative")));
        }
        let ps: Vec<f64> = pi.iter().map(|&j| sim[a * n + j] as f64).collect();
        let ns: Vec<f64> = ni.iter().map(|&j| sim[a * n + j] as f64).collect();
        let (l, dp, dn) = anchor_loss(&ps, &ns, cfg);
        total += l;
        for (j, g) in pi.iter().zip(dp).chain(ni.iter().zip(dn)) {
            grad[a * n + j] += g / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}
