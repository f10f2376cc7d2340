//! Metric-learning training: m-per-class sampling, batch-hard mining,
//! Circle Loss and Adam with gradient accumulation.

mod adam;
mod loss;
mod mining;
mod sampler;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

pub use adam::{Adam, OptimizerConfig};
pub use loss::{
    all_pairs_circle_loss, anchor_loss, circle_loss, circle_loss_with_grad, pair_loss, softplus,
    CircleLossConfig,
};
pub use mining::{mine_batch_hard, similarity, similarity_matrix, MinedPair, MinedPairs};
pub use sampler::{check_corpus, sample_epoch, SamplerConfig};

use crate::corpus::CorpusIndex;
use crate::encoder::{write_checkpoint, Encoder, Parameters};
use crate::tokenize::EncodedFunction;
use crate::{Error, Result};

/// Everything the training loop needs besides the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sampler: SamplerConfig,
    pub loss: CircleLossConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Circle Loss over every pair instead of the mined hardest pairs.
    pub all_pairs: bool,
    /// Extra checkpoint every this many optimizer steps.
    pub save_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            loss: CircleLossConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 18,
            all_pairs: false,
            save_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()
    }
}

/// Loss of one batch and the parameter gradient of that loss.
///
/// `dropout_seeds` gives one seed per input; `None` runs without dropout.
pub fn batch_gradient(
    encoder: &Encoder,
    inputs: &[&EncodedFunction],
    labels: &[usize],
    cfg: &TrainConfig,
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, Parameters)> {
    let caches = inputs
        .par_iter()
        .enumerate()
        .map(|(i, e)| encoder.forward_train(e, dropout_seeds.map(|s| s[i])))
        .collect::<Result<Vec<_>>>()?;
    let embs: Vec<&[f32]> = caches.iter().map(|c| c.embedding()).collect();
    let dim = encoder.config.embed_dim;
    let mut d_emb = vec![vec![0.0f64; dim]; embs.len()];
    let mut add = |dst: usize, src: usize, g: f64| {
        for (d, &e) in d_emb[dst].iter_mut().zip(embs[src]) {
            *d += g * e as f64;
        }
    };
    let loss = if cfg.all_pairs {
        let n = embs.len();
        let sim = similarity_matrix(&embs);
        let (loss, ds) = all_pairs_circle_loss(&sim, labels, &cfg.loss)?;
        for i in 0..n {
            for j in 0..n {
                let g = ds[i * n + j];
                if g != 0.0 {
                    add(i, j, g);
                    add(j, i, g);
                }
            }
        }
        loss
    } else {
        let pairs = mine_batch_hard(&embs, labels)?;
        let (loss, grads) = circle_loss_with_grad(&pairs, &cfg.loss);
        for (a, (p, (gp, gn))) in pairs.anchors.iter().zip(grads).enumerate() {
            add(a, p.positive, gp);
            add(p.positive, a, gp);
            add(a, p.negative, gn);
            add(p.negative, a, gn);
        }
        loss
    };
    let per_item: Vec<Parameters> = caches
        .par_iter()
        .zip(&d_emb)
        .map(|(cache, d)| {
            let mut g = encoder.params.zeros_like();
            let d: Vec<f32> = d.iter().map(|&v| v as f32).collect();
            encoder.backward(cache, &d, &mut g);
            g
        })
        .collect();
    // fixed summation order keeps results independent of the thread count
    let mut total = encoder.params.zeros_like();
    for g in &per_item {
        total.add_assign(g);
    }
    Ok((loss, total))
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lr: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub batch_losses: Vec<f64>,
    pub mean_loss: f64,
    pub optimizer_steps: u64,
}

/// Owns the model, optimizer state and any partially accumulated gradient.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub encoder: Encoder,
    pub adam: Adam,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: u64,
    pending: Parameters,
    pending_micro: usize,
    pending_loss: f64,
}

fn dropout_seed(seed: u64, epoch: u64, batch: usize, item: usize) -> u64 {
    let mut bytes = [0u8; 32];
    for (chunk, v) in bytes.chunks_mut(8).zip([seed, epoch, batch as u64, item as u64]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    xxh3_64(&bytes)
}

impl Trainer {
    pub fn new(encoder: Encoder, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(config.optimizer, &encoder.params)?;
        let pending = encoder.params.zeros_like();
        Ok(Self {
            encoder,
            adam,
            config,
            epoch: 0,
            pending,
            pending_micro: 0,
            pending_loss: 0.0,
        })
    }

    /// Adds one micro-batch to the accumulator and steps the optimizer when
    /// `accumulation_steps` micro-batches are in. `batch` only labels errors.
    pub fn micro_batch(
        &mut self,
        inputs: &[&EncodedFunction],
        labels: &[usize],
        dropout_seeds: Option<&[u64]>,
        batch: usize,
    ) -> Result<(f64, Option<StepRecord>)> {
        let (loss, mut grads) = batch_gradient(&self.encoder, inputs, labels, &self.config, dropout_seeds)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", batch });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite { what: "gradient", batch });
        }
        let k = self.config.optimizer.accumulation_steps;
        grads.scale(1.0 / k as f32);
        self.pending.add_assign(&grads);
        self.pending_micro += 1;
        self.pending_loss += loss;
        if self.pending_micro < k {
            return Ok((loss, None));
        }
        self.adam.update(&mut self.encoder.params, &self.pending);
        self.pending.fill(0.0);
        let record = StepRecord {
            step: self.adam.step,
            epoch: self.epoch,
            loss: self.pending_loss / k as f64,
            lr: self.config.optimizer.learning_rate,
        };
        self.pending_micro = 0;
        self.pending_loss = 0.0;
        Ok((loss, Some(record)))
    }

    /// Runs one epoch of sampled micro-batches over `data`, whose positions
    /// line up with `index`. Leftover accumulation carries into the next epoch.
    pub fn train_epoch<F>(&mut self, data: &[EncodedFunction], index: &CorpusIndex, mut on_step: F) -> Result<EpochReport>
    where
        F: FnMut(&StepRecord, &Encoder) -> Result<()>,
    {
        if data.len() != index.len() {
            return Err(Error::Batch(format!("{} encodings for {} indexed functions", data.len(), index.len())));
        }
        let batches = sample_epoch(index, &self.config.sampler, self.epoch)?;
        let steps_before = self.adam.step;
        let mut losses = Vec::with_capacity(batches.len());
        for (b, batch) in batches.iter().enumerate() {
            let inputs: Vec<&EncodedFunction> = batch.iter().map(|&p| &data[p]).collect();
            let labels: Vec<usize> = batch.iter().map(|&p| index.label_of(p)).collect();
            let seeds: Vec<u64> = (0..batch.len())
                .map(|i| dropout_seed(self.config.sampler.seed, self.epoch, b, i))
                .collect();
            let (loss, record) = self.micro_batch(&inputs, &labels, Some(&seeds), b)?;
            losses.push(loss);
            if let Some(r) = record {
                on_step(&r, &self.encoder)?;
            }
        }
        let report = EpochReport {
            epoch: self.epoch,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            batch_losses: losses,
            optimizer_steps: self.adam.step - steps_before,
        };
        self.epoch += 1;
        Ok(report)
    }
}

/// Writes an encoder checkpoint to `path`.
pub fn save_checkpoint(path: &Path, encoder: &Encoder) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, encoder)?;
    w.flush()?;
    Ok(())
}

/// Trains for `config.epochs` epochs, writing `train_log.jsonl`,
/// `checkpoint.fasr` after every epoch and `checkpoint-step-N.fasr` when
/// `save_every` is set.
pub fn fit(trainer: &mut Trainer, data: &[EncodedFunction], index: &CorpusIndex, out_dir: &Path) -> Result<Vec<EpochReport>> {
    std::fs::create_dir_all(out_dir)?;
    let mut log = BufWriter::new(File::create(out_dir.join("train_log.jsonl"))?);
    let save_every = trainer.config.save_every;
    let mut reports = Vec::new();
    for _ in 0..trainer.config.epochs {
        let report = trainer.train_epoch(data, index, |r, enc| {
            serde_json::to_writer(&mut log, r)?;
            log.write_all(b"\n")?;
            if save_every.is_some_and(|n| n > 0 && r.step % n == 0) {
                save_checkpoint(&step_checkpoint(out_dir, r.step), enc)?;
            }
            Ok(())
        })?;
        log.flush()?;
        save_checkpoint(&out_dir.join("checkpoint.fasr"), &trainer.encoder)?;
        reports.push(report);
    }
    Ok(reports)
}

fn step_checkpoint(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint-step-{step}.fasr"))
}
