use std::collections::VecDeque;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusIndex;
use crate::{Error, Result};

/// m-per-class batch sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Examples drawn per label in a batch.
    pub m: usize,
    pub batch_size: usize,
    pub functions_per_epoch: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            m: 2,
            batch_size: 8,
            functions_per_epoch: 100_000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn labels_per_batch(&self) -> usize {
        self.batch_size / self.m
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.functions_per_epoch / self.batch_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config(format!("sampler m must be >= 2, got {}", self.m)));
        }
        if !self.batch_size.is_multiple_of(self.m) {
            return Err(Error::Config(format!(
                "batch_size {} is not divisible by m {}",
                self.batch_size, self.m
            )));
        }
        if self.labels_per_batch() < 2 {
            return Err(Error::Config("a batch must hold at least two labels".into()));
        }
        if self.batches_per_epoch() == 0 {
            return Err(Error::Config(format!(
                "functions_per_epoch {} is smaller than batch_size {}",
                self.functions_per_epoch, self.batch_size
            )));
        }
        Ok(())
    }
}

/// Checks the corpus can feed the sampler at all.
pub fn check_corpus(index: &CorpusIndex, cfg: &SamplerConfig) -> Result<()> {
    cfg.validate()?;
    for label in 0..index.num_labels() {
        let have = index.members(label).len();
        if have < cfg.m {
            return Err(Error::TooFewExamples {
                label: index.label_name(label).to_string(),
                have,
                need: cfg.m,
            });
        }
    }
    if index.num_labels() < cfg.labels_per_batch() {
        return Err(Error::CorpusTooSmall {
            required: cfg.labels_per_batch(),
            available: index.num_labels(),
        });
    }
    Ok(())
}

/// All batches of one epoch as lists of corpus positions, grouped `m` at a
/// time by label.
///
/// Labels are drawn from a shuffled queue without replacement; when the
/// queue runs dry a fresh permutation is appended. A label already present
/// in the batch being filled is pushed back to the front of the queue
/// for the next batch.
pub fn sample_epoch(index: &CorpusIndex, cfg: &SamplerConfig, epoch: u64) -> Result<Vec<Vec<usize>>> {
    check_corpus(index, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch);
    let per = cfg.labels_per_batch();
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut batches = Vec::with_capacity(cfg.batches_per_epoch());
    for _ in 0..cfg.batches_per_epoch() {
        let mut chosen: Vec<usize> = Vec::with_capacity(per);
        let mut deferred = Vec::new();
        while chosen.len() < per {
            if queue.is_empty() {
                let mut perm: Vec<usize> = (0..index.num_labels()).collect();
                perm.shuffle(&mut rng);
                queue.extend(perm);
            }
            let label = queue.pop_front().expect("queue refilled");
            if chosen.contains(&label) {
                deferred.push(label);
            } else {
                chosen.push(label);
            }
        }
        for label in deferred.into_iter().rev() {
            queue.push_front(label);
        }
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for label in chosen {
            let members = index.members(label);
            for i in index::sample(&mut rng, members.len(), cfg.m) {
                batch.push(members[i]);
            }
        }
        batches.push(batch);
    }
    Ok(batches)
}
