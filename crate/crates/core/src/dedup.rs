//! Two-stage deduplication: exact (label, body) duplicates first, then
//! labels left with a single distinct body.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::Xxh3;

use crate::normalize::NormalizedFunction;

/// 128-bit digest of `body + "\0" + label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DedupKey(pub u128);

impl DedupKey {
    pub fn new(body: &str, label: &str) -> Self {
        let mut h = Xxh3::new();
        h.update(body.as_bytes());
        h.update(b"\x00");
        h.update(label.as_bytes());
        Self(h.digest128())
    }

    pub fn of(f: &NormalizedFunction) -> Self {
        Self::new(&f.body, &f.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub input_count: usize,
    pub exact_dup_removed: usize,
    pub singleton_removed: usize,
    pub output_count: usize,
    pub removal_fraction: f64,
}

impl DedupReport {
    fn new(input_count: usize, exact_dup_removed: usize, singleton_removed: usize) -> Self {
        let output_count = input_count - exact_dup_removed - singleton_removed;
        let removal_fraction = if input_count == 0 {
            0.0
        } else {
            1.0 - output_count as f64 / input_count as f64
        };
        Self {
            input_count,
            exact_dup_removed,
            singleton_removed,
            output_count,
            removal_fraction,
        }
    }
}

/// Keeps the first occurrence of every distinct (label, body) pair.
/// Returns the survivors and the number removed.
pub fn dedup_exact(fns: Vec<NormalizedFunction>) -> (Vec<NormalizedFunction>, usize) {
    let input = fns.len();
    let mut kept: Vec<NormalizedFunction> = Vec::with_capacity(input);
    // digest -> indices into `kept`; more than one entry only on a collision
    let mut seen: HashMap<DedupKey, Vec<usize>> = HashMap::with_capacity(input);
    for f in fns {
        let slot = seen.entry(DedupKey::of(&f)).or_default();
        let dup = slot
            .iter()
            .any(|&i| kept[i].body == f.body && kept[i].label == f.label);
        if !dup {
            slot.push(kept.len());
            kept.push(f);
        }
    }
    let removed = input - kept.len();
    (kept, removed)
}

/// Drops every label with fewer than two distinct bodies.
pub fn prune_singletons(fns: Vec<NormalizedFunction>) -> (Vec<NormalizedFunction>, usize) {
    let mut bodies: HashMap<&str, Vec<&str>> = HashMap::new();
    for f in &fns {
        let b = bodies.entry(f.label.as_str()).or_default();
        if b.len() < 2 && !b.contains(&f.body.as_str()) {
            b.push(f.body.as_str());
        }
    }
    let keep: Vec<bool> = fns.iter().map(|f| bodies[f.label.as_str()].len() >= 2).collect();
    let input = fns.len();
    let kept: Vec<NormalizedFunction> = fns
        .into_iter()
        .zip(keep)
        .filter_map(|(f, k)| k.then_some(f))
        .collect();
    let removed = input - kept.len();
    (kept, removed)
}

pub fn dedup(fns: Vec<NormalizedFunction>) -> (Vec<NormalizedFunction>, DedupReport) {
    let input = fns.len();
    let (fns, exact) = dedup_exact(fns);
    let (fns, singletons) = prune_singletons(fns);
    (fns, DedupReport::new(input, exact, singletons))
}
