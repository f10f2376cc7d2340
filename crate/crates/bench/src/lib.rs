//! Inputs shared by the benchmarks.

use faser_core::fixtures::{generate, SynthConfig};
use faser_core::index::EmbeddingStore;
use faser_core::ingest::{to_function_string, FunctionString};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Function strings from the default synthetic corpus shape.
pub fn function_strings(labels: usize) -> Vec<FunctionString> {
    let cfg = SynthConfig {
        num_labels: labels,
        ..SynthConfig::default()
    };
    generate(&cfg).expect("valid config").iter().map(to_function_string).collect()
}

pub fn random_values(seed: u64, n: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

pub fn unit_vector(seed: u64, dim: usize) -> Vec<f32> {
    let v = random_values(seed, dim);
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// `rows` random unit vectors of dimension `dim`.
pub fn random_store(rows: usize, dim: usize) -> EmbeddingStore {
    let mut store = EmbeddingStore::new(dim, 0);
    for r in 0..rows {
        store
            .push(r as u64, format!("f{r}"), 0, &unit_vector(r as u64 + 1, dim))
            .expect("unit row");
    }
    store
}
