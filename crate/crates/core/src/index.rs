//! Persistent embedding store with exact top-k cosine search.
//!
//! ```text
//! "FASX" | version u32 | dim u32 | count u64 | checkpoint fingerprint u128 |
//!   per row: id u64, label len u32, label bytes, meta digest u128, f32 × dim
//! ```
//! All integers and floats are little-endian.

use std::collections::HashSet;
use std::io::{Read, Write};

use xxhash_rust::xxh3::xxh3_128;

use crate::encoder::{fingerprint, Encoder};
use crate::ingest::FunctionMeta;
use crate::normalize::NormalizedFunction;
use crate::tokenize::{encode, GlobalPolicy, Vocabulary};
use crate::train::similarity;
use crate::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"FASX";
pub const STORE_VERSION: u32 = 1;
const UNIT_TOL: f32 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreRow {
    pub id: u64,
    pub label: String,
    pub meta_digest: u128,
}

/// Rows keep insertion order, which is also the tie order of [`top_k`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    fingerprint: u128,
    rows: Vec<StoreRow>,
    vectors: Vec<f32>,
    ids: HashSet<u64>,
}

pub fn meta_digest(meta: &FunctionMeta) -> u128 {
    let fields = [
        meta.binary_id.as_str(),
        meta.architecture.as_str(),
        &meta.bitness.to_string(),
        meta.compiler.as_str(),
        meta.opt_level.as_str(),
    ];
    xxh3_128(fields.join("\0").as_bytes())
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "embedding store",
        reason: reason.into(),
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(b)
}

impl EmbeddingStore {
    pub fn new(dim: usize, fingerprint: u128) -> Self {
        Self {
            dim,
            fingerprint,
            rows: Vec::new(),
            vectors: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> u128 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[StoreRow] {
        &self.rows
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.rows.iter().position(|r| r.id == id)
    }

    pub fn push(&mut self, id: u64, label: String, meta_digest: u128, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let norm = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(bad(format!("row {id} has norm {norm}")));
        }
        if !self.ids.insert(id) {
            return Err(bad(format!("duplicate record id {id}")));
        }
        self.rows.push(StoreRow { id, label, meta_digest });
        self.vectors.extend_from_slice(vector);
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        w.write_all(&self.fingerprint.to_le_bytes())?;
        for (i, row) in self.rows.iter().enumerate() {
            w.write_all(&row.id.to_le_bytes())?;
            let label = row.label.as_bytes();
            let len = u32::try_from(label.len()).map_err(|_| bad("label too long"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(label)?;
            w.write_all(&row.meta_digest.to_le_bytes())?;
            for v in self.vector(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        if &read_array::<_, 4>(&mut r)? != STORE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != STORE_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let count = u64::from_le_bytes(read_array(&mut r)?);
        let fp = u128::from_le_bytes(read_array(&mut r)?);
        let mut store = Self::new(dim, fp);
        for _ in 0..count {
            let id = u64::from_le_bytes(read_array(&mut r)?);
            let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let mut label = vec![0u8; len];
            r.read_exact(&mut label).map_err(|e| bad(format!("truncated label: {e}")))?;
            let label = String::from_utf8(label).map_err(|_| bad("label is not UTF-8"))?;
            let digest = u128::from_le_bytes(read_array(&mut r)?);
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                vector.push(f32::from_le_bytes(read_array(&mut r)?));
            }
            store.push(id, label, digest, &vector)?;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        Ok(store)
    }
}

/// Embeds every function; row ids are corpus positions.
pub fn build_index(
    corpus: &[NormalizedFunction],
    encoder: &Encoder,
    vocab: &Vocabulary,
    policy: GlobalPolicy,
    batch_size: usize,
) -> Result<EmbeddingStore> {
    if encoder.config.vocab_size != vocab.len() {
        return Err(Error::Vocabulary(format!(
            "checkpoint expects {} tokens, vocabulary has {}",
            encoder.config.vocab_size,
            vocab.len()
        )));
    }
    let mut store = EmbeddingStore::new(encoder.config.embed_dim, fingerprint(encoder));
    for (c, chunk) in corpus.chunks(batch_size.max(1)).enumerate() {
        let encoded: Vec<_> = chunk
            .iter()
            .map(|f| encode(f, vocab, encoder.config.input_len, policy))
            .collect();
        for (i, (f, e)) in chunk.iter().zip(encoder.embed_batch(&encoded)?).enumerate() {
            let id = (c * batch_size.max(1) + i) as u64;
            store.push(id, f.label.clone(), meta_digest(&f.meta), e.as_slice())?;
        }
    }
    Ok(store)
}

/// Exact `k` best rows by cosine, descending; ties keep row order.
pub fn top_k(store: &EmbeddingStore, query: &[f32], k: usize) -> Result<Vec<(u64, f32)>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if query.len() != store.dim {
        return Err(Error::DimMismatch {
            expected: store.dim,
            got: query.len(),
        });
    }
    let mut scored: Vec<(usize, f32)> = (0..store.len()).map(|r| (r, similarity(query, store.vector(r)))).collect();
    let order = |a: &(usize, f32), b: &(usize, f32)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(scored.into_iter().map(|(r, s)| (store.rows[r].id, s)).collect())
}
