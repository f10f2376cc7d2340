//! Vocabulary construction and fixed-length encoding of function strings.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::NormalizedFunction;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const RESERVED: [&str; 3] = ["<PAD>", "<UNK>", "<CLS>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
    pub min_frequency: usize,
}

impl Vocabulary {
    fn from_tokens(corpus_tokens: Vec<String>, min_frequency: usize) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut ids = HashMap::with_capacity(corpus_tokens.len());
        for tok in corpus_tokens {
            if RESERVED.contains(&tok.as_str()) {
                return Err(Error::Vocabulary(format!("reserved token {tok} in corpus position")));
            }
            let id = tokens.len() as u32;
            if ids.insert(tok.clone(), id).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {tok}")));
            }
            tokens.push(tok);
        }
        Ok(Self {
            ids,
            tokens,
            min_frequency,
        })
    }

    /// Number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Corpus tokens in id order, reserved entries excluded.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        if lines.len() < RESERVED.len()
            || lines.iter().zip(RESERVED).any(|(l, want)| l != want)
        {
            return Err(Error::Format {
                kind: "vocabulary",
                reason: "first three lines must be <PAD>, <UNK>, <CLS>".into(),
            });
        }
        let rest = lines.into_iter().skip(RESERVED.len()).collect();
        Self::from_tokens(rest, 1).map_err(|e| Error::Format {
            kind: "vocabulary",
            reason: e.to_string(),
        })
    }
}

/// Builds a vocabulary of every token seen at least `min_frequency` times.
///
/// Ids are assigned by descending frequency, ties broken lexicographically,
/// so the result depends only on the corpus multiset.
pub fn build_vocab<'a, I>(corpus: I, min_frequency: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a NormalizedFunction>,
{
    let mut counts: HashMap<&'a str, usize> = HashMap::new();
    let mut seen_any = false;
    for f in corpus {
        seen_any = true;
        for t in f.tokens() {
            *counts.entry(t).or_default() += 1;
        }
    }
    if !seen_any {
        return Err(Error::EmptyCorpus);
    }
    let mut entries: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_frequency && !RESERVED.contains(t))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t.to_string()).collect(), min_frequency)
}

/// Which positions receive global attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlobalPolicy {
    /// Only the CLS position.
    #[default]
    ClsOnly,
    /// CLS plus every `k`-th real token position.
    EveryK { k: usize },
}

impl GlobalPolicy {
    fn is_global(&self, pos: usize) -> bool {
        match *self {
            Self::ClsOnly => pos == 0,
            Self::EveryK { k } => pos == 0 || (k > 0 && pos.is_multiple_of(k)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFunction {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
    pub global_mask: Vec<bool>,
    pub true_length: usize,
}

impl EncodedFunction {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Builds an encoding straight from ids (CLS is not added).
    pub fn from_ids(ids: &[u32], input_len: usize, policy: GlobalPolicy) -> Self {
        let true_length = ids.len().min(input_len);
        let mut out = Self {
            ids: vec![PAD; input_len],
            attention_mask: vec![false; input_len],
            global_mask: vec![false; input_len],
            true_length,
        };
        out.ids[..true_length].copy_from_slice(&ids[..true_length]);
        out.attention_mask[..true_length].fill(true);
        for (p, g) in out.global_mask[..true_length].iter_mut().enumerate() {
            *g = policy.is_global(p);
        }
        out
    }
}

/// `[CLS] + token ids`, head-truncated to `input_len` and padded.
pub fn encode(
    f: &NormalizedFunction,
    vocab: &Vocabulary,
    input_len: usize,
    policy: GlobalPolicy,
) -> EncodedFunction {
    assert!(input_len >= 2, "input length must be at least 2");
    let ids: Vec<u32> = std::iter::once(CLS)
        .chain(f.tokens().map(|t| vocab.id(t)))
        .take(input_len)
        .collect();
    EncodedFunction::from_ids(&ids, input_len, policy)
}

/// Inverse of [`encode`] for the real (non-CLS, non-PAD) positions.
pub fn decode(enc: &EncodedFunction, vocab: &Vocabulary) -> Vec<String> {
    enc.ids[1..enc.true_length]
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(RESERVED[UNK as usize]).to_string())
        .collect()
}
