//! Label grouping shared by the sampler and the search-pool builder.

use std::collections::HashMap;

/// Groups corpus positions by label. Labels keep first-occurrence order so
/// every downstream draw is reproducible from the corpus order alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusIndex {
    labels: Vec<String>,
    members: Vec<Vec<usize>>,
    label_of: Vec<usize>,
}

impl CorpusIndex {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut out = Self {
            labels: Vec::new(),
            members: Vec::new(),
            label_of: Vec::new(),
        };
        for (pos, label) in labels.into_iter().enumerate() {
            let label = label.as_ref();
            let id = *ids.entry(label.to_string()).or_insert_with(|| {
                out.labels.push(label.to_string());
                out.members.push(Vec::new());
                out.labels.len() - 1
            });
            out.members[id].push(pos);
            out.label_of.push(id);
        }
        out
    }

    /// Number of indexed functions.
    pub fn len(&self) -> usize {
        self.label_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label_of.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_name(&self, label: usize) -> &str {
        &self.labels[label]
    }

    /// Dense label id of corpus position `pos`.
    pub fn label_of(&self, pos: usize) -> usize {
        self.label_of[pos]
    }

    pub fn members(&self, label: usize) -> &[usize] {
        &self.members[label]
    }

    pub fn label_ids(&self) -> &[usize] {
        &self.label_of
    }
}
