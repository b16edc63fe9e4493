//! Item knowledge base: rendered key-value descriptions, deterministic
//! hashed text embeddings, and top-K cosine retrieval over user histories.
//!
//! The embedder is a seeded bag-of-tokens-and-bigrams hash; it stands behind
//! the same id -> unit-vector interface a real LM encoder would, so the rest
//! of the pipeline never sees the difference.

use crate::dataset::ItemProfile;
use crate::hashing::fnv1a64;
use crate::numerics::{read_container, write_container, Tensor};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding dim {0} too small (need >= 16)")]
    DimTooSmall(usize),
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),
    #[error("item id {0:?} not present in knowledge base")]
    MissingItem(String),
    #[error("item has no feature fields")]
    NoFields,
    #[error("k must be >= 1")]
    ZeroK,
    #[error(transparent)]
    Storage(#[from] crate::numerics::NumericsError),
}

/// "The <field> is <value>." per field, title first, fixed schema order.
pub fn render_description(item: &ItemProfile) -> Result<String, KbError> {
    if item.title.is_empty() && item.features.is_empty() {
        return Err(KbError::NoFields);
    }
    let mut sentences = Vec::with_capacity(1 + item.features.len());
    if !item.title.is_empty() {
        sentences.push(format!("The title is {}.", item.title));
    }
    for (field, value) in &item.features {
        sentences.push(format!("The {field} is {value}."));
    }
    Ok(sentences.join(" "))
}

fn lower_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Deterministic unit-norm embedding: every token and adjacent-token bigram
/// hashes to a signed coordinate bucket.
pub fn embed_text(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>, KbError> {
    if dim < 16 {
        return Err(KbError::DimTooSmall(dim));
    }
    let tokens = lower_tokens(text);
    if tokens.is_empty() {
        return Err(KbError::EmptyText);
    }
    let mut v = vec![0.0f64; dim];
    let mut bump = |s: &str| {
        let h = fnv1a64(seed, s.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    };
    for t in &tokens {
        bump(t);
    }
    for pair in tokens.windows(2) {
        bump(&format!("{} {}", pair[0], pair[1]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // hashed signs cancelled exactly; keep a deterministic fallback axis
        let h = fnv1a64(seed ^ 1, tokens[0].as_bytes());
        v[(h % dim as u64) as usize] = 1.0;
        return Ok(v);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// Item-id -> unit-norm semantic vector index with a description cache.
pub struct KnowledgeBase {
    dim: usize,
    seed: u64,
    entries: BTreeMap<String, Vec<f64>>,
    descriptions: BTreeMap<String, String>,
}

pub const DEFAULT_KB_DIM: usize = 256;

impl KnowledgeBase {
    pub fn build(items: &[ItemProfile], dim: usize, seed: u64) -> Result<Self, KbError> {
        let mut entries = BTreeMap::new();
        let mut descriptions = BTreeMap::new();
        for item in items {
            if entries.contains_key(&item.item_id) {
                return Err(KbError::DuplicateItem(item.item_id.clone()));
            }
            let desc = render_description(item)?;
            let vec = embed_text(&desc, dim, seed)?;
            entries.insert(item.item_id.clone(), vec);
            descriptions.insert(item.item_id.clone(), desc);
        }
        Ok(KnowledgeBase {
            dim,
            seed,
            entries,
            descriptions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector(&self, item_id: &str) -> Result<&[f64], KbError> {
        self.entries
            .get(item_id)
            .map(|v| v.as_slice())
            .ok_or_else(|| KbError::MissingItem(item_id.to_string()))
    }

    pub fn description(&self, item_id: &str) -> Option<&str> {
        self.descriptions.get(item_id).map(|s| s.as_str())
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64, KbError> {
        let (va, vb) = (self.vector(a)?, self.vector(b)?);
        Ok(va.iter().zip(vb).map(|(x, y)| x * y).sum())
    }

    /// The K history entries most similar to the target, descending
    /// similarity, ties broken toward more recent history positions. When the
    /// history has at most K entries all are returned. Duplicate ids keep
    /// their most recent occurrence.
    pub fn retrieve_topk(
        &self,
        target_id: &str,
        history: &[String],
        k: usize,
    ) -> Result<Vec<(String, f64)>, KbError> {
        if k == 0 {
            return Err(KbError::ZeroK);
        }
        let target = self.vector(target_id)?;
        let mut last_pos: BTreeMap<&str, usize> = BTreeMap::new();
        for (pos, id) in history.iter().enumerate() {
            // presence check up front so missing ids fail even when truncated
            self.vector(id)?;
            last_pos.insert(id.as_str(), pos);
        }
        let mut scored: Vec<(String, f64, usize)> = last_pos
            .into_iter()
            .map(|(id, pos)| {
                let v = &self.entries[id];
                let sim: f64 = v.iter().zip(target).map(|(x, y)| x * y).sum();
                (id.to_string(), sim, pos)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.2.cmp(&a.2))
        });
        scored.truncate(k);
        Ok(scored.into_iter().map(|(id, sim, _)| (id, sim)).collect())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), KbError> {
        let meta = serde_json::json!({
            "kind": "knowledge_base",
            "dim": self.dim,
            "seed": self.seed,
            "descriptions": self.descriptions,
        });
        let tensors: Vec<(String, Tensor)> = self
            .entries
            .iter()
            .map(|(id, v)| (id.clone(), Tensor::vector(v.clone())))
            .collect();
        let refs: Vec<(String, &Tensor)> =
            tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        write_container(path, &meta, &refs)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, KbError> {
        let (meta, tensors) = read_container(path)?;
        let dim = meta["dim"].as_u64().unwrap_or(0) as usize;
        let seed = meta["seed"].as_u64().unwrap_or(0);
        let descriptions: BTreeMap<String, String> =
            serde_json::from_value(meta["descriptions"].clone()).unwrap_or_default();
        let entries = tensors
            .into_iter()
            .map(|(id, t)| (id, t.data().to_vec()))
            .collect();
        Ok(KnowledgeBase {
            dim,
            seed,
            entries,
            descriptions,
        })
    }
}
