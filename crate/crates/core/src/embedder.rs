//! Sentence embeddings for the diversity filter.
//!
//! [`RemoteEmbedder`] calls an embedding endpoint
//! (`{"model", "input": [..]}` → `{"data": [{"embedding": [..]}]}`).
//! [`HashedBigramEmbedder`] is a deterministic local stand-in: word bigrams,
//! padded with sentence boundary markers, hashed into 256 buckets.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache::ContentStore;
use crate::hashing::fnv1a64;
use crate::http::{HttpService, ServiceError};
use crate::text::words;

pub const FALLBACK_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Remote,
    Fallback,
}

/// A unit-normalized vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    vector: Vec<f64>,
    source: EmbeddingSource,
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("malformed embedding response: {0}")]
    Malformed(String),
    #[error("cache I/O: {0}")]
    Cache(#[from] std::io::Error),
}

impl Embedding {
    /// Normalizes `raw` to unit L2 norm.
    pub fn normalized(raw: Vec<f64>, source: EmbeddingSource) -> Result<Self, EmbedError> {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroVector);
        }
        Ok(Embedding {
            vector: raw.into_iter().map(|x| x / norm).collect(),
            source,
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }
}

/// `1 - a·b`, in `[0, 2]` for unit vectors.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

pub trait Embedder: Send + Sync {
    /// One embedding per text, in input order, all of one dimension.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HashedBigramEmbedder;

const BOS: &str = "<s>";
const EOS: &str = "</s>";

impl HashedBigramEmbedder {
    pub fn embed_one(text: &str) -> Embedding {
        let mut counts = vec![0.0f64; FALLBACK_DIM];
        let toks = words(text);
        let padded: Vec<&str> = std::iter::once(BOS)
            .chain(toks.iter().map(String::as_str))
            .chain(std::iter::once(EOS))
            .collect();
        let mut key = Vec::new();
        for pair in padded.windows(2) {
            key.clear();
            key.extend_from_slice(pair[0].as_bytes());
            key.push(0x1f);
            key.extend_from_slice(pair[1].as_bytes());
            counts[(fnv1a64(&key) % FALLBACK_DIM as u64) as usize] += 1.0;
        }
        Embedding::normalized(counts, EmbeddingSource::Fallback).expect("at least one bigram is always hashed")
    }
}

impl Embedder for HashedBigramEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        Ok(texts.iter().map(|t| Self::embed_one(t)).collect())
    }
}

/// Embedding endpoint client, caching vectors in the shared content store.
pub struct RemoteEmbedder {
    model: String,
    service: HttpService,
    cache: Option<Arc<ContentStore>>,
}

impl RemoteEmbedder {
    pub fn new(model: impl Into<String>, service: HttpService, cache: Option<Arc<ContentStore>>) -> Self {
        RemoteEmbedder {
            model: model.into(),
            service,
            cache,
        }
    }

    fn cache_key(&self, text: &str) -> String {
        ContentStore::key_for(&json!({"kind": "embedding", "model": self.model, "text": text}))
    }
}

impl Embedder for RemoteEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        let mut slots: Vec<Option<Embedding>> = match &self.cache {
            Some(c) => texts.iter().map(|t| c.get(&self.cache_key(t))).collect(),
            None => vec![None; texts.len()],
        };
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| slots[i].is_none()).collect();
        if !missing.is_empty() {
            let input: Vec<&str> = missing.iter().map(|&i| texts[i].as_str()).collect();
            let resp = self.service.post(&json!({"model": self.model, "input": input}))?;
            let data = resp
                .get("data")
                .and_then(Value::as_array)
                .ok_or_else(|| EmbedError::Malformed("missing `data` array".into()))?;
            if data.len() != missing.len() {
                return Err(EmbedError::Malformed(format!(
                    "expected {} embeddings, got {}",
                    missing.len(),
                    data.len()
                )));
            }
            for (&slot, item) in missing.iter().zip(data) {
                let raw: Vec<f64> = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .and_then(|a| a.iter().map(Value::as_f64).collect())
                    .ok_or_else(|| EmbedError::Malformed("item without numeric `embedding`".into()))?;
                let emb = Embedding::normalized(raw, EmbeddingSource::Remote)?;
                if let Some(c) = &self.cache {
                    c.put(&self.cache_key(&texts[slot]), &emb)?;
                }
                slots[slot] = Some(emb);
            }
        }
        let out: Vec<Embedding> = slots.into_iter().map(|s| s.expect("filled")).collect();
        if let Some(first) = out.first() {
            if let Some(bad) = out.iter().find(|e| e.dim() != first.dim()) {
                return Err(EmbedError::DimMismatch(first.dim(), bad.dim()));
            }
        }
        Ok(out)
    }
}
