//! Instance embedders used for cluster batching.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BatchingError, EmbeddingVector};
use crate::context::serialize_instance;
use crate::model::{DataInstance, Task};

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BatchingError>;
}

/// Embeds the serialized form of an instance (both records for pairs).
pub fn embed(
    instance: &DataInstance,
    task: &Task,
    embedder: &dyn Embedder,
) -> Result<EmbeddingVector, BatchingError> {
    let text = serialize_instance(instance, task)?.joined();
    let mut out = embedder.embed_texts(&[text])?;
    out.pop().ok_or(BatchingError::EmbedderUnavailable(
        "embedder returned no vector".into(),
    ))
}

pub fn embed_all(
    instances: &[DataInstance],
    task: &Task,
    embedder: &dyn Embedder,
) -> Result<Vec<EmbeddingVector>, BatchingError> {
    let texts = instances
        .iter()
        .map(|i| serialize_instance(i, task).map(|s| s.joined()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = embedder.embed_texts(&texts)?;
    if out.len() != texts.len() {
        return Err(BatchingError::EmbedderUnavailable(format!(
            "asked for {} vectors, got {}",
            texts.len(),
            out.len()
        )));
    }
    Ok(out)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Hashed bag of lowercase alphanumeric tokens, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEmbedder {
    pub dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dimension: 256 }
    }
}

impl HashEmbedder {
    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut counts = vec![0.0; self.dimension];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let bucket = fnv1a(token.to_lowercase().as_bytes()) % self.dimension as u64;
            counts[bucket as usize] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|c| *c /= norm);
        }
        EmbeddingVector::new(counts).expect("hash embedding entries are finite")
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BatchingError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// HTTP embedding service: POST `{"texts": [...]}` → `{"vectors": [[...], ...]}`.
pub struct RemoteEmbedder {
    url: String,
    dimension: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, dimension: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        RemoteEmbedder {
            url: url.into(),
            dimension,
            agent,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BatchingError> {
        let unavailable = |e: ureq::Error| BatchingError::EmbedderUnavailable(e.to_string());
        let body: EmbedResponse = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { texts })
            .map_err(unavailable)?
            .body_mut()
            .read_json()
            .map_err(unavailable)?;
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(BatchingError::DimensionMismatch {
                        expected: self.dimension,
                        found: v.len(),
                    });
                }
                EmbeddingVector::new(v)
            })
            .collect()
    }
}
