//! Partitioning instances into prompt batches.
//!
//! Random batching shuffles the ids with a seeded ChaCha8 generator and cuts
//! the shuffled list into consecutive chunks. Cluster batching first groups the
//! instances with k-means over their embeddings, then batches randomly within
//! each cluster so that no batch spans two clusters.

mod embed;
mod kmeans;

pub use embed::{embed, embed_all, Embedder, HashEmbedder, RemoteEmbedder};
pub use kmeans::{kmeans, KMeansResult};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextError;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BatchingError {
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("{ids} ids but {vectors} vectors")]
    LengthMismatch { ids: usize, vectors: usize },
    #[error("cannot form {k} clusters from {points} points")]
    InvalidClusterCount { k: usize, points: usize },
    #[error("vector dimension {found} differs from {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error(transparent)]
    Context(#[from] ContextError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BatchingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BatchingError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    Random,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<String>>,
    pub mode: BatchMode,
    pub seed: u64,
    pub batch_size: usize,
    /// Cluster of each batch (cluster mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<usize>>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn instance_count(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

fn shuffled_chunks(ids: &[String], batch_size: usize, seed: u64) -> Vec<Vec<String>> {
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(batch_size).map(<[String]>::to_vec).collect()
}

pub fn plan_random(
    ids: &[String],
    batch_size: usize,
    seed: u64,
) -> Result<BatchPlan, BatchingError> {
    if batch_size == 0 {
        return Err(BatchingError::ZeroBatchSize);
    }
    Ok(BatchPlan {
        batches: shuffled_chunks(ids, batch_size, seed),
        mode: BatchMode::Random,
        seed,
        batch_size,
        clusters: None,
    })
}

/// ⌈N / (4·B)⌉ clamped to `[1, N]`.
pub fn default_cluster_count(n: usize, batch_size: usize) -> usize {
    if n == 0 {
        return 1;
    }
    n.div_ceil(4 * batch_size.max(1)).clamp(1, n)
}

pub fn plan_cluster(
    ids: &[String],
    vectors: &[EmbeddingVector],
    batch_size: usize,
    k: usize,
    seed: u64,
) -> Result<BatchPlan, BatchingError> {
    if batch_size == 0 {
        return Err(BatchingError::ZeroBatchSize);
    }
    if ids.len() != vectors.len() {
        return Err(BatchingError::LengthMismatch {
            ids: ids.len(),
            vectors: vectors.len(),
        });
    }
    let result = kmeans(vectors, k, seed, DEFAULT_MAX_ITERS, DEFAULT_TOLERANCE)?;
    let mut members: Vec<Vec<String>> = vec![Vec::new(); k];
    for (id, &cluster) in ids.iter().zip(&result.assignments) {
        members[cluster].push(id.clone());
    }
    let mut batches = Vec::new();
    let mut clusters = Vec::new();
    for (cluster, ids) in members.iter().enumerate() {
        for batch in shuffled_chunks(ids, batch_size, seed ^ cluster as u64) {
            batches.push(batch);
            clusters.push(cluster);
        }
    }
    Ok(BatchPlan {
        batches,
        mode: BatchMode::Cluster,
        seed,
        batch_size,
        clusters: Some(clusters),
    })
}
