//! Text embedding providers.
//!
//! Two providers are available: a deterministic offline fallback (hashed
//! bag-of-words) that makes the whole pipeline testable with no network, and
//! a remote provider that calls the gateway's embeddings endpoint. The
//! provider identity is a tag that persists with any index built from it, so
//! mixed-embedder lookups are caught at load time.

use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::gateway::Gateway;
use crate::vecindex::Embedding;

/// Bucket count of the fallback embedder.
pub const FALLBACK_DIM: usize = 256;
/// Tag persisted into indexes built with the fallback embedder.
pub const FALLBACK_TAG: &str = "fallback-v1";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
}

/// Anything that can turn text into a unit-norm embedding.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
    /// Identifies the provider and version; stored in index files.
    fn tag(&self) -> String;
}

/// Deterministic offline embedder: lowercase, split on non-alphanumerics,
/// hash each token (FNV-1a) into one of [`FALLBACK_DIM`] buckets, count,
/// L2-normalize. Same text always yields bitwise-identical vectors.
#[derive(Debug, Clone)]
pub struct HashedBowEmbedder {
    dim: usize,
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self { dim: FALLBACK_DIM }
    }
}

impl HashedBowEmbedder {
    pub fn with_dimension(dim: usize) -> Self {
        Self { dim }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    // Stable across platforms and releases, unlike the std hasher.
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl TextEmbedder for HashedBowEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut counts = vec![0.0_f64; self.dim];
        let mut tokens = 0usize;
        for token in text.to_lowercase().split(|c: char| !c.is_alphanumeric()) {
            if token.is_empty() {
                continue;
            }
            let bucket = (fnv1a(token.as_bytes()) % self.dim as u64) as usize;
            counts[bucket] += 1.0;
            tokens += 1;
        }
        if tokens == 0 {
            return Err(EmbedError::EmptyText);
        }
        Ok(Embedding::normalized(counts).expect("token counts are nonzero"))
    }

    fn tag(&self) -> String {
        if self.dim == FALLBACK_DIM {
            FALLBACK_TAG.to_string()
        } else {
            format!("fallback-v1-d{}", self.dim)
        }
    }
}

/// Remote embedder backed by the gateway's embeddings endpoint. The vector
/// dimension is taken from the first response and frozen into the tag.
pub struct GatewayEmbedder {
    gateway: Arc<Gateway>,
    model: String,
    dimension: OnceLock<usize>,
}

impl GatewayEmbedder {
    pub fn new(gateway: Arc<Gateway>, model: impl Into<String>) -> Self {
        Self { gateway, model: model.into(), dimension: OnceLock::new() }
    }
}

impl TextEmbedder for GatewayEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut vectors = self
            .gateway
            .embed_texts(&self.model, &[text.to_string()])
            .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        if vectors.is_empty() {
            return Err(EmbedError::ProviderUnavailable("provider returned no embedding".into()));
        }
        let values = vectors.remove(0);
        let dim = *self.dimension.get_or_init(|| values.len());
        if values.len() != dim {
            return Err(EmbedError::ProviderUnavailable(format!(
                "provider changed dimension from {dim} to {}",
                values.len()
            )));
        }
        Embedding::normalized(values)
            .map_err(|_| EmbedError::ProviderUnavailable("provider returned a zero vector".into()))
    }

    fn tag(&self) -> String {
        match self.dimension.get() {
            Some(d) => format!("remote:{}:d{d}", self.model),
            None => format!("remote:{}", self.model),
        }
    }
}
