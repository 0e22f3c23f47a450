//! Sentence embeddings for relevance scoring.
//!
//! Two providers sit behind [`EmbeddingProvider`]:
//!
//! * `Hash`: a deterministic feature-hashing embedder. The text is
//!   normalized, split into word unigrams and bigrams (`"a b"`), and each
//!   feature's FNV-1a 64-bit hash over its UTF-8 bytes picks a coordinate
//!   (`hash % dim`) and a sign (bit 63 set means `-1`). Counts are summed and
//!   the result is L2-normalized.
//! * `Remote`: `POST {"texts": [...]}` to an HTTP endpoint that answers
//!   `{"embeddings": [[...], ...]}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::normalize;

pub const DEFAULT_HASH_DIM: usize = 64;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn normalize_in_place(&mut self) {
        let norm = self.norm();
        if norm > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    endpoint: String,
    client: reqwest::blocking::Client,
    batch_size: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

impl RemoteClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, batch_size: usize) -> Result<Self> {
        let endpoint = endpoint.into();
        if endpoint.trim().is_empty() {
            return Err(Error::Config("remote provider requires an endpoint".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("cannot build http client: {e}")))?;
        Ok(RemoteClient {
            endpoint,
            client,
            batch_size: batch_size.max(1),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Remote {
                endpoint: self.endpoint.clone(),
                batch: 0,
                message: "no texts to embed".into(),
            });
        }
        let mut out: Vec<EmbeddingVector> = Vec::with_capacity(texts.len());
        for (batch, chunk) in texts.chunks(self.batch_size).enumerate() {
            let fail = |message: String| Error::Remote {
                endpoint: self.endpoint.clone(),
                batch,
                message,
            };
            let response = self
                .client
                .post(&self.endpoint)
                .json(&EmbedRequest { texts: chunk })
                .send()
                .map_err(|e| fail(e.to_string()))?;
            let status = response.status();
            if !status.is_success() {
                return Err(fail(format!("http status {status}")));
            }
            let body: EmbedResponse = response
                .json()
                .map_err(|e| fail(format!("malformed response: {e}")))?;
            if body.embeddings.len() != chunk.len() {
                return Err(fail(format!(
                    "expected {} embeddings, got {}",
                    chunk.len(),
                    body.embeddings.len()
                )));
            }
            let dim = out.first().map_or(body.embeddings[0].len(), EmbeddingVector::dim);
            if dim == 0 {
                return Err(fail("zero-dimensional embedding".into()));
            }
            for row in body.embeddings {
                if row.len() != dim {
                    return Err(fail(format!("inconsistent dimension {} (expected {dim})", row.len())));
                }
                out.push(EmbeddingVector::new(row));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub enum ProviderKind {
    Hash { dim: usize },
    Remote(RemoteClient),
}

#[derive(Debug, Clone)]
pub struct EmbeddingProvider {
    pub kind: ProviderKind,
    pub normalize: bool,
}

impl Default for EmbeddingProvider {
    fn default() -> Self {
        EmbeddingProvider::hash(DEFAULT_HASH_DIM)
    }
}

impl EmbeddingProvider {
    pub fn hash(dim: usize) -> Self {
        EmbeddingProvider {
            kind: ProviderKind::Hash { dim: dim.max(1) },
            normalize: true,
        }
    }

    pub fn remote(endpoint: impl Into<String>, timeout: Duration) -> Result<Self> {
        Ok(EmbeddingProvider {
            kind: ProviderKind::Remote(RemoteClient::new(endpoint, timeout, DEFAULT_BATCH_SIZE)?),
            normalize: true,
        })
    }

    /// Dimension when known up front (the remote dimension is whatever the
    /// service returns).
    pub fn dim(&self) -> Option<usize> {
        match &self.kind {
            ProviderKind::Hash { dim } => Some(*dim),
            ProviderKind::Remote(_) => None,
        }
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let mut vectors = match &self.kind {
            ProviderKind::Hash { dim } => texts.iter().map(|t| hash_embed(t, *dim)).collect(),
            ProviderKind::Remote(client) => client.embed(texts)?,
        };
        if self.normalize {
            vectors.iter_mut().for_each(EmbeddingVector::normalize_in_place);
        }
        Ok(vectors)
    }
}

/// Raw (unnormalized) hashed feature counts.
pub fn hash_embed(text: &str, dim: usize) -> EmbeddingVector {
    let mut values = vec![0.0; dim];
    let normalized = normalize(text);
    let words: Vec<&str> = normalized.split(' ').filter(|w| !w.is_empty()).collect();
    let mut add = |feature: &str| {
        let h = fnv1a64(feature.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        values[(h % dim as u64) as usize] += sign;
    };
    for w in &words {
        add(w);
    }
    for pair in words.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]));
    }
    EmbeddingVector { values }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
