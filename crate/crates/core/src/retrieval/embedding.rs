use std::time::Duration;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};

use super::tokenize::tokenize;
use super::{rank, RetrievalError, RetrievalResult};

/// Sentence encoder producing unit-normalized vectors of a fixed dimension.
pub trait Embedder: Send + Sync {
    /// Stable identity recorded in index files; a query must be encoded by
    /// the same embedder that built the index.
    fn id(&self) -> String;

    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Scales `v` to unit L2 norm.
pub fn normalize<T: Float>(v: &[T]) -> Result<Vec<T>, RetrievalError> {
    let norm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    if norm == T::zero() || !norm.is_finite() {
        return Err(RetrievalError::ZeroVector);
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

/// Cosine similarity of two equal-length vectors of any norm.
pub fn cosine<T: Float>(a: &[T], b: &[T]) -> T {
    let dot = a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    let na = a.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let nb = b.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    dot / (na * nb)
}

/// Deterministic bag-of-words embedder for offline runs: every token is
/// hashed (FNV-1a) into one of `dim` buckets, counts are accumulated, and the
/// result is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim }
    }

    fn bucket(&self, token: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (h % self.dim as u64) as usize
    }
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing-fnv1a-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            v[self.bucket(t)] += 1.0;
        }
        normalize(&v)
    }
}

/// Client for an embedding service speaking
/// `POST {"input": [texts]}` → `{"data": [{"embedding": [...]}]}`.
pub struct HttpEmbedder {
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: Option<String>,
        api_key: Option<String>,
        dim: usize,
        timeout: Duration,
    ) -> Result<Self, RetrievalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RetrievalError::EmbedderUnavailable(e.to_string()))?;
        Ok(HttpEmbedder {
            endpoint: endpoint.into(),
            model,
            api_key,
            dim,
            client,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        match &self.model {
            Some(m) => format!("http:{m}"),
            None => format!("http:{}", self.endpoint),
        }
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let mut out = self.embed_batch(&[text])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let unavailable = |e: String| RetrievalError::EmbedderUnavailable(e);
        let mut body = serde_json::json!({ "input": texts });
        if let Some(m) = &self.model {
            body["model"] = serde_json::Value::String(m.clone());
        }
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("HTTP {}", resp.status())));
        }
        let parsed: EmbeddingResponse = resp.json().map_err(|e| unavailable(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(unavailable(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed
            .data
            .into_iter()
            .map(|item| {
                if item.embedding.len() != self.dim {
                    return Err(RetrievalError::DimensionMismatch {
                        expected: self.dim,
                        got: item.embedding.len(),
                    });
                }
                normalize(&item.embedding)
            })
            .collect()
    }
}

/// Embedder settings as they appear in the pipeline config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    Hashing {
        dim: usize,
    },
    Http {
        endpoint: String,
        #[serde(default)]
        model: Option<String>,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        dim: usize,
        #[serde(default = "default_embed_timeout")]
        timeout_secs: u64,
    },
}

fn default_embed_timeout() -> u64 {
    30
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Box<dyn Embedder>, RetrievalError> {
        match self {
            EmbedderConfig::Hashing { dim } => Ok(Box::new(HashingEmbedder::new(*dim))),
            EmbedderConfig::Http {
                endpoint,
                model,
                api_key_env,
                dim,
                timeout_secs,
            } => {
                let key = api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
                Ok(Box::new(HttpEmbedder::new(
                    endpoint.clone(),
                    model.clone(),
                    key,
                    *dim,
                    Duration::from_secs(*timeout_secs),
                )?))
            }
        }
    }
}

/// Unit-normalized vectors for every train example of one language.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex<T> {
    language: String,
    embedder_id: String,
    dim: usize,
    entries: Vec<(String, Vec<T>)>,
}

impl<T: Float> EmbeddingIndex<T> {
    /// Normalizes each vector; all must share one dimension.
    pub fn from_vectors(
        language: impl Into<String>,
        embedder_id: impl Into<String>,
        vectors: Vec<(String, Vec<T>)>,
    ) -> Result<Self, RetrievalError> {
        Self::assemble(language.into(), embedder_id.into(), vectors, true)
    }

    /// Like [`from_vectors`](Self::from_vectors) for vectors that are already
    /// unit length, such as ones read back from a saved index. Keeps them
    /// bit-for-bit so a reloaded index scores exactly like the original.
    pub fn from_normalized(
        language: impl Into<String>,
        embedder_id: impl Into<String>,
        vectors: Vec<(String, Vec<T>)>,
    ) -> Result<Self, RetrievalError> {
        Self::assemble(language.into(), embedder_id.into(), vectors, false)
    }

    fn assemble(
        language: String,
        embedder_id: String,
        vectors: Vec<(String, Vec<T>)>,
        renormalize: bool,
    ) -> Result<Self, RetrievalError> {
        let dim = match vectors.first() {
            Some((_, v)) => v.len(),
            None => return Err(RetrievalError::EmptyTrainSplit(language)),
        };
        let mut entries = Vec::with_capacity(vectors.len());
        for (id, v) in vectors {
            if v.len() != dim {
                return Err(RetrievalError::DimensionMismatch { expected: dim, got: v.len() });
            }
            let v = if renormalize {
                normalize(&v)?
            } else {
                let norm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
                if (norm - T::one()).abs() > T::from(1e-6).unwrap() {
                    return Err(RetrievalError::Persist(format!("vector `{id}` is not unit length")));
                }
                v
            };
            entries.push((id, v));
        }
        Ok(EmbeddingIndex {
            language,
            embedder_id,
            dim,
            entries,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(String, Vec<T>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact cosine scan. The query need not be normalized.
    pub fn retrieve(&self, query: &[T], k: usize) -> Result<Vec<RetrievalResult<T>>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let q = normalize(query)?;
        let hits = self
            .entries
            .iter()
            .map(|(id, v)| RetrievalResult {
                example_id: id.clone(),
                score: q.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b),
            })
            .collect();
        Ok(rank(hits, k))
    }
}

impl EmbeddingIndex<f64> {
    pub fn build(corpus: &Corpus, language: &str, embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        let examples: Vec<_> = corpus.group(language, Split::Train).collect();
        if examples.is_empty() {
            return Err(RetrievalError::EmptyTrainSplit(language.to_string()));
        }
        let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        let pairs = examples.iter().map(|e| e.id.clone()).zip(vectors).collect();
        Self::from_vectors(language, embedder.id(), pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_checked_cosine_ranking() {
        let idx = EmbeddingIndex::from_vectors(
            "eng",
            "manual",
            vec![
                ("e1".into(), vec![1.0, 0.0]),
                ("e2".into(), vec![0.0, 1.0]),
                ("e3".into(), vec![0.6, 0.8]),
            ],
        )
        .unwrap();
        let hits = idx.retrieve(&[1.0, 0.0], 2).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].example_id, "e1");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        assert_eq!(hits[1].example_id, "e3");
        assert!((hits[1].score - 0.6).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let idx = EmbeddingIndex::from_vectors("eng", "m", vec![("a".into(), vec![1.0f32, 0.0])]).unwrap();
        assert!(matches!(
            idx.retrieve(&[1.0, 0.0, 0.0], 1),
            Err(RetrievalError::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(EmbeddingIndex::from_vectors(
            "eng",
            "m",
            vec![("a".into(), vec![1.0, 0.0]), ("b".into(), vec![1.0])]
        )
        .is_err());
    }

    #[test]
    fn stored_vectors_are_unit() {
        let idx = EmbeddingIndex::from_vectors("eng", "m", vec![("a".into(), vec![3.0f32, 4.0])]).unwrap();
        let v = &idx.entries()[0].1;
        assert!(((v[0] * v[0] + v[1] * v[1]).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hashing_embedder_is_deterministic_and_scale_free() {
        let e = HashingEmbedder::new(8);
        let a = e.embed("a").unwrap();
        assert_eq!(a, e.embed("a").unwrap());
        assert_eq!(e.embed("a a").unwrap(), a);
        // one bucket carries all the mass
        assert_eq!(a.iter().filter(|&&x| x == 1.0).count(), 1);
        assert_eq!(a.iter().filter(|&&x| x == 0.0).count(), 7);
    }

    #[test]
    fn unreachable_http_embedder() {
        let e = HttpEmbedder::new("http://127.0.0.1:1/embed", None, None, 4, Duration::from_millis(500)).unwrap();
        assert!(matches!(e.embed("hello"), Err(RetrievalError::EmbedderUnavailable(_))));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(matches!(normalize(&[0.0f64, 0.0]), Err(RetrievalError::ZeroVector)));
    }
}
