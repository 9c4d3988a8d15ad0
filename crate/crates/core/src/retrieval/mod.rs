//! Top-K example retrieval over a language's train split.
//!
//! Two retrievers are provided: word n-gram overlap ([`NGramIndex`]) and
//! cosine similarity over unit-normalized sentence embeddings
//! ([`EmbeddingIndex`]). Both rank by score descending and break ties by
//! example id ascending, so results are a deterministic function of the
//! index, the query, and `k`.

mod embedding;
mod ngram;
mod persist;
mod tokenize;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use embedding::{
    cosine, normalize, EmbedderConfig, Embedder, EmbeddingIndex, HashingEmbedder, HttpEmbedder,
};
pub use ngram::{ngram_overlap, ngram_score, IndexedExample, NGramIndex, DEFAULT_N_MAX, MAX_N};
pub use persist::{load_index, save_embedding_index, save_ngram_index, LoadedIndex};
pub use tokenize::{ngram_sets, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("no train examples for language `{0}`")]
    EmptyTrainSplit(String),
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("n-gram order must be in 1..={max}, got {got}", max = MAX_N)]
    BadOrder { got: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("index file: {0}")]
    Persist(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One ranked hit. `score` is in `[0, 1]` for n-gram retrieval and in
/// `[-1, 1]` for cosine retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult<T> {
    pub example_id: String,
    pub score: T,
}

/// Sorts by score descending, then id ascending, and keeps the first `k`.
pub(crate) fn rank<T: PartialOrd>(mut hits: Vec<RetrievalResult<T>>, k: usize) -> Vec<RetrievalResult<T>> {
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.example_id.cmp(&b.example_id))
    });
    hits.truncate(k);
    hits
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    #[default]
    Ngram,
    Embedding,
}

impl std::str::FromStr for RetrieverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ngram" => Ok(RetrieverKind::Ngram),
            "embedding" => Ok(RetrieverKind::Embedding),
            other => Err(format!("unknown retriever `{other}` (expected ngram|embedding)")),
        }
    }
}

impl std::fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RetrieverKind::Ngram => "ngram",
            RetrieverKind::Embedding => "embedding",
        })
    }
}

/// A built index of either kind, plus the embedder needed to encode queries
/// for the embedding case.
pub enum Retriever {
    Ngram(NGramIndex),
    Embedding {
        index: EmbeddingIndex<f64>,
        embedder: Box<dyn Embedder>,
    },
}

impl Retriever {
    pub fn kind(&self) -> RetrieverKind {
        match self {
            Retriever::Ngram(_) => RetrieverKind::Ngram,
            Retriever::Embedding { .. } => RetrieverKind::Embedding,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Retriever::Ngram(i) => i.len(),
            Retriever::Embedding { index, .. } => index.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn retrieve_text(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult<f64>>, RetrievalError> {
        match self {
            Retriever::Ngram(index) => index.retrieve(query, k),
            Retriever::Embedding { index, embedder } => {
                let v = embedder.embed(query)?;
                index.retrieve(&v, k)
            }
        }
    }
}
