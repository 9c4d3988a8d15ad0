use std::collections::HashSet;

use crate::corpus::{Corpus, Split};
use crate::scalar::Scalar;

use super::tokenize::{ngram_sets, tokenize};
use super::{rank, RetrievalError, RetrievalResult};

pub const DEFAULT_N_MAX: usize = 3;
pub const MAX_N: usize = 5;

/// A train example reduced to its n-gram sets.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedExample {
    pub id: String,
    /// `grams[n - 1]` is the set of word n-grams.
    pub grams: Vec<HashSet<String>>,
}

impl IndexedExample {
    pub fn from_text(id: impl Into<String>, text: &str, n_max: usize) -> Self {
        IndexedExample {
            id: id.into(),
            grams: ngram_sets(&tokenize(text), n_max),
        }
    }
}

/// N-gram sets for every train example of one language.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramIndex {
    language: String,
    n_max: usize,
    entries: Vec<IndexedExample>,
}

impl NGramIndex {
    /// Indexes the train split of `language`. Examples with no word tokens
    /// (punctuation only) cannot match anything and are left out.
    pub fn build(corpus: &Corpus, language: &str, n_max: usize) -> Result<Self, RetrievalError> {
        check_order(n_max)?;
        let entries: Vec<_> = corpus
            .group(language, Split::Train)
            .map(|ex| IndexedExample::from_text(&ex.id, &ex.text, n_max))
            .filter(|e| {
                let keep = !e.grams[0].is_empty();
                if !keep {
                    log::warn!("skipping example `{}`: no word tokens", e.id);
                }
                keep
            })
            .collect();
        if entries.is_empty() {
            return Err(RetrievalError::EmptyTrainSplit(language.to_string()));
        }
        Ok(NGramIndex {
            language: language.to_string(),
            n_max,
            entries,
        })
    }

    pub(crate) fn from_entries(
        language: String,
        n_max: usize,
        entries: Vec<IndexedExample>,
    ) -> Result<Self, RetrievalError> {
        check_order(n_max)?;
        if entries.is_empty() {
            return Err(RetrievalError::EmptyTrainSplit(language));
        }
        if let Some(bad) = entries.iter().find(|e| e.grams.len() != n_max || e.grams[0].is_empty()) {
            return Err(RetrievalError::Persist(format!("entry `{}` has malformed n-gram sets", bad.id)));
        }
        Ok(NGramIndex { language, n_max, entries })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn entries(&self) -> &[IndexedExample] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Top `k` examples by [`ngram_overlap`], or every example when `k`
    /// exceeds the index size.
    pub fn retrieve<T: Scalar>(&self, query: &str, k: usize) -> Result<Vec<RetrievalResult<T>>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let tokens = tokenize(query);
        if tokens.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let query_grams = ngram_sets(&tokens, self.n_max);
        let hits = self
            .entries
            .iter()
            .map(|e| RetrievalResult {
                example_id: e.id.clone(),
                score: ngram_overlap(&query_grams, &e.grams),
            })
            .collect();
        Ok(rank(hits, k))
    }
}

fn check_order(n_max: usize) -> Result<(), RetrievalError> {
    if (1..=MAX_N).contains(&n_max) {
        Ok(())
    } else {
        Err(RetrievalError::BadOrder { got: n_max })
    }
}

/// Query-normalized overlap averaged over the orders the query actually has:
/// the mean, over `n` with a nonempty query set, of
/// `|G_n(query) ∩ G_n(example)| / |G_n(query)|`.
///
/// Returns zero when the query has no n-grams at all.
pub fn ngram_overlap<T: Scalar>(query: &[HashSet<String>], example: &[HashSet<String>]) -> T {
    let mut sum = T::zero();
    let mut orders = 0usize;
    for (q, e) in query.iter().zip(example) {
        if q.is_empty() {
            continue;
        }
        let shared = q.iter().filter(|g| e.contains(*g)).count();
        sum = sum + T::ratio_or_zero(shared, q.len());
        orders += 1;
    }
    if orders == 0 {
        T::zero()
    } else {
        sum / T::from_count(orders)
    }
}

/// Scores raw query text against one indexed example.
pub fn ngram_score<T: Scalar>(query: &str, example: &IndexedExample) -> Result<T, RetrievalError> {
    let tokens = tokenize(query);
    if tokens.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    Ok(ngram_overlap(&ngram_sets(&tokens, example.grams.len()), &example.grams))
}
