//! JSONL sidecar files for built indices.
//!
//! Line 1 is a header object; every following line is one example.
//!
//! ```text
//! {"format":"emotion-rag-index","version":1,"kind":"ngram","language":"eng","n_max":3}
//! {"id":"ex1","ngrams":[["cats","i","love"],["i love","love cats"],["i love cats"]]}
//! ```
//!
//! Embedding files carry `embedder` and `dim` in the header and a `vector`
//! per line. N-grams are written sorted so files are byte-stable.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingIndex, IndexedExample, NGramIndex, RetrievalError, RetrieverKind};

const FORMAT: &str = "emotion-rag-index";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: RetrieverKind,
    language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct NgramLine {
    id: String,
    ngrams: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct VectorLine {
    id: String,
    vector: Vec<f64>,
}

pub enum LoadedIndex {
    Ngram(NGramIndex),
    Embedding(EmbeddingIndex<f64>),
}

fn write_line<W: Write, S: Serialize>(out: &mut W, value: &S) -> Result<(), RetrievalError> {
    serde_json::to_writer(&mut *out, value).map_err(|e| RetrievalError::Persist(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn save_ngram_index(index: &NGramIndex, path: &Path) -> Result<(), RetrievalError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_line(
        &mut out,
        &Header {
            format: FORMAT.into(),
            version: VERSION,
            kind: RetrieverKind::Ngram,
            language: index.language().to_string(),
            n_max: Some(index.n_max()),
            embedder: None,
            dim: None,
        },
    )?;
    for e in index.entries() {
        let ngrams = e
            .grams
            .iter()
            .map(|set| {
                let mut v: Vec<String> = set.iter().cloned().collect();
                v.sort();
                v
            })
            .collect();
        write_line(&mut out, &NgramLine { id: e.id.clone(), ngrams })?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_embedding_index(index: &EmbeddingIndex<f64>, path: &Path) -> Result<(), RetrievalError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_line(
        &mut out,
        &Header {
            format: FORMAT.into(),
            version: VERSION,
            kind: RetrieverKind::Embedding,
            language: index.language().to_string(),
            n_max: None,
            embedder: Some(index.embedder_id().to_string()),
            dim: Some(index.dim()),
        },
    )?;
    for (id, v) in index.entries() {
        write_line(&mut out, &VectorLine { id: id.clone(), vector: v.clone() })?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<LoadedIndex, RetrievalError> {
    let bad = |msg: String| RetrievalError::Persist(msg);
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header_line = lines.next().ok_or_else(|| bad("empty index file".into()))??;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(bad(format!("not an index file (format `{}`)", header.format)));
    }
    if header.version != VERSION {
        return Err(bad(format!("unsupported index version {}", header.version)));
    }
    let body: Vec<(usize, String)> = lines
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 2, l)))
        .collect::<Result<_, _>>()?;
    let body = body.into_iter().filter(|(_, l)| !l.trim().is_empty());
    match header.kind {
        RetrieverKind::Ngram => {
            let n_max = header.n_max.ok_or_else(|| bad("ngram header lacks n_max".into()))?;
            let entries = body
                .map(|(lineno, l)| {
                    let line: NgramLine =
                        serde_json::from_str(&l).map_err(|e| bad(format!("line {lineno}: {e}")))?;
                    Ok(IndexedExample {
                        id: line.id,
                        grams: line.ngrams.into_iter().map(|v| v.into_iter().collect()).collect(),
                    })
                })
                .collect::<Result<Vec<_>, RetrievalError>>()?;
            Ok(LoadedIndex::Ngram(NGramIndex::from_entries(header.language, n_max, entries)?))
        }
        RetrieverKind::Embedding => {
            let embedder = header.embedder.ok_or_else(|| bad("embedding header lacks embedder".into()))?;
            let vectors = body
                .map(|(lineno, l)| {
                    let line: VectorLine =
                        serde_json::from_str(&l).map_err(|e| bad(format!("line {lineno}: {e}")))?;
                    Ok((line.id, line.vector))
                })
                .collect::<Result<Vec<_>, RetrievalError>>()?;
            let index = EmbeddingIndex::from_normalized(header.language, embedder, vectors)?;
            if let Some(dim) = header.dim {
                if dim != index.dim() {
                    return Err(RetrievalError::DimensionMismatch { expected: dim, got: index.dim() });
                }
            }
            Ok(LoadedIndex::Embedding(index))
        }
    }
}
