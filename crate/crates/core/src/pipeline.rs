//! End-to-end batch prediction: retrieve, prompt, fan out, aggregate.
//!
//! Every query produces exactly one [`QueryRecord`], in input order, even
//! when some step fails for it; the failure is stored on the record and the
//! final labels default to neutral. Records keep the retrieved ids and all
//! raw responses so a run can be re-aggregated offline under a different
//! strategy without calling any backend again.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, reaggregate, Aggregated, JudgeContext, StrategyId, WeightTable};
use crate::config::LanguageConfig;
use crate::corpus::{write_labels_csv, Corpus, CorpusError, LabeledExample, Split};
use crate::generators::{run_pool, Generator, ModelPrediction, PoolError};
use crate::labels::LabelVector;
use crate::parallel::parallel_map;
use crate::prompting::build_prompt;
use crate::retrieval::{Embedder, EmbeddingIndex, NGramIndex, RetrievalError, RetrievalResult, Retriever, RetrieverKind};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("backend `{0}` is not configured")]
    UnknownBackend(String),
    #[error("no backends selected")]
    NoBackends,
    #[error("strategy `{0}` needs a judge backend")]
    MissingJudge(StrategyId),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    /// Prompt with no shots when nothing can be retrieved instead of
    /// failing the query.
    pub zero_shot_fallback: bool,
    /// Queries in flight at once.
    pub query_parallelism: usize,
    /// Backend calls in flight per query.
    pub pool_parallelism: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            zero_shot_fallback: true,
            query_parallelism: 4,
            pool_parallelism: 4,
        }
    }
}

/// Provenance for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub retrieved: Vec<RetrievalResult<f64>>,
    pub predictions: Vec<ModelPrediction>,
    pub strategy: StrategyId,
    /// Final decision; neutral when `error` is set.
    pub labels: LabelVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<Aggregated>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub language: String,
    pub config: LanguageConfig,
    pub strategy: StrategyId,
    pub retriever: Option<RetrieverKind>,
    pub model_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub meta: RunMeta,
    pub records: Vec<QueryRecord>,
}

impl PipelineRun {
    /// One JSON record per line.
    pub fn write_records<W: Write>(&self, out: W) -> Result<(), PipelineError> {
        write_records(&self.records, out)
    }

    /// `id,text,<labels>` in input order.
    pub fn write_labels_csv<W: Write>(&self, out: W) -> Result<(), PipelineError> {
        write_labels_csv(
            out,
            self.records.iter().map(|r| (r.query_id.as_str(), r.text.as_str(), &r.labels)),
        )?;
        Ok(())
    }

    /// Writes `run.jsonl`, `labels.csv` and `run.meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("run.jsonl"))?);
        self.write_records(&mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("labels.csv"))?);
        self.write_labels_csv(&mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("run.meta.json"))?);
        serde_json::to_writer_pretty(&mut w, &self.meta)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

pub fn write_records<W: Write>(records: &[QueryRecord], mut out: W) -> Result<(), PipelineError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<QueryRecord>, PipelineError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Builds the configured retriever over `language`'s train split.
pub fn build_retriever(
    corpus: &Corpus,
    config: &LanguageConfig,
    embedder: Option<Box<dyn Embedder>>,
) -> Result<Retriever, RetrievalError> {
    match config.retriever {
        RetrieverKind::Ngram => Ok(Retriever::Ngram(NGramIndex::build(corpus, &config.language, config.n_max)?)),
        RetrieverKind::Embedding => {
            let embedder = embedder
                .ok_or_else(|| RetrievalError::EmbedderUnavailable("no embedder configured".into()))?;
            let index = EmbeddingIndex::build(corpus, &config.language, embedder.as_ref())?;
            Ok(Retriever::Embedding { index, embedder })
        }
    }
}

/// Everything needed to answer queries for one language.
pub struct Pipeline<'a> {
    config: LanguageConfig,
    train: HashMap<&'a str, &'a LabeledExample>,
    /// `None` when the language has nothing to retrieve from.
    retriever: Option<Retriever>,
    backends: Vec<Arc<dyn Generator>>,
    judge: Option<Arc<dyn Generator>>,
    options: PipelineOptions,
}

impl<'a> Pipeline<'a> {
    /// `backends` must already be filtered to the language's pool.
    pub fn new(
        corpus: &'a Corpus,
        config: LanguageConfig,
        retriever: Option<Retriever>,
        backends: Vec<Arc<dyn Generator>>,
        options: PipelineOptions,
    ) -> Result<Self, PipelineError> {
        if backends.is_empty() {
            return Err(PipelineError::NoBackends);
        }
        let train = corpus
            .group(&config.language, Split::Train)
            .map(|e| (e.id.as_str(), e))
            .collect();
        Ok(Pipeline {
            config,
            train,
            retriever,
            backends,
            judge: None,
            options,
        })
    }

    pub fn with_judge(mut self, judge: Arc<dyn Generator>) -> Self {
        self.judge = Some(judge);
        self
    }

    pub fn model_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.backends.iter().map(|b| b.model_id().to_string()).collect();
        ids.sort();
        ids
    }

    fn retrieve(&self, text: &str) -> Result<Vec<RetrievalResult<f64>>, RetrievalError> {
        match &self.retriever {
            Some(r) => match r.retrieve_text(text, self.config.k()) {
                Err(RetrievalError::EmptyQuery) if self.options.zero_shot_fallback => Ok(Vec::new()),
                other => other,
            },
            None if self.options.zero_shot_fallback => Ok(Vec::new()),
            None => Err(RetrievalError::EmptyTrainSplit(self.config.language.clone())),
        }
    }

    fn process(
        &self,
        query_id: &str,
        text: &str,
        strategy: &StrategyId,
        weights: Option<&WeightTable<f64>>,
    ) -> QueryRecord {
        let mut record = QueryRecord {
            query_id: query_id.to_string(),
            text: text.to_string(),
            retrieved: Vec::new(),
            predictions: Vec::new(),
            strategy: strategy.clone(),
            labels: LabelVector::NEUTRAL,
            aggregation: None,
            error: None,
        };
        match self.retrieve(text) {
            Ok(hits) => record.retrieved = hits,
            Err(e) => {
                record.error = Some(format!("retrieval: {e}"));
                return record;
            }
        }
        let shots: Vec<(String, LabelVector)> = record
            .retrieved
            .iter()
            .filter_map(|hit| self.train.get(hit.example_id.as_str()))
            .map(|ex| (ex.text.clone(), ex.gold))
            .collect();
        let prompt = build_prompt(&self.config.display_name(), &shots, text);
        match run_pool(&self.backends, &prompt, query_id, self.options.pool_parallelism) {
            Ok(p) => record.predictions = p,
            Err(PoolError::AllBackendsUnavailable(p)) => {
                record.predictions = p;
                record.error = Some("all backends unavailable".to_string());
                return record;
            }
            Err(e) => {
                record.error = Some(e.to_string());
                return record;
            }
        }
        let judge = self.judge.as_ref().map(|b| JudgeContext {
            backend: b.as_ref(),
            prompt: &prompt,
            query_id,
        });
        match aggregate(strategy, &record.predictions, weights, judge) {
            Ok(agg) => {
                record.labels = agg.labels;
                record.aggregation = Some(agg);
            }
            Err(e) => record.error = Some(format!("aggregation: {e}")),
        }
        record
    }

    /// Answers every query. Output order follows `queries`.
    pub fn predict_all(
        &self,
        queries: &[(String, String)],
        strategy: &StrategyId,
        weights: Option<&WeightTable<f64>>,
    ) -> Result<PipelineRun, PipelineError> {
        if matches!(strategy, StrategyId::LlmJudge(_)) && self.judge.is_none() {
            return Err(PipelineError::MissingJudge(strategy.clone()));
        }
        let records = parallel_map(queries, self.options.query_parallelism, |(id, text)| {
            self.process(id, text, strategy, weights)
        });
        Ok(PipelineRun {
            meta: RunMeta {
                run_id: run_id(&self.config.language, strategy, queries),
                language: self.config.language.clone(),
                config: self.config.clone(),
                strategy: strategy.clone(),
                retriever: self.retriever.as_ref().map(Retriever::kind),
                model_ids: self.model_ids(),
            },
            records,
        })
    }
}

/// Stable identifier derived from the run inputs (FNV-1a).
fn run_id(language: &str, strategy: &StrategyId, queries: &[(String, String)]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |s: &str| {
        for b in s.as_bytes().iter().chain(std::iter::once(&0u8)) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(language);
    feed(&strategy.to_string());
    for (id, text) in queries {
        feed(id);
        feed(text);
    }
    format!("{language}-{h:016x}")
}

/// Recomputes final labels from stored records under `strategy`, without
/// calling any backend. Records that failed before aggregation stay neutral.
pub fn reaggregate_records(
    records: &[QueryRecord],
    strategy: &StrategyId,
    weights: Option<&WeightTable<f64>>,
) -> Vec<QueryRecord> {
    records
        .iter()
        .map(|r| {
            let mut out = r.clone();
            out.strategy = strategy.clone();
            out.labels = LabelVector::NEUTRAL;
            out.aggregation = None;
            if r.predictions.is_empty() || r.predictions.iter().all(|p| !p.available) {
                return out;
            }
            out.error = None;
            let stored_judge = r.aggregation.as_ref().and_then(|a| a.judge.as_ref());
            match reaggregate(strategy, &r.predictions, weights, stored_judge) {
                Ok(agg) => {
                    out.labels = agg.labels;
                    out.aggregation = Some(agg);
                }
                Err(e) => out.error = Some(format!("aggregation: {e}")),
            }
            out
        })
        .collect()
}

/// Per-model dev predictions aligned with gold labels, for weight fitting.
/// Queries without a gold example are skipped; a model that did not answer
/// a query (or whose answer failed to parse) counts as predicting neutral.
pub fn dev_predictions(
    records: &[QueryRecord],
    gold: &HashMap<String, LabelVector>,
) -> (Vec<(String, Vec<LabelVector>)>, Vec<LabelVector>) {
    let mut models: Vec<String> = records
        .iter()
        .flat_map(|r| r.predictions.iter().map(|p| p.model_id.clone()))
        .collect();
    models.sort();
    models.dedup();
    let mut per_model: Vec<(String, Vec<LabelVector>)> = models.into_iter().map(|m| (m, Vec::new())).collect();
    let mut gold_out = Vec::new();
    for r in records {
        let Some(g) = gold.get(&r.query_id) else {
            log::warn!("no gold labels for query `{}`", r.query_id);
            continue;
        };
        gold_out.push(*g);
        for (model, preds) in per_model.iter_mut() {
            let v = r
                .predictions
                .iter()
                .find(|p| &p.model_id == model && p.votes())
                .map(|p| p.outcome.labels)
                .unwrap_or(LabelVector::NEUTRAL);
            preds.push(v);
        }
    }
    (per_model, gold_out)
}
