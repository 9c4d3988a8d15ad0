use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use emotion_rag::aggregation::{fit_weights, StrategyId, WeightTable};
use emotion_rag::config::{LanguageConfig, PipelineConfig};
use emotion_rag::corpus::{load_corpus, load_queries, validate_corpus, Corpus, CorpusFormat, LoadOptions, Split};
use emotion_rag::evaluation::{divergence_note, report, score, select_best, Candidate, LanguageRow};
use emotion_rag::generators::{build_backends, Generator};
use emotion_rag::labels::LabelVector;
use emotion_rag::pipeline::{build_retriever, dev_predictions, read_records, reaggregate_records, Pipeline, PipelineOptions};
use emotion_rag::retrieval::{
    load_index, save_embedding_index, save_ngram_index, EmbeddingIndex, LoadedIndex, NGramIndex, Retriever,
    RetrieverKind,
};

#[derive(Parser)]
#[command(name = "emotion-rag", version, about = "Retrieval-augmented LLM ensemble for multi-label emotion detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a CSV/JSONL corpus file and write it back as normalized JSONL.
    Ingest {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report duplicates, empty texts, counts and label rates.
    Validate {
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Build a retrieval index for one language and save it as a sidecar file.
    Index {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        language: String,
        #[arg(long, default_value = "ngram")]
        retriever: RetrieverKind,
        #[arg(long, default_value_t = 3)]
        n_max: usize,
        /// Config file providing the embedder for `--retriever embedding`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict labels for a query file.
    Predict(PredictArgs),
    /// Fit F1 vote weights from a dev-set run.
    FitWeights {
        /// `run.jsonl` from a `predict` run over the dev queries.
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        gold: GoldArgs,
        #[arg(long)]
        language: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the best strategy by dev micro-F1 (then macro-F1, then name).
    SelectBest(SelectArgs),
    /// Score predictions against gold labels.
    Evaluate {
        /// Labels CSV (`id,text,anger,...`) to score.
        #[arg(long, conflicts_with = "run")]
        pred: Option<PathBuf>,
        /// Score a stored run, optionally re-aggregated with `--strategy`.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<StrategyId>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        gold: GoldArgs,
        #[arg(long, default_value = "")]
        language: String,
    },
    /// Per-language summary table with cross-language averages.
    Report {
        /// CSV with columns language,strategy,dev_micro,dev_macro,test_micro,test_macro
        /// and optionally reference_strategy,reference_dev_micro,reference_dev_macro.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus file(s); format is inferred from the extension unless given.
    #[arg(long = "corpus", required = true, num_args = 1..)]
    paths: Vec<PathBuf>,
    #[arg(long)]
    format: Option<CorpusFormat>,
    /// Language for rows that do not name one (default: `--language`
    /// where the command has one, else `und`).
    #[arg(long = "corpus-language", id = "corpus_language")]
    language: Option<String>,
    /// Split for rows that do not name one.
    #[arg(long, default_value = "train")]
    split: Split,
    /// Fail on any malformed row (default: on for train/dev, off otherwise).
    #[arg(long)]
    strict: Option<bool>,
}

impl CorpusArgs {
    fn load(&self, default_language: &str) -> Result<Corpus> {
        let language = self.language.as_deref().unwrap_or(default_language);
        let mut corpus = Corpus::default();
        for path in &self.paths {
            let format = self.format.unwrap_or_else(|| CorpusFormat::from_path(path));
            let mut opts = LoadOptions::new(format).language(language).split(self.split);
            opts.strict = self.strict;
            let out = load_corpus(path, &opts).with_context(|| format!("loading {}", path.display()))?;
            for m in &out.malformed {
                eprintln!("{}: skipped {m}", path.display());
            }
            corpus = corpus.merge(out.corpus);
        }
        Ok(corpus)
    }
}

#[derive(Args)]
struct GoldArgs {
    /// Gold-labeled file (CSV or JSONL corpus format).
    #[arg(long)]
    gold: PathBuf,
    #[arg(long = "gold-format")]
    gold_format: Option<CorpusFormat>,
}

impl GoldArgs {
    fn load(&self) -> Result<HashMap<String, LabelVector>> {
        let format = self.gold_format.unwrap_or_else(|| CorpusFormat::from_path(&self.gold));
        let out = load_corpus(&self.gold, &LoadOptions::new(format).split(Split::Dev).strict(true))
            .with_context(|| format!("loading gold {}", self.gold.display()))?;
        Ok(out.corpus.examples().iter().map(|e| (e.id.clone(), e.gold)).collect())
    }
}

#[derive(Args)]
struct PredictArgs {
    /// Labeled training data used for retrieval.
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Queries to label (CSV or JSONL with `id` and `text`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    language: String,
    #[arg(long, default_value = "majority")]
    strategy: StrategyId,
    #[arg(long)]
    retriever: Option<RetrieverKind>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated backend ids (default: the language's configured pool).
    #[arg(long, value_delimiter = ',')]
    backends: Vec<String>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Prebuilt index sidecar to use instead of indexing the corpus.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Output directory for run.jsonl, labels.csv and run.meta.json.
    #[arg(long)]
    out: PathBuf,
    /// Fail queries that have nothing to retrieve instead of prompting zero-shot.
    #[arg(long)]
    no_zero_shot: bool,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
}

#[derive(Args)]
struct SelectArgs {
    /// CSV with columns strategy,dev_micro,dev_macro.
    #[arg(long, conflicts_with = "run")]
    candidates: Option<PathBuf>,
    /// Dev run to re-aggregate under every deterministic strategy.
    #[arg(long, requires = "gold_file")]
    run: Option<PathBuf>,
    #[arg(long = "gold", id = "gold_file")]
    gold: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "")]
    language: String,
    /// Externally reported pick to compare against; a note is printed when
    /// the selection differs.
    #[arg(long)]
    reference: Option<StrategyId>,
}

fn read_weights(path: &Path) -> Result<WeightTable<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: WeightTable<f64> = serde_json::from_str(&text)?;
    table.validate().map_err(|e| anyhow!(e))?;
    Ok(table)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Ingest { corpus, out } => {
            let c = corpus.load("und")?;
            c.write_jsonl(fs::File::create(&out)?)?;
            for ((lang, split), n) in c.counts() {
                println!("{lang}\t{split}\t{n}");
            }
        }
        Command::Validate { corpus } => {
            let c = corpus.load("und")?;
            let r = validate_corpus(&c);
            println!("{}", serde_json::to_string_pretty(&r)?);
            for issue in r.issues() {
                eprintln!("issue: {issue}");
            }
        }
        Command::Index { corpus, language, retriever, n_max, config, out } => {
            let c = corpus.load(&language)?;
            match retriever {
                RetrieverKind::Ngram => {
                    let idx = NGramIndex::build(&c, &language, n_max)?;
                    save_ngram_index(&idx, &out)?;
                    println!("indexed {} examples", idx.len());
                }
                RetrieverKind::Embedding => {
                    let cfg = PipelineConfig::load(config.as_deref().ok_or_else(|| anyhow!("--config required"))?)?;
                    let embedder = cfg.embedder.as_ref().ok_or_else(|| anyhow!("config has no embedder"))?.build()?;
                    let idx = EmbeddingIndex::build(&c, &language, embedder.as_ref())?;
                    save_embedding_index(&idx, &out)?;
                    println!("indexed {} examples", idx.len());
                }
            }
        }
        Command::Predict(args) => predict(args)?,
        Command::FitWeights { run, gold, language, out } => {
            let records = read_records(&run)?;
            let (per_model, gold) = dev_predictions(&records, &gold.load()?);
            let table = fit_weights::<f64>(&language, &per_model, &gold)?;
            fs::write(&out, serde_json::to_string_pretty(&table)? + "\n")?;
            for (m, w) in &table.models {
                println!("{m}\tmicro {:.4}\tmacro {:.4}", w.micro_f1, w.macro_f1);
            }
            if !table.fallback_labels.is_empty() {
                let names: Vec<_> = table.fallback_labels.iter().map(|l| l.key()).collect();
                eprintln!("no positive weight for: {} (majority fallback)", names.join(", "));
            }
        }
        Command::SelectBest(args) => select(args)?,
        Command::Evaluate { pred, run, strategy, weights, gold, language } => {
            let gold = gold.load()?;
            let preds: Vec<(String, LabelVector)> = if let Some(p) = pred {
                let out = load_corpus(&p, &LoadOptions::new(CorpusFormat::Csv).split(Split::Test).strict(true))?;
                out.corpus.examples().iter().map(|e| (e.id.clone(), e.gold)).collect()
            } else if let Some(r) = run {
                let mut records = read_records(&r)?;
                if let Some(s) = &strategy {
                    let w = weights.as_deref().map(read_weights).transpose()?;
                    records = reaggregate_records(&records, s, w.as_ref());
                }
                records.into_iter().map(|r| (r.query_id, r.labels)).collect()
            } else {
                bail!("one of --pred or --run is required");
            };
            let (p, g): (Vec<_>, Vec<_>) = preds
                .iter()
                .filter_map(|(id, v)| gold.get(id).map(|g| (*v, *g)))
                .unzip();
            if p.len() < preds.len() {
                eprintln!("{} predictions had no gold label", preds.len() - p.len());
            }
            let label = strategy.map(|s| s.to_string()).unwrap_or_default();
            let r = score::<f64>(&p, &g)?.with_context(language, label);
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Report { input, csv_out } => {
            let (rows, notes) = read_report_rows(&input)?;
            let summary = report(rows, notes).ok_or_else(|| anyhow!("no rows in {}", input.display()))?;
            print!("{}", summary.to_text());
            if let Some(path) = csv_out {
                fs::write(path, summary.to_csv())?;
            }
        }
    }
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let cfg = PipelineConfig::load(&args.config)?;
    let mut lang_cfg: LanguageConfig = cfg.language(&args.language);
    if let Some(r) = args.retriever {
        lang_cfg.retriever = r;
    }
    if args.k.is_some() {
        lang_cfg.k = args.k;
    }
    lang_cfg.validate()?;
    let corpus = args.corpus.load(&args.language)?;
    let queries = load_queries(&args.input, CorpusFormat::from_path(&args.input))?;

    let all = build_backends(&cfg.backends, &cfg.base_dir)?;
    let wanted: Vec<String> = if !args.backends.is_empty() {
        args.backends.clone()
    } else if !lang_cfg.model_ids.is_empty() {
        lang_cfg.model_ids.clone()
    } else {
        all.keys().cloned().collect()
    };
    let backends: Vec<Arc<dyn Generator>> = wanted
        .iter()
        .map(|m| all.get(m).cloned().ok_or_else(|| anyhow!("backend `{m}` is not configured")))
        .collect::<Result<_>>()?;
    lang_cfg.model_ids = wanted;

    let embedder = cfg.embedder.as_ref().map(|e| e.build()).transpose()?;
    let retriever = match &args.index {
        Some(path) => Some(match load_index(path)? {
            LoadedIndex::Ngram(i) => Retriever::Ngram(i),
            LoadedIndex::Embedding(index) => Retriever::Embedding {
                index,
                embedder: embedder.ok_or_else(|| anyhow!("embedding index needs an embedder in the config"))?,
            },
        }),
        None => match build_retriever(&corpus, &lang_cfg, embedder) {
            Ok(r) => Some(r),
            Err(e) if !args.no_zero_shot => {
                eprintln!("retrieval disabled ({e}); prompting zero-shot");
                None
            }
            Err(e) => return Err(e.into()),
        },
    };
    let weights = args.weights.as_deref().map(read_weights).transpose()?;
    if args.strategy.is_weighted() && weights.is_none() {
        bail!("strategy {} needs --weights", args.strategy);
    }
    let options = PipelineOptions {
        zero_shot_fallback: !args.no_zero_shot,
        query_parallelism: args.parallelism,
        pool_parallelism: args.parallelism,
    };
    let mut pipeline = Pipeline::new(&corpus, lang_cfg, retriever, backends, options)?;
    if let StrategyId::LlmJudge(judge) = &args.strategy {
        let b = all.get(judge).cloned().ok_or_else(|| anyhow!("judge backend `{judge}` is not configured"))?;
        pipeline = pipeline.with_judge(b);
    }
    let run = pipeline.predict_all(&queries, &args.strategy, weights.as_ref())?;
    run.save(&args.out)?;
    let failed = run.records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} queries, {} with errors; wrote {}",
        run.records.len(),
        failed,
        args.out.display()
    );
    Ok(())
}

fn select(args: SelectArgs) -> Result<()> {
    let candidates: Vec<Candidate<f64>> = if let Some(path) = &args.candidates {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in rdr.deserialize::<HashMap<String, String>>() {
            let rec = rec?;
            let get = |k: &str| rec.get(k).ok_or_else(|| anyhow!("missing column `{k}`"));
            out.push(Candidate::new(
                get("strategy")?.parse().map_err(|e: String| anyhow!(e))?,
                get("dev_micro")?.parse()?,
                get("dev_macro")?.parse()?,
            ));
        }
        out
    } else if let (Some(run), Some(gold)) = (&args.run, &args.gold) {
        let records = read_records(run)?;
        let gold = GoldArgs { gold: gold.clone(), gold_format: None }.load()?;
        let weights = args.weights.as_deref().map(read_weights).transpose()?;
        let mut strategies = vec![StrategyId::Majority];
        if weights.is_some() {
            strategies.extend([StrategyId::WeightedMicro, StrategyId::WeightedMacro, StrategyId::WeightedByLabel]);
        }
        let mut models: Vec<String> = records
            .iter()
            .flat_map(|r| r.predictions.iter().map(|p| p.model_id.clone()))
            .collect();
        models.sort();
        models.dedup();
        strategies.extend(models.into_iter().map(StrategyId::Single));
        let mut out = Vec::new();
        for s in strategies {
            let re = reaggregate_records(&records, &s, weights.as_ref());
            let (p, g): (Vec<_>, Vec<_>) = re
                .iter()
                .filter_map(|r| gold.get(&r.query_id).map(|g| (r.labels, *g)))
                .unzip();
            let rep = score::<f64>(&p, &g)?;
            println!("{s}\t{:.4}\t{:.4}", rep.micro_f1, rep.macro_f1);
            out.push(Candidate::from_report(s, &rep));
        }
        out
    } else {
        bail!("one of --candidates or --run/--gold is required");
    };
    let best = select_best(&candidates).ok_or_else(|| anyhow!("no candidates"))?;
    println!("best: {} (dev {:.3}/{:.3})", best.strategy, best.micro_f1, best.macro_f1);
    if let Some(reference) = &args.reference {
        let r = candidates
            .iter()
            .find(|c| &c.strategy == reference)
            .ok_or_else(|| anyhow!("reference {reference} is not among the candidates"))?;
        if let Some(note) = divergence_note(&args.language, best, r) {
            println!("note: {note}");
        }
    }
    Ok(())
}

fn read_report_rows(path: &Path) -> Result<(Vec<LanguageRow<f64>>, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for rec in rdr.deserialize::<HashMap<String, String>>() {
        let rec = rec?;
        let text = |k: &str| rec.get(k).map(|s| s.trim()).filter(|s| !s.is_empty());
        let num = |k: &str| -> Result<Option<f64>> { text(k).map(str::parse).transpose().map_err(Into::into) };
        let need = |k: &str| -> Result<f64> { num(k)?.ok_or_else(|| anyhow!("missing `{k}`")) };
        let row = LanguageRow {
            language: text("language").ok_or_else(|| anyhow!("missing `language`"))?.to_string(),
            strategy: text("strategy").unwrap_or_default().to_string(),
            dev_micro: need("dev_micro")?,
            dev_macro: need("dev_macro")?,
            test_micro: num("test_micro")?,
            test_macro: num("test_macro")?,
        };
        if let Some(reference) = text("reference_strategy") {
            let sel = Candidate::new(row.strategy.parse().map_err(|e: String| anyhow!(e))?, row.dev_micro, row.dev_macro);
            let refc = Candidate::new(
                reference.parse().map_err(|e: String| anyhow!(e))?,
                need("reference_dev_micro")?,
                need("reference_dev_macro")?,
            );
            notes.extend(divergence_note(&row.language, &sel, &refc));
        }
        rows.push(row);
    }
    Ok((rows, notes))
}
