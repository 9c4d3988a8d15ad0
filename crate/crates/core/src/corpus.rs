//! Labeled example storage: CSV/JSONL ingestion, validation, and grouping by
//! language and split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::labels::{EmotionLabel, LabelVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub language: String,
    pub text: String,
    pub gold: LabelVector,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CorpusFormat::Csv),
            "jsonl" | "ndjson" => Ok(CorpusFormat::Jsonl),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

impl CorpusFormat {
    /// Guess from the file extension; anything other than `.jsonl`/`.ndjson`
    /// is treated as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Csv,
        }
    }
}

/// Per-file defaults and policy for [`load_corpus`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub format: CorpusFormat,
    /// Used for rows that do not carry their own language.
    pub language: String,
    /// Used for rows that do not carry their own split.
    pub split: Split,
    /// `None` picks the default: strict for train/dev files, lenient otherwise.
    pub strict: Option<bool>,
}

impl LoadOptions {
    pub fn new(format: CorpusFormat) -> Self {
        LoadOptions {
            format,
            language: "und".to_string(),
            split: Split::Train,
            strict: None,
        }
    }

    pub fn language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }

    pub fn split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = Some(strict);
        self
    }

    pub fn is_strict(&self) -> bool {
        self.strict
            .unwrap_or(matches!(self.split, Split::Train | Split::Dev))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MalformedRow {
    /// 1-based line number in the source file.
    pub line: u64,
    pub reason: String,
}

impl fmt::Display for MalformedRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid CSV header: {0}")]
    BadHeader(String),
    #[error("{} malformed row(s), first: {}", .0.len(), .0[0])]
    Malformed(Vec<MalformedRow>),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Result of a lenient or successful strict load.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub corpus: Corpus,
    /// Rows that were skipped. Always empty after a strict load.
    pub malformed: Vec<MalformedRow>,
}

/// Immutable collection of labeled examples, grouped by `(language, split)`.
///
/// Examples keep their file order within each group. Lookups by id return
/// the first matching example; the loader rejects duplicate ids within a
/// group, so this only matters for corpora assembled by hand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    examples: Vec<LabeledExample>,
    groups: BTreeMap<(String, Split), Vec<usize>>,
}

impl Corpus {
    pub fn from_examples(examples: Vec<LabeledExample>) -> Self {
        let mut groups: BTreeMap<(String, Split), Vec<usize>> = BTreeMap::new();
        for (i, ex) in examples.iter().enumerate() {
            groups
                .entry((ex.language.clone(), ex.split))
                .or_default()
                .push(i);
        }
        Corpus { examples, groups }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn group(&self, language: &str, split: Split) -> impl Iterator<Item = &LabeledExample> {
        self.groups
            .get(&(language.to_string(), split))
            .into_iter()
            .flatten()
            .map(move |&i| &self.examples[i])
    }

    pub fn get(&self, language: &str, split: Split, id: &str) -> Option<&LabeledExample> {
        self.group(language, split).find(|e| e.id == id)
    }

    pub fn languages(&self) -> Vec<&str> {
        let mut langs: Vec<&str> = self.groups.keys().map(|(l, _)| l.as_str()).collect();
        langs.dedup();
        langs
    }

    /// Example counts per `(language, split)`.
    pub fn counts(&self) -> BTreeMap<(String, Split), usize> {
        self.groups
            .iter()
            .map(|(k, v)| (k.clone(), v.len()))
            .collect()
    }

    pub fn merge(mut self, other: Corpus) -> Corpus {
        self.examples.extend(other.examples);
        Corpus::from_examples(self.examples)
    }

    /// One JSON object per line, with `language` and `split` included so the
    /// file reloads to the same corpus.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), CorpusError> {
        for ex in &self.examples {
            let row = JsonRowOut {
                id: &ex.id,
                text: &ex.text,
                labels: &ex.gold,
                language: &ex.language,
                split: ex.split,
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// CSV with the canonical `id,text,anger,...,disgust` header and 0/1 cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CorpusError> {
        write_labels_csv(
            out,
            self.examples.iter().map(|e| (e.id.as_str(), e.text.as_str(), &e.gold)),
        )
    }
}

/// Writes `id,text,<six labels>` rows with 0/1 label cells.
pub fn write_labels_csv<'a, W, I>(out: W, rows: I) -> Result<(), CorpusError>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a str, &'a LabelVector)>,
{
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id", "text"];
    header.extend(EmotionLabel::ALL.iter().map(|l| l.key()));
    w.write_record(&header)?;
    for (id, text, labels) in rows {
        let mut rec = vec![id.to_string(), text.to_string()];
        rec.extend(labels.flags().iter().map(|&f| if f { "1" } else { "0" }.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonRowOut<'a> {
    id: &'a str,
    text: &'a str,
    #[serde(flatten)]
    labels: &'a LabelVector,
    language: &'a str,
    split: Split,
}

const REQUIRED_COLUMNS: [&str; 2] = ["id", "text"];

pub fn load_corpus(path: &Path, options: &LoadOptions) -> Result<LoadOutcome, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::FileNotFound(path.to_path_buf()));
    }
    let rows = match options.format {
        CorpusFormat::Csv => read_csv_rows(path, options)?,
        CorpusFormat::Jsonl => read_jsonl_rows(path, options)?,
    };
    finish_load(rows, options)
}

type RowResult = (u64, Result<LabeledExample, String>);

fn finish_load(rows: Vec<RowResult>, options: &LoadOptions) -> Result<LoadOutcome, CorpusError> {
    let mut seen: HashMap<(String, Split, String), u64> = HashMap::new();
    let mut examples = Vec::new();
    let mut malformed = Vec::new();
    for (line, row) in rows {
        match row {
            Ok(ex) => {
                let key = (ex.language.clone(), ex.split, ex.id.clone());
                if let Some(first) = seen.get(&key) {
                    malformed.push(MalformedRow {
                        line,
                        reason: format!("duplicate id `{}` (first seen on line {first})", ex.id),
                    });
                } else {
                    seen.insert(key, line);
                    examples.push(ex);
                }
            }
            Err(reason) => malformed.push(MalformedRow { line, reason }),
        }
    }
    if options.is_strict() && !malformed.is_empty() {
        return Err(CorpusError::Malformed(malformed));
    }
    Ok(LoadOutcome {
        corpus: Corpus::from_examples(examples),
        malformed,
    })
}

fn parse_binary_cell(cell: &str, label: EmotionLabel) -> Result<bool, String> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("non-binary label `{other}` for {label}")),
    }
}

fn check_text(text: &str) -> Result<(), String> {
    if text.trim().is_empty() {
        Err("empty text".to_string())
    } else {
        Ok(())
    }
}

fn check_id(id: &str) -> Result<(), String> {
    if id.trim().is_empty() {
        Err("empty id".to_string())
    } else {
        Ok(())
    }
}

fn read_csv_rows(path: &Path, options: &LoadOptions) -> Result<Vec<RowResult>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let column = |name: &str| header.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    for name in REQUIRED_COLUMNS
        .iter()
        .copied()
        .chain(EmotionLabel::ALL.iter().map(|l| l.key()))
    {
        if column(name).is_none() {
            return Err(CorpusError::BadHeader(format!(
                "missing column `{name}` (found: {})",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let id_col = column("id").unwrap();
    let text_col = column("text").unwrap();
    let label_cols: Vec<usize> = EmotionLabel::ALL
        .iter()
        .map(|l| column(l.key()).unwrap())
        .collect();
    let language_col = column("language");
    let split_col = column("split");

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rows.push((line, Err(format!("unreadable row: {e}"))));
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parsed = (|| {
            if record.len() != header.len() {
                return Err(format!(
                    "expected {} fields, found {}",
                    header.len(),
                    record.len()
                ));
            }
            let id = record[id_col].to_string();
            check_id(&id)?;
            let text = record[text_col].to_string();
            check_text(&text)?;
            let mut gold = LabelVector::NEUTRAL;
            for (label, &col) in EmotionLabel::ALL.iter().zip(&label_cols) {
                gold.set(*label, parse_binary_cell(&record[col], *label)?);
            }
            let language = match language_col.map(|c| record[c].trim()) {
                Some(l) if !l.is_empty() => l.to_string(),
                _ => options.language.clone(),
            };
            let split = match split_col.map(|c| record[c].trim()) {
                Some(s) if !s.is_empty() => s.parse()?,
                _ => options.split,
            };
            Ok(LabeledExample {
                id,
                language,
                text,
                gold,
                split,
            })
        })();
        rows.push((line, parsed));
    }
    Ok(rows)
}

fn read_jsonl_rows(path: &Path, options: &LoadOptions) -> Result<Vec<RowResult>, CorpusError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        rows.push((lineno, parse_json_row(&line, options)));
    }
    Ok(rows)
}

fn parse_json_row(line: &str, options: &LoadOptions) -> Result<LabeledExample, String> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| "row is not a JSON object".to_string())?;
    let str_field = |name: &str| -> Result<Option<String>, String> {
        match obj.get(name) {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(format!("field `{name}` must be a string, got {other}")),
        }
    };
    let id = str_field("id")?.ok_or("missing field `id`")?;
    check_id(&id)?;
    let text = str_field("text")?.ok_or("missing field `text`")?;
    check_text(&text)?;
    let mut gold = LabelVector::NEUTRAL;
    for label in EmotionLabel::ALL {
        match obj.get(label.key()) {
            Some(serde_json::Value::Bool(b)) => gold.set(label, *b),
            Some(other) => return Err(format!("non-boolean label `{other}` for {label}")),
            None => return Err(format!("missing label `{label}`")),
        }
    }
    let language = str_field("language")?
        .filter(|l| !l.trim().is_empty())
        .unwrap_or_else(|| options.language.clone());
    let split = match str_field("split")? {
        Some(s) => s.parse()?,
        None => options.split,
    };
    Ok(LabeledExample {
        id,
        language,
        text,
        gold,
        split,
    })
}

/// Reads `(id, text)` query pairs from a CSV or JSONL file. Label columns, if
/// present, are ignored.
pub fn load_queries(path: &Path, format: CorpusFormat) -> Result<Vec<(String, String)>, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::FileNotFound(path.to_path_buf()));
    }
    let mut out = Vec::new();
    match format {
        CorpusFormat::Csv => {
            let mut reader = csv::Reader::from_path(path)?;
            let header = reader.headers()?.clone();
            let col = |n: &str| header.iter().position(|h| h.trim().eq_ignore_ascii_case(n));
            let (Some(id_col), Some(text_col)) = (col("id"), col("text")) else {
                return Err(CorpusError::BadHeader("query file needs `id` and `text` columns".into()));
            };
            for rec in reader.records() {
                let rec = rec?;
                out.push((rec[id_col].to_string(), rec[text_col].to_string()));
            }
        }
        CorpusFormat::Jsonl => {
            #[derive(Deserialize)]
            struct Q {
                id: String,
                text: String,
            }
            for line in BufReader::new(fs::File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let q: Q = serde_json::from_str(&line)?;
                out.push((q.id, q.text));
            }
        }
    }
    Ok(out)
}

/// Findings from [`validate_corpus`]. Nothing here rejects the corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Ids seen more than once within the same `(language, split)`.
    pub duplicates: Vec<String>,
    /// Ids whose text is empty after trimming.
    pub empty_texts: Vec<String>,
    /// `"lang/split"` → count.
    pub counts: BTreeMap<String, usize>,
    /// Fraction of examples with each label set, in canonical label order.
    pub positive_rates: BTreeMap<EmotionLabel, f64>,
}

impl ValidationReport {
    pub fn issues(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .duplicates
            .iter()
            .map(|id| format!("duplicate id `{id}`"))
            .collect();
        out.extend(self.empty_texts.iter().map(|id| format!("empty text for `{id}`")));
        out
    }

    pub fn is_clean(&self) -> bool {
        self.duplicates.is_empty() && self.empty_texts.is_empty()
    }
}

pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport::default();
    for ((lang, split), n) in corpus.counts() {
        report.counts.insert(format!("{lang}/{split}"), n);
        let mut seen = HashMap::new();
        for ex in corpus.group(&lang, split) {
            let count = seen.entry(ex.id.as_str()).or_insert(0usize);
            *count += 1;
            if *count == 2 {
                report.duplicates.push(ex.id.clone());
            }
        }
    }
    for ex in corpus.examples() {
        if ex.text.trim().is_empty() {
            report.empty_texts.push(ex.id.clone());
        }
    }
    let n = corpus.len();
    for label in EmotionLabel::ALL {
        let positives = corpus.examples().iter().filter(|e| e.gold.get(label)).count();
        let rate = if n == 0 { 0.0 } else { positives as f64 / n as f64 };
        report.positive_rates.insert(label, rate);
    }
    report
}
