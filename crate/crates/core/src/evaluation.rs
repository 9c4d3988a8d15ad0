//! Multi-label precision/recall/F1, dev-set strategy selection, and
//! per-language summary reports.
//!
//! Per-label F1 is `2TP / (2TP + FP + FN)` with `0/0 := 0`. Micro F1 pools
//! the counts of all six labels; macro F1 is the plain mean of the six
//! per-label scores.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aggregation::StrategyId;
use crate::labels::{EmotionLabel, LabelVector};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("length mismatch: {preds} predictions vs {gold} gold labels")]
    LengthMismatch { preds: usize, gold: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn f1<T: Scalar>(&self) -> T {
        T::ratio_or_zero(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn precision<T: Scalar>(&self) -> T {
        T::ratio_or_zero(self.tp, self.tp + self.fp)
    }

    pub fn recall<T: Scalar>(&self) -> T {
        T::ratio_or_zero(self.tp, self.tp + self.fn_)
    }
}

/// Per-label confusion counts, in canonical label order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub labels: [LabelCounts; 6],
}

impl ConfusionCounts {
    pub fn from_pairs(preds: &[LabelVector], gold: &[LabelVector]) -> Result<Self, EvalError> {
        if preds.len() != gold.len() {
            return Err(EvalError::LengthMismatch { preds: preds.len(), gold: gold.len() });
        }
        let mut counts = ConfusionCounts::default();
        for (p, g) in preds.iter().zip(gold) {
            counts.add(p, g);
        }
        Ok(counts)
    }

    pub fn add(&mut self, pred: &LabelVector, gold: &LabelVector) {
        for label in EmotionLabel::ALL {
            let c = &mut self.labels[label.index()];
            match (pred.get(label), gold.get(label)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }

    pub fn get(&self, label: EmotionLabel) -> LabelCounts {
        self.labels[label.index()]
    }

    /// Counts summed over labels.
    pub fn pooled(&self) -> LabelCounts {
        self.labels.iter().fold(LabelCounts::default(), |acc, c| LabelCounts {
            tp: acc.tp + c.tp,
            fp: acc.fp + c.fp,
            fn_: acc.fn_ + c.fn_,
            tn: acc.tn + c.tn,
        })
    }

    pub fn micro_f1<T: Scalar>(&self) -> T {
        self.pooled().f1()
    }

    pub fn macro_f1<T: Scalar>(&self) -> T {
        let sum = self.labels.iter().fold(T::zero(), |acc, c| acc + c.f1::<T>());
        sum / T::from_count(EmotionLabel::COUNT)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T> {
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub strategy: String,
    pub n_examples: usize,
    pub micro_f1: T,
    pub macro_f1: T,
    pub micro_precision: T,
    pub micro_recall: T,
    /// Canonical label order.
    pub per_label: [LabelMetrics<T>; 6],
    pub counts: ConfusionCounts,
}

impl<T: Scalar> EvalReport<T> {
    pub fn label(&self, label: EmotionLabel) -> &LabelMetrics<T> {
        &self.per_label[label.index()]
    }

    pub fn with_context(mut self, language: impl Into<String>, strategy: impl Into<String>) -> Self {
        self.language = language.into();
        self.strategy = strategy.into();
        self
    }
}

pub fn score<T: Scalar>(preds: &[LabelVector], gold: &[LabelVector]) -> Result<EvalReport<T>, EvalError> {
    let counts = ConfusionCounts::from_pairs(preds, gold)?;
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let per_label = EmotionLabel::ALL.map(|l| {
        let c = counts.get(l);
        LabelMetrics {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        }
    });
    let pooled = counts.pooled();
    Ok(EvalReport {
        language: String::new(),
        strategy: String::new(),
        n_examples: preds.len(),
        micro_f1: counts.micro_f1(),
        macro_f1: counts.macro_f1(),
        micro_precision: pooled.precision(),
        micro_recall: pooled.recall(),
        per_label,
        counts,
    })
}

/// A strategy's dev-set scores, as compared by [`select_best`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate<T> {
    pub strategy: StrategyId,
    pub micro_f1: T,
    pub macro_f1: T,
}

impl<T: Scalar> Candidate<T> {
    pub fn new(strategy: StrategyId, micro_f1: T, macro_f1: T) -> Self {
        Candidate { strategy, micro_f1, macro_f1 }
    }

    pub fn from_report(strategy: StrategyId, report: &EvalReport<T>) -> Self {
        Candidate::new(strategy, report.micro_f1, report.macro_f1)
    }
}

fn desc<T: PartialOrd>(a: &T, b: &T) -> Ordering {
    b.partial_cmp(a).unwrap_or(Ordering::Equal)
}

/// Highest micro F1, then highest macro F1, then strategy name ascending.
pub fn select_best<T: Scalar>(candidates: &[Candidate<T>]) -> Option<&Candidate<T>> {
    candidates.iter().min_by(|a, b| {
        desc(&a.micro_f1, &b.micro_f1)
            .then_with(|| desc(&a.macro_f1, &b.macro_f1))
            .then_with(|| a.strategy.to_string().cmp(&b.strategy.to_string()))
    })
}

/// Note for a language whose selected strategy differs from an externally
/// reported pick, or `None` when they agree.
pub fn divergence_note<T: Scalar>(language: &str, selected: &Candidate<T>, reference: &Candidate<T>) -> Option<String> {
    if selected.strategy == reference.strategy {
        return None;
    }
    Some(format!(
        "{language}: selected {} (dev {:.3}/{:.3}) differs from reference pick {} (dev {:.3}/{:.3}); \
         selection ranks by dev micro-F1, then macro-F1, then name",
        selected.strategy,
        selected.micro_f1.to_f64_lossy(),
        selected.macro_f1.to_f64_lossy(),
        reference.strategy,
        reference.micro_f1.to_f64_lossy(),
        reference.macro_f1.to_f64_lossy(),
    ))
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageRow<T> {
    pub language: String,
    pub strategy: String,
    pub dev_micro: T,
    pub dev_macro: T,
    pub test_micro: Option<T>,
    pub test_macro: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages<T> {
    pub dev_micro: T,
    pub dev_macro: T,
    /// Over rows that have test scores; `None` if no row does.
    pub test_micro: Option<T>,
    pub test_macro: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport<T> {
    pub rows: Vec<LanguageRow<T>>,
    pub average: Averages<T>,
    pub notes: Vec<String>,
}

fn mean<T: Scalar>(values: impl Iterator<Item = T>) -> Option<T> {
    let (sum, n) = values.fold((T::zero(), 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / T::from_count(n))
}

/// Builds the per-language table with unweighted cross-language averages.
/// Returns `None` for an empty row list.
pub fn report<T: Scalar>(rows: Vec<LanguageRow<T>>, notes: Vec<String>) -> Option<SummaryReport<T>> {
    let average = Averages {
        dev_micro: mean(rows.iter().map(|r| r.dev_micro))?,
        dev_macro: mean(rows.iter().map(|r| r.dev_macro))?,
        test_micro: mean(rows.iter().filter_map(|r| r.test_micro)),
        test_macro: mean(rows.iter().filter_map(|r| r.test_macro)),
    };
    Some(SummaryReport { rows, average, notes })
}

fn fmt_opt<T: Scalar>(v: Option<T>) -> String {
    v.map(|x| format!("{:.4}", x.to_f64_lossy())).unwrap_or_default()
}

impl<T: Scalar> SummaryReport<T> {
    pub const CSV_HEADER: [&'static str; 6] =
        ["language", "strategy", "dev_micro", "dev_macro", "test_micro", "test_macro"];

    /// CSV with one row per language and a final `average` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER).expect("in-memory write");
        let mut push = |lang: &str, strat: &str, dev_mi: T, dev_ma: T, test_mi: Option<T>, test_ma: Option<T>| {
            w.write_record([
                lang.to_string(),
                strat.to_string(),
                fmt_opt(Some(dev_mi)),
                fmt_opt(Some(dev_ma)),
                fmt_opt(test_mi),
                fmt_opt(test_ma),
            ])
            .expect("in-memory write");
        };
        for r in &self.rows {
            push(&r.language, &r.strategy, r.dev_micro, r.dev_macro, r.test_micro, r.test_macro);
        }
        let a = &self.average;
        push("average", "", a.dev_micro, a.dev_macro, a.test_micro, a.test_macro);
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Aligned plain-text table followed by any notes.
    pub fn to_text(&self) -> String {
        let mut cells: Vec<[String; 6]> = vec![Self::CSV_HEADER.map(str::to_string)];
        for r in &self.rows {
            cells.push([
                r.language.clone(),
                r.strategy.clone(),
                fmt_opt(Some(r.dev_micro)),
                fmt_opt(Some(r.dev_macro)),
                fmt_opt(r.test_micro),
                fmt_opt(r.test_macro),
            ]);
        }
        let a = &self.average;
        cells.push([
            "average".into(),
            String::new(),
            fmt_opt(Some(a.dev_micro)),
            fmt_opt(Some(a.dev_macro)),
            fmt_opt(a.test_micro),
            fmt_opt(a.test_macro),
        ]);
        let widths: Vec<usize> = (0..6)
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c < 2 {
                        format!("{:<w$}", s, w = widths[c])
                    } else {
                        format!("{:>w$}", s, w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        out
    }
}
