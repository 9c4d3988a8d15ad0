//! Combining per-model label vectors into one decision.
//!
//! Every voting strategy uses the same rule per label: a label is positive
//! when its (possibly weighted) share of votes is at least one half. The
//! share is taken over the models that actually voted, so a missing model
//! neither counts for nor against a label.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::evaluation::{score, EvalError};
use crate::generators::{call_with_retry, Generator, ModelPrediction};
use crate::labels::{EmotionLabel, LabelVector};
use crate::prompting::{parse_response, ChatMessage, ChatRole, ParseStatus, PromptBundle};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyId {
    /// The named model's prediction, unchanged.
    Single(String),
    Majority,
    /// Votes weighted by each model's dev micro-F1.
    WeightedMicro,
    /// Votes weighted by each model's dev macro-F1.
    WeightedMacro,
    /// Votes on label `l` weighted by each model's dev F1 on `l`.
    WeightedByLabel,
    /// Predictions and few-shot examples handed to the named model to decide.
    LlmJudge(String),
}

impl StrategyId {
    /// The strategies that need no extra backend call.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, StrategyId::LlmJudge(_))
    }

    pub fn is_weighted(&self) -> bool {
        matches!(
            self,
            StrategyId::WeightedMicro | StrategyId::WeightedMacro | StrategyId::WeightedByLabel
        )
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyId::Single(m) => write!(f, "single:{m}"),
            StrategyId::Majority => f.write_str("majority"),
            StrategyId::WeightedMicro => f.write_str("weighted_micro"),
            StrategyId::WeightedMacro => f.write_str("weighted_macro"),
            StrategyId::WeightedByLabel => f.write_str("weighted_by_label"),
            StrategyId::LlmJudge(m) => write!(f, "llm_judge:{m}"),
        }
    }
}

impl FromStr for StrategyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let model = |rest: &str| {
            if rest.is_empty() {
                Err(format!("strategy `{s}` needs a model id"))
            } else {
                Ok(rest.to_string())
            }
        };
        match s {
            "majority" => Ok(StrategyId::Majority),
            "weighted_micro" => Ok(StrategyId::WeightedMicro),
            "weighted_macro" => Ok(StrategyId::WeightedMacro),
            "weighted_by_label" => Ok(StrategyId::WeightedByLabel),
            _ => {
                if let Some(rest) = s.strip_prefix("single:") {
                    Ok(StrategyId::Single(model(rest)?))
                } else if let Some(rest) = s.strip_prefix("llm_judge:") {
                    Ok(StrategyId::LlmJudge(model(rest)?))
                } else {
                    Err(format!(
                        "unknown strategy `{s}` (expected single:<model>, majority, weighted_micro, \
                         weighted_macro, weighted_by_label, llm_judge:<model>)"
                    ))
                }
            }
        }
    }
}

impl Serialize for StrategyId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrategyId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AggregationError {
    #[error("no available predictions to aggregate")]
    NoAvailablePredictions,
    #[error("strategy needs a weight table")]
    MissingWeights,
    #[error("weight table has no entry for model `{0}`")]
    MissingModelWeights(String),
    #[error("model `{0}` has no usable prediction")]
    ModelNotAvailable(String),
    #[error("llm judge needs a judge backend and prompt context")]
    MissingJudge,
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("model `{model}`: {source}")]
    Fit { model: String, source: EvalError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights<T> {
    pub micro_f1: T,
    pub macro_f1: T,
    /// Dev F1 per label, canonical order.
    pub per_label: [T; 6],
}

/// Dev-set F1 scores used as vote weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable<T> {
    pub language: String,
    pub models: BTreeMap<String, ModelWeights<T>>,
    /// Labels on which no model has a positive per-label weight; these fall
    /// back to unweighted majority under `weighted_by_label`.
    #[serde(default)]
    pub fallback_labels: Vec<EmotionLabel>,
}

impl<T: Scalar> WeightTable<T> {
    fn weight(&self, strategy: &StrategyId, model: &str, label: EmotionLabel) -> Result<T, AggregationError> {
        let w = self
            .models
            .get(model)
            .ok_or_else(|| AggregationError::MissingModelWeights(model.to_string()))?;
        Ok(match strategy {
            StrategyId::WeightedMicro => w.micro_f1,
            StrategyId::WeightedMacro => w.macro_f1,
            StrategyId::WeightedByLabel => w.per_label[label.index()],
            _ => T::one(),
        })
    }

    /// Checks that every weight lies in `[0, 1]`.
    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: T| v >= T::zero() && v <= T::one();
        for (m, w) in &self.models {
            if !ok(w.micro_f1) || !ok(w.macro_f1) || !w.per_label.iter().all(|&v| ok(v)) {
                return Err(format!("weights for `{m}` outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Multiplies every weight by `c`.
    pub fn scaled(&self, c: T) -> Self {
        WeightTable {
            language: self.language.clone(),
            models: self
                .models
                .iter()
                .map(|(m, w)| {
                    (
                        m.clone(),
                        ModelWeights {
                            micro_f1: w.micro_f1 * c,
                            macro_f1: w.macro_f1 * c,
                            per_label: w.per_label.map(|v| v * c),
                        },
                    )
                })
                .collect(),
            fallback_labels: self.fallback_labels.clone(),
        }
    }
}

/// Scores each model's dev predictions against gold and stores the F1s as
/// weights.
pub fn fit_weights<T: Scalar>(
    language: &str,
    dev_predictions: &[(String, Vec<LabelVector>)],
    gold: &[LabelVector],
) -> Result<WeightTable<T>, AggregationError> {
    let mut models = BTreeMap::new();
    for (model, preds) in dev_predictions {
        let report = score::<T>(preds, gold).map_err(|source| AggregationError::Fit {
            model: model.clone(),
            source,
        })?;
        models.insert(
            model.clone(),
            ModelWeights {
                micro_f1: report.micro_f1,
                macro_f1: report.macro_f1,
                per_label: report.per_label.map(|m| m.f1),
            },
        );
    }
    let fallback_labels = EmotionLabel::ALL
        .into_iter()
        .filter(|l| models.values().all(|w: &ModelWeights<T>| w.per_label[l.index()] <= T::zero()))
        .collect();
    Ok(WeightTable {
        language: language.to_string(),
        models,
        fallback_labels,
    })
}

/// What the judge backend was asked and answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub model_id: String,
    pub raw: String,
    pub status: ParseStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregated {
    pub labels: LabelVector,
    /// Labels decided by unweighted majority because the voting models'
    /// weights on them summed to zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_labels: Vec<EmotionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeRecord>,
    /// Set when the decision did not come from the requested strategy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Aggregated {
    fn plain(labels: LabelVector) -> Self {
        Aggregated { labels, fallback_labels: Vec::new(), judge: None, note: None }
    }
}

fn majority_label(votes: &[(&str, LabelVector)], label: EmotionLabel) -> bool {
    let yes = votes.iter().filter(|(_, v)| v.get(label)).count();
    2 * yes >= votes.len()
}

/// Applies a deterministic strategy to the votes of the models that
/// answered. Order of `votes` does not matter.
pub fn combine_votes<T: Scalar>(
    strategy: &StrategyId,
    votes: &[(&str, LabelVector)],
    weights: Option<&WeightTable<T>>,
) -> Result<Aggregated, AggregationError> {
    if votes.is_empty() {
        return Err(AggregationError::NoAvailablePredictions);
    }
    match strategy {
        StrategyId::Single(model) => votes
            .iter()
            .find(|(m, _)| m == model)
            .map(|(_, v)| Aggregated::plain(*v))
            .ok_or_else(|| AggregationError::ModelNotAvailable(model.clone())),
        StrategyId::Majority => {
            let mut out = LabelVector::NEUTRAL;
            for label in EmotionLabel::ALL {
                out.set(label, majority_label(votes, label));
            }
            Ok(Aggregated::plain(out))
        }
        StrategyId::WeightedMicro | StrategyId::WeightedMacro | StrategyId::WeightedByLabel => {
            let table = weights.ok_or(AggregationError::MissingWeights)?;
            let mut out = Aggregated::plain(LabelVector::NEUTRAL);
            for label in EmotionLabel::ALL {
                let mut total = T::zero();
                let mut yes = T::zero();
                for (model, v) in votes {
                    let w = table.weight(strategy, model, label)?;
                    total = total + w;
                    if v.get(label) {
                        yes = yes + w;
                    }
                }
                let positive = if total > T::zero() {
                    // yes / total >= 1/2
                    yes + yes >= total
                } else {
                    out.fallback_labels.push(label);
                    majority_label(votes, label)
                };
                out.labels.set(label, positive);
            }
            Ok(out)
        }
        StrategyId::LlmJudge(_) => Err(AggregationError::MissingJudge),
    }
}

fn usable_votes(predictions: &[ModelPrediction]) -> Vec<(&str, LabelVector)> {
    predictions
        .iter()
        .filter(|p| p.votes())
        .map(|p| (p.model_id.as_str(), p.outcome.labels))
        .collect()
}

/// Judge backend plus the prompt the ensemble answered.
pub struct JudgeContext<'a> {
    pub backend: &'a dyn Generator,
    pub prompt: &'a PromptBundle,
    pub query_id: &'a str,
}

/// Query id under which judge calls are issued (and replay entries keyed).
pub fn judge_query_id(query_id: &str) -> String {
    format!("{query_id}::judge")
}

/// System instruction (the detection prompt plus a combining instruction),
/// then one user message listing each model's prediction, the few-shot
/// examples, and the query text.
pub fn render_judge_messages(prompt: &PromptBundle, votes: &[(&str, LabelVector)]) -> Vec<ChatMessage> {
    let system = format!(
        "{}\n\nSeveral models have already classified the text. Their predictions and a set of \
         labeled examples follow. Combine them into one final answer in the same JSON format.",
        prompt.system_text
    );
    let mut user = String::new();
    for (model, v) in votes {
        user.push_str(&format!("Model {model} predicts: {}\n", v.to_json()));
    }
    if !prompt.shots.is_empty() {
        user.push_str("\nExamples:\n");
        for shot in &prompt.shots {
            user.push_str(&format!("Text: {}\nLabels: {}\n", shot.text, shot.answer));
        }
    }
    user.push_str(&format!("\nText: {}", prompt.query_text));
    vec![ChatMessage::new(ChatRole::System, system), ChatMessage::new(ChatRole::User, user)]
}

/// Turns a judge response into a decision, falling back to majority when
/// it cannot be parsed.
pub fn judge_decision(judge_model: &str, raw: &str, votes: &[(&str, LabelVector)]) -> Result<Aggregated, AggregationError> {
    let outcome = parse_response(raw);
    let record = JudgeRecord {
        model_id: judge_model.to_string(),
        raw: raw.to_string(),
        status: outcome.status,
    };
    if outcome.is_usable() {
        return Ok(Aggregated {
            labels: outcome.labels,
            fallback_labels: Vec::new(),
            judge: Some(record),
            note: None,
        });
    }
    let mut fallback = combine_votes::<f64>(&StrategyId::Majority, votes, None)?;
    fallback.judge = Some(record);
    fallback.note = Some(format!(
        "judge response unparseable ({}); used majority",
        outcome.reason.unwrap_or_default()
    ));
    Ok(fallback)
}

/// Aggregates one query's predictions. Predictions from unavailable
/// backends and responses that failed to parse do not vote.
pub fn aggregate<T: Scalar>(
    strategy: &StrategyId,
    predictions: &[ModelPrediction],
    weights: Option<&WeightTable<T>>,
    judge: Option<JudgeContext<'_>>,
) -> Result<Aggregated, AggregationError> {
    let votes = usable_votes(predictions);
    if votes.is_empty() {
        return Err(AggregationError::NoAvailablePredictions);
    }
    match strategy {
        StrategyId::LlmJudge(_) => {
            let ctx = judge.ok_or(AggregationError::MissingJudge)?;
            let messages = render_judge_messages(ctx.prompt, &votes);
            let attempt = call_with_retry(ctx.backend, &messages, &judge_query_id(ctx.query_id));
            let raw = attempt
                .result
                .map_err(|e| AggregationError::JudgeUnavailable(e.to_string()))?;
            judge_decision(ctx.backend.model_id(), &raw, &votes)
        }
        _ => combine_votes(strategy, &votes, weights),
    }
}

/// Re-runs aggregation from stored predictions; for the judge strategy the
/// stored judge response is re-parsed instead of calling the backend.
pub fn reaggregate<T: Scalar>(
    strategy: &StrategyId,
    predictions: &[ModelPrediction],
    weights: Option<&WeightTable<T>>,
    stored_judge: Option<&JudgeRecord>,
) -> Result<Aggregated, AggregationError> {
    match strategy {
        StrategyId::LlmJudge(_) => {
            let votes = usable_votes(predictions);
            if votes.is_empty() {
                return Err(AggregationError::NoAvailablePredictions);
            }
            let judge = stored_judge.ok_or(AggregationError::MissingJudge)?;
            judge_decision(&judge.model_id, &judge.raw, &votes)
        }
        _ => aggregate(strategy, predictions, weights, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{FixtureEntry, ReplayBackend, ReplayFixture};
    use crate::prompting::build_prompt;
    use crate::scalar::Exact;
    use std::sync::Arc;

    const JOY: EmotionLabel = EmotionLabel::Joy;

    fn joy(v: bool) -> LabelVector {
        let mut l = LabelVector::NEUTRAL;
        l.set(JOY, v);
        l
    }

    fn votes(v: &[bool]) -> Vec<(String, LabelVector)> {
        v.iter().enumerate().map(|(i, &b)| (format!("m{i}"), joy(b))).collect()
    }

    fn refs(v: &[(String, LabelVector)]) -> Vec<(&str, LabelVector)> {
        v.iter().map(|(m, l)| (m.as_str(), *l)).collect()
    }

    fn table(weights: &[f64]) -> WeightTable<f64> {
        WeightTable {
            language: "eng".into(),
            models: weights
                .iter()
                .enumerate()
                .map(|(i, &w)| (format!("m{i}"), ModelWeights { micro_f1: w, macro_f1: w, per_label: [w; 6] }))
                .collect(),
            fallback_labels: vec![],
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in ["single:gpt-4o-mini", "majority", "weighted_micro", "weighted_macro", "weighted_by_label", "llm_judge:gpt-4o-mini"] {
            assert_eq!(s.parse::<StrategyId>().unwrap().to_string(), s);
        }
        assert!("single:".parse::<StrategyId>().is_err());
        assert!("vote".parse::<StrategyId>().is_err());
        let json = serde_json::to_string(&StrategyId::WeightedByLabel).unwrap();
        assert_eq!(json, "\"weighted_by_label\"");
    }

    #[test]
    fn strict_majority() {
        let v = votes(&[true, true, false]);
        let out = combine_votes::<f64>(&StrategyId::Majority, &refs(&v), None).unwrap();
        assert!(out.labels.get(JOY));
    }

    #[test]
    fn majority_tie_is_positive() {
        let v = votes(&[true, true, false, false]);
        let out = combine_votes::<f64>(&StrategyId::Majority, &refs(&v), None).unwrap();
        assert!(out.labels.get(JOY));
        let v = votes(&[true, false, false]);
        assert!(!combine_votes::<f64>(&StrategyId::Majority, &refs(&v), None).unwrap().labels.get(JOY));
    }

    #[test]
    fn weighted_arithmetic() {
        // (0.8 + 0.2) / 1.6 = 0.625
        let v = votes(&[true, false, true]);
        let t = table(&[0.8, 0.6, 0.2]);
        for s in [StrategyId::WeightedMicro, StrategyId::WeightedMacro, StrategyId::WeightedByLabel] {
            assert!(combine_votes(&s, &refs(&v), Some(&t)).unwrap().labels.get(JOY));
        }
        // 0.6 + 0.2 is exactly half: ties are positive
        let v = votes(&[false, true, true]);
        assert!(combine_votes(&StrategyId::WeightedMicro, &refs(&v), Some(&t)).unwrap().labels.get(JOY));
        let v = votes(&[false, false, true]);
        assert!(!combine_votes(&StrategyId::WeightedMicro, &refs(&v), Some(&t)).unwrap().labels.get(JOY));
    }

    #[test]
    fn weighted_needs_table() {
        let v = votes(&[true]);
        assert!(matches!(
            combine_votes::<f64>(&StrategyId::WeightedMacro, &refs(&v), None),
            Err(AggregationError::MissingWeights)
        ));
        let t = table(&[]);
        assert!(matches!(
            combine_votes(&StrategyId::WeightedMacro, &refs(&v), Some(&t)),
            Err(AggregationError::MissingModelWeights(_))
        ));
    }

    #[test]
    fn zero_weight_label_falls_back_to_majority() {
        let v = votes(&[true, true, false]);
        let t = table(&[0.0, 0.0, 0.0]);
        let out = combine_votes(&StrategyId::WeightedByLabel, &refs(&v), Some(&t)).unwrap();
        assert!(out.labels.get(JOY));
        assert_eq!(out.fallback_labels.len(), 6);
    }

    #[test]
    fn single_model() {
        let v = votes(&[false, true]);
        let out = combine_votes::<f64>(&StrategyId::Single("m1".into()), &refs(&v), None).unwrap();
        assert!(out.labels.get(JOY));
        assert!(matches!(
            combine_votes::<f64>(&StrategyId::Single("m9".into()), &refs(&v), None),
            Err(AggregationError::ModelNotAvailable(_))
        ));
    }

    #[test]
    fn empty_votes() {
        assert!(matches!(
            combine_votes::<f64>(&StrategyId::Majority, &[], None),
            Err(AggregationError::NoAvailablePredictions)
        ));
    }

    #[test]
    fn fit_perfect_and_degenerate_models() {
        let gold: Vec<LabelVector> = (0..6).map(|i| LabelVector::from_bits(1 << i)).collect();
        let dev = vec![
            ("perfect".to_string(), gold.clone()),
            ("silent".to_string(), vec![LabelVector::NEUTRAL; 6]),
        ];
        let t = fit_weights::<Exact>("eng", &dev, &gold).unwrap();
        let one = Exact::from_integer(1);
        let zero = Exact::from_integer(0);
        let p = &t.models["perfect"];
        assert_eq!((p.micro_f1, p.macro_f1), (one, one));
        assert!(p.per_label.iter().all(|&w| w == one));
        assert!(t.models["silent"].per_label.iter().all(|&w| w == zero));
        assert!(t.fallback_labels.is_empty());
        assert!(t.validate().is_ok());
    }

    #[test]
    fn fit_single_label_hand_counts() {
        // gold joy = [1, 1]; m1 = [1, 0] -> TP 1 FN 1 -> 2/3; m2 = [1, 1] -> 1
        let gold = vec![joy(true), joy(true)];
        let dev = vec![
            ("m1".to_string(), vec![joy(true), joy(false)]),
            ("m2".to_string(), vec![joy(true), joy(true)]),
        ];
        let t = fit_weights::<Exact>("eng", &dev, &gold).unwrap();
        assert_eq!(t.models["m1"].per_label[JOY.index()], Exact::new(2, 3));
        assert_eq!(t.models["m2"].per_label[JOY.index()], Exact::from_integer(1));
        assert!(t.fallback_labels.contains(&EmotionLabel::Anger));
    }

    #[test]
    fn fit_length_mismatch() {
        let dev = vec![("m".to_string(), vec![joy(true)])];
        assert!(matches!(fit_weights::<f64>("eng", &dev, &[]), Err(AggregationError::Fit { .. })));
    }

    fn pred(model: &str, raw: &str) -> ModelPrediction {
        ModelPrediction::from_raw(model, "q1", raw)
    }

    #[test]
    fn failed_parses_do_not_vote() {
        let preds = vec![
            pred("a", &joy(true).to_json()),
            pred("b", "garbage"),
            pred("c", "garbage"),
        ];
        let out = aggregate::<f64>(&StrategyId::Majority, &preds, None, None).unwrap();
        assert!(out.labels.get(JOY));
        let none = vec![pred("b", "garbage")];
        assert!(matches!(
            aggregate::<f64>(&StrategyId::Majority, &none, None, None),
            Err(AggregationError::NoAvailablePredictions)
        ));
    }

    #[test]
    fn judge_rendering_lists_models_and_shots() {
        let prompt = build_prompt("English", &[("shot text".into(), joy(true))], "the query");
        let v = [("m0", joy(true)), ("m1", joy(false))];
        let msgs = render_judge_messages(&prompt, &v);
        assert_eq!(msgs.len(), 2);
        assert!(msgs[0].content.starts_with("You are an expert at detecting emotions in text."));
        let user = &msgs[1].content;
        assert!(user.contains(&format!("Model m0 predicts: {}", joy(true).to_json())));
        assert!(user.contains("Text: shot text"));
        assert!(user.ends_with("Text: the query"));
    }

    #[test]
    fn judge_via_replay_and_fallback() {
        let prompt = build_prompt("English", &[], "q");
        let fixture = Arc::new(ReplayFixture::from_entries([
            FixtureEntry { model_id: "judge".into(), query_id: "q1::judge".into(), response: Some(joy(true).to_json()), error: None },
            FixtureEntry { model_id: "judge".into(), query_id: "q2::judge".into(), response: Some("dunno".into()), error: None },
        ]));
        let judge = ReplayBackend::new("judge", fixture);
        let preds = vec![pred("a", &joy(false).to_json())];
        let strategy = StrategyId::LlmJudge("judge".into());

        let ctx = JudgeContext { backend: &judge, prompt: &prompt, query_id: "q1" };
        let out = aggregate::<f64>(&strategy, &preds, None, Some(ctx)).unwrap();
        assert!(out.labels.get(JOY));
        assert_eq!(out.judge.as_ref().unwrap().status, ParseStatus::Ok);
        let again = reaggregate::<f64>(&strategy, &preds, None, out.judge.as_ref()).unwrap();
        assert_eq!(again, out);

        let ctx = JudgeContext { backend: &judge, prompt: &prompt, query_id: "q2" };
        let out = aggregate::<f64>(&strategy, &preds, None, Some(ctx)).unwrap();
        assert!(!out.labels.get(JOY));
        assert!(out.note.is_some());

        let ctx = JudgeContext { backend: &judge, prompt: &prompt, query_id: "q3" };
        assert!(matches!(
            aggregate::<f64>(&strategy, &preds, None, Some(ctx)),
            Err(AggregationError::JudgeUnavailable(_))
        ));
        assert!(matches!(aggregate::<f64>(&strategy, &preds, None, None), Err(AggregationError::MissingJudge)));
    }
}
