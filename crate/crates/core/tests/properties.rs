//! Property tests for the invariants of each module.

use std::collections::HashSet;

use emotion_rag::aggregation::{aggregate, ModelWeights, StrategyId, WeightTable};
use emotion_rag::corpus::{load_corpus, CorpusFormat, LoadOptions};
use emotion_rag::evaluation::score;
use emotion_rag::generators::{run_pool, Attempted, FixtureEntry, GenerateError, Generator, ReplayBackend, ReplayFixture};
use emotion_rag::prompting::{build_prompt, parse_response, ParseStatus};
use emotion_rag::retrieval::{ngram_score, ngram_sets, tokenize, EmbeddingIndex, IndexedExample, NGramIndex};
use emotion_rag::{Corpus, Exact, LabelVector, LabeledExample, ModelPrediction, Split};
use proptest::prelude::*;
use std::sync::Arc;
use std::time::Duration;

fn label_vector() -> impl Strategy<Value = LabelVector> {
    (0u8..64).prop_map(LabelVector::from_bits)
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-zé]{1,6}", 1..10).prop_map(|w| w.join(" "))
}

fn weight() -> impl Strategy<Value = Exact> {
    (0i64..=20).prop_map(|k| Exact::new(k, 20))
}

fn model_weights() -> impl Strategy<Value = ModelWeights<Exact>> {
    (weight(), weight(), prop::array::uniform6(weight())).prop_map(|(micro_f1, macro_f1, per_label)| ModelWeights {
        micro_f1,
        macro_f1,
        per_label,
    })
}

const MODELS: [&str; 4] = ["m1", "m2", "m3", "m4"];

fn table(weights: &[ModelWeights<Exact>]) -> WeightTable<Exact> {
    WeightTable {
        language: "eng".into(),
        models: MODELS.iter().zip(weights).map(|(m, w)| (m.to_string(), w.clone())).collect(),
        fallback_labels: vec![],
    }
}

fn pred(model: &str, v: Option<LabelVector>) -> ModelPrediction {
    match v {
        Some(v) => ModelPrediction::from_raw(model, "q", &v.to_json()),
        None => ModelPrediction::from_attempt(
            model,
            "q",
            Attempted { result: Err(GenerateError::Timeout), attempts: 1, latency: Duration::ZERO },
        ),
    }
}

fn combined_strategies() -> Vec<StrategyId> {
    vec![StrategyId::Majority, StrategyId::WeightedMicro, StrategyId::WeightedMacro, StrategyId::WeightedByLabel]
}

proptest! {
    // retrieval

    #[test]
    fn self_score_is_one(q in text()) {
        let e = IndexedExample::from_text("x", &q, 3);
        prop_assert_eq!(ngram_score::<Exact>(&q, &e).unwrap(), Exact::from_integer(1));
    }

    #[test]
    fn score_bounded_and_unigram_overlap_monotone(q in text(), e in text(), extra in text()) {
        let ex = IndexedExample::from_text("x", &e, 3);
        let s: f64 = ngram_score(&q, &ex).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        let uni = |t: &str| ngram_sets(&tokenize(t), 1).remove(0);
        let qg = uni(&q);
        let before = qg.intersection(&uni(&e)).count();
        let after = qg.intersection(&uni(&format!("{e} {extra}"))).count();
        prop_assert!(after >= before);
    }

    #[test]
    fn retrieval_is_a_deterministic_total_ranking(texts in prop::collection::vec(text(), 1..25), q in text(), k in 1usize..40) {
        let corpus = Corpus::from_examples(
            texts.iter().enumerate().map(|(i, t)| LabeledExample {
                id: format!("e{i}"), language: "eng".into(), text: t.clone(),
                gold: LabelVector::NEUTRAL, split: Split::Train,
            }).collect(),
        );
        let index = NGramIndex::build(&corpus, "eng", 3).unwrap();
        let a = index.retrieve::<Exact>(&q, k).unwrap();
        let b = index.retrieve::<Exact>(&q, k).unwrap();
        prop_assert_eq!(&a, &b);
        let ids: HashSet<_> = a.iter().map(|r| &r.example_id).collect();
        prop_assert_eq!(ids.len(), a.len());
        prop_assert_eq!(a.len(), k.min(texts.len()));
        for w in a.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].example_id < w[1].example_id));
        }
    }

    #[test]
    fn identity_query_over_orthonormal_index(dim in 1usize..12, pick in 0usize..12) {
        let pick = pick % dim;
        let basis: Vec<(String, Vec<f64>)> = (0..dim)
            .map(|i| (format!("b{i:02}"), (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()))
            .collect();
        let index = EmbeddingIndex::from_vectors("eng", "test", basis.clone()).unwrap();
        let hits = index.retrieve(&basis[pick].1, dim).unwrap();
        prop_assert_eq!(&hits[0].example_id, &basis[pick].0);
        prop_assert_eq!(hits.len(), dim);
    }

    // prompting

    #[test]
    fn build_prompt_is_pure(shots in prop::collection::vec((text(), label_vector()), 0..5), q in text()) {
        let a = build_prompt("English", &shots, &q);
        let b = build_prompt("English", &shots, &q);
        prop_assert_eq!(a.shots.len(), shots.len());
        prop_assert_eq!(format!("{:?}", a.messages()), format!("{:?}", b.messages()));
    }

    #[test]
    fn parser_is_total(raw in any::<String>()) {
        let out = parse_response(&raw);
        if out.status == ParseStatus::Failed {
            prop_assert!(out.labels.is_neutral());
        }
    }

    #[test]
    fn parser_round_trips(v in label_vector()) {
        let out = parse_response(&v.to_json());
        prop_assert_eq!(out.status, ParseStatus::Ok);
        prop_assert_eq!(out.labels, v);
    }

    // aggregation

    #[test]
    fn aggregation_is_permutation_invariant(
        votes in prop::collection::vec(prop::option::weighted(0.85, label_vector()), 4),
        weights in prop::collection::vec(model_weights(), 4),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        prop_assume!(votes.iter().any(Option::is_some));
        let t = table(&weights);
        let preds: Vec<_> = MODELS.iter().zip(&votes).map(|(m, v)| pred(m, *v)).collect();
        let shuffled: Vec<_> = perm.iter().map(|&i| preds[i].clone()).collect();
        for s in combined_strategies() {
            let a = aggregate(&s, &preds, Some(&t), None).unwrap();
            let b = aggregate(&s, &shuffled, Some(&t), None).unwrap();
            prop_assert_eq!(a.labels, b.labels);
        }
    }

    #[test]
    fn unanimity(v in label_vector(), n in 1usize..=4, weights in prop::collection::vec(model_weights(), 4)) {
        let t = table(&weights);
        let preds: Vec<_> = MODELS[..n].iter().map(|m| pred(m, Some(v))).collect();
        for s in combined_strategies() {
            prop_assert_eq!(aggregate(&s, &preds, Some(&t), None).unwrap().labels, v);
        }
    }

    #[test]
    fn scaling_weights_changes_nothing(
        votes in prop::collection::vec(label_vector(), 4),
        weights in prop::collection::vec(model_weights(), 4),
        c in (1i64..50, 1i64..50).prop_map(|(a, b)| Exact::new(a, b)),
    ) {
        let t = table(&weights);
        let scaled = t.scaled(c);
        let preds: Vec<_> = MODELS.iter().zip(&votes).map(|(m, v)| pred(m, Some(*v))).collect();
        for s in combined_strategies() {
            prop_assert_eq!(
                aggregate(&s, &preds, Some(&t), None).unwrap().labels,
                aggregate(&s, &preds, Some(&scaled), None).unwrap().labels
            );
        }
    }

    #[test]
    fn unavailable_model_is_the_same_as_absent(
        votes in prop::collection::vec(label_vector(), 4),
        weights in prop::collection::vec(model_weights(), 4),
        drop in 0usize..4,
        garbled in any::<bool>(),
    ) {
        let t = table(&weights);
        let mut with: Vec<_> = MODELS.iter().zip(&votes).map(|(m, v)| pred(m, Some(*v))).collect();
        with[drop] = if garbled {
            ModelPrediction::from_raw(MODELS[drop], "q", "no idea")
        } else {
            pred(MODELS[drop], None)
        };
        let mut without = with.clone();
        without.remove(drop);
        for s in combined_strategies() {
            prop_assert_eq!(
                aggregate(&s, &with, Some(&t), None).unwrap().labels,
                aggregate(&s, &without, Some(&t), None).unwrap().labels
            );
        }
    }

    // evaluation

    #[test]
    fn metrics_are_permutation_and_duplication_invariant(
        pairs in prop::collection::vec((label_vector(), label_vector()), 1..50)
            .prop_flat_map(|p| { let n = p.len(); (Just(p), Just((0..n).collect::<Vec<_>>()).prop_shuffle()) }),
    ) {
        let (pairs, perm) = pairs;
        let (p, g): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let base = score::<Exact>(&p, &g).unwrap();
        let (pp, gp): (Vec<_>, Vec<_>) = perm.iter().map(|&i| pairs[i]).unzip();
        let permuted = score::<Exact>(&pp, &gp).unwrap();
        prop_assert_eq!(base.micro_f1, permuted.micro_f1);
        prop_assert_eq!(base.macro_f1, permuted.macro_f1);
        let doubled = score::<Exact>(&[p.clone(), p.clone()].concat(), &[g.clone(), g.clone()].concat()).unwrap();
        prop_assert_eq!(base.micro_f1, doubled.micro_f1);
        prop_assert_eq!(base.macro_f1, doubled.macro_f1);
        for m in &base.per_label {
            prop_assert!(m.f1 >= Exact::from_integer(0) && m.f1 <= Exact::from_integer(1));
        }
        let any_positive = g.iter().any(|v| !v.is_neutral());
        if any_positive {
            prop_assert_eq!(base.micro_f1 == Exact::from_integer(1), p == g);
        }
    }

    // corpus

    #[test]
    fn jsonl_round_trip(rows in prop::collection::vec((text(), label_vector(), 0usize..3, 0usize..3), 0..20)) {
        let langs = ["eng", "deu", "amh"];
        let splits = [Split::Train, Split::Dev, Split::Test];
        let corpus = Corpus::from_examples(
            rows.iter().enumerate().map(|(i, (t, v, l, s))| LabeledExample {
                id: format!("r{i}"), language: langs[*l].into(), text: t.clone(), gold: *v, split: splits[*s],
            }).collect(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        corpus.write_jsonl(std::fs::File::create(&path).unwrap()).unwrap();
        let back = load_corpus(&path, &LoadOptions::new(CorpusFormat::Jsonl)).unwrap();
        prop_assert!(back.malformed.is_empty());
        prop_assert_eq!(back.corpus, corpus);
    }

    #[test]
    fn label_json_round_trip(v in label_vector()) {
        let back: LabelVector = serde_json::from_str(&v.to_json()).unwrap();
        prop_assert_eq!(back, v);
    }
}

// generators: pool output does not depend on completion order

struct Slow {
    inner: ReplayBackend,
    delay: Duration,
}

impl Generator for Slow {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn complete(&self, messages: &[emotion_rag::prompting::ChatMessage], query_id: &str) -> Result<String, GenerateError> {
        std::thread::sleep(self.delay);
        self.inner.complete(messages, query_id)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pool_order_is_independent_of_completion_order(delays in prop::collection::vec(0u64..8, 4), v in label_vector()) {
        let fixture = Arc::new(ReplayFixture::from_entries(MODELS.iter().map(|m| FixtureEntry {
            model_id: m.to_string(),
            query_id: "q".into(),
            response: Some(v.to_json()),
            error: None,
        })));
        let make = |delays: &[u64]| -> Vec<Arc<dyn Generator>> {
            MODELS.iter().zip(delays).rev().map(|(m, d)| Arc::new(Slow {
                inner: ReplayBackend::new(*m, fixture.clone()),
                delay: Duration::from_millis(*d),
            }) as Arc<dyn Generator>).collect()
        };
        let prompt = build_prompt("English", &[], "hello");
        let a = run_pool(&make(&delays), &prompt, "q", 4).unwrap();
        let b = run_pool(&make(&[0, 0, 0, 0]), &prompt, "q", 1).unwrap();
        prop_assert_eq!(&a, &b);
        let ids: Vec<_> = a.iter().map(|p| p.model_id.as_str()).collect();
        prop_assert_eq!(ids, MODELS.to_vec());
    }
}

#[test]
fn every_label_vector_round_trips_through_json() {
    for v in LabelVector::all() {
        assert_eq!(serde_json::from_str::<LabelVector>(&v.to_json()).unwrap(), v);
        assert_eq!(parse_response(&v.to_json()).labels, v);
    }
    assert_eq!(LabelVector::all().count(), 64);
}
