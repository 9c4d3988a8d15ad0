//! Synthetic corpora and replay fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub const MODELS: [&str; 4] = ["m1", "m2", "m3", "m4"];
pub const LABEL_KEYS: [&str; 6] = ["anger", "fear", "joy", "sadness", "surprise", "disgust"];

const WORDS: &[&str] = &[
    "rain", "station", "letter", "morning", "dog", "train", "window", "kitchen", "garden", "river", "phone",
    "exam", "party", "storm", "road", "coffee", "friend", "mother", "office", "night", "late", "broken", "quiet",
    "loud", "cold", "bright", "empty", "again", "never", "always", "suddenly", "slowly", "today", "yesterday",
    "i", "we", "they", "saw", "lost", "found", "heard", "waited", "laughed", "cried", "ran", "walked",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random sentence of 4 to 12 words.
pub fn sentence(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(4..=12);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_flags(rng: &mut impl Rng) -> [bool; 6] {
    std::array::from_fn(|_| rng.gen_bool(0.3))
}

/// Bare JSON object in canonical key order.
pub fn json_object(flags: [bool; 6]) -> String {
    let body: Vec<String> = LABEL_KEYS.iter().zip(flags).map(|(k, v)| format!("\"{k}\":{v}")).collect();
    format!("{{{}}}", body.join(","))
}

pub fn csv_row(id: &str, text: &str, flags: [bool; 6]) -> String {
    let cells: Vec<&str> = flags.iter().map(|&b| if b { "1" } else { "0" }).collect();
    format!("{id},{text},{}\n", cells.join(","))
}

pub fn csv_header() -> String {
    format!("id,text,{}\n", LABEL_KEYS.join(","))
}

/// What a replay entry holds for one (model, query).
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    /// Bare conforming object.
    Plain([bool; 6]),
    /// Same object wrapped in a code fence.
    Fenced([bool; 6]),
    /// Prose without any object.
    Garbage,
    /// Injected timeout.
    Timeout,
    /// No entry at all.
    Missing,
}

impl Reply {
    /// The vote this reply casts, if any.
    pub fn vote(&self) -> Option<[bool; 6]> {
        match self {
            Reply::Plain(f) | Reply::Fenced(f) => Some(*f),
            _ => None,
        }
    }
}

pub struct Fixture {
    pub dir: TempDir,
    pub train: PathBuf,
    pub dev_gold: PathBuf,
    pub queries: PathBuf,
    pub replay: PathBuf,
    pub config: PathBuf,
    pub query_ids: Vec<String>,
    pub replies: BTreeMap<(String, String), Reply>,
    pub gold: BTreeMap<String, [bool; 6]>,
}

/// Writes a language `eng` corpus of `n_train` examples, `n_queries` queries
/// with gold labels, and a replay file for four models. Models answer the
/// gold labels with per-model noise; a few replies are fenced, unparseable,
/// timed out or missing.
pub fn replay_fixture(n_train: usize, n_queries: usize, seed: u64) -> Fixture {
    let mut rng = rng(seed);
    let dir = tempfile::tempdir().unwrap();

    let mut train = csv_header();
    for i in 0..n_train {
        train += &csv_row(&format!("t{i:03}"), &sentence(&mut rng), random_flags(&mut rng));
    }

    let mut queries = String::new();
    let mut dev_gold = csv_header();
    let mut gold = BTreeMap::new();
    let mut query_ids = Vec::new();
    for i in 0..n_queries {
        let id = format!("q{i:03}");
        let text = sentence(&mut rng);
        let flags = random_flags(&mut rng);
        writeln!(queries, "{}", serde_json::json!({"id": id, "text": text})).unwrap();
        dev_gold += &csv_row(&id, &text, flags);
        gold.insert(id.clone(), flags);
        query_ids.push(id);
    }

    let noise = [0.05, 0.15, 0.25, 0.35];
    let mut replay = String::new();
    let mut replies = BTreeMap::new();
    for qid in &query_ids {
        for (m, model) in MODELS.iter().enumerate() {
            let mut flags = gold[qid];
            for f in flags.iter_mut() {
                if rng.gen_bool(noise[m]) {
                    *f = !*f;
                }
            }
            let reply = match rng.gen_range(0..100) {
                0..=3 => Reply::Fenced(flags),
                4..=5 => Reply::Garbage,
                6 => Reply::Timeout,
                7 => Reply::Missing,
                _ => Reply::Plain(flags),
            };
            let entry = match &reply {
                Reply::Plain(f) => Some(serde_json::json!({"model_id": model, "query_id": qid, "response": json_object(*f)})),
                Reply::Fenced(f) => Some(serde_json::json!({
                    "model_id": model, "query_id": qid,
                    "response": format!("```json\n{}\n```", json_object(*f)),
                })),
                Reply::Garbage => Some(serde_json::json!({"model_id": model, "query_id": qid, "response": "The emotion is joy."})),
                Reply::Timeout => Some(serde_json::json!({"model_id": model, "query_id": qid, "error": "timeout"})),
                Reply::Missing => None,
            };
            if let Some(e) = entry {
                writeln!(replay, "{e}").unwrap();
            }
            replies.insert((model.to_string(), qid.clone()), reply);
        }
    }

    let backends: Vec<_> = MODELS
        .iter()
        .map(|m| serde_json::json!({"kind": "replay", "model_id": m, "fixture": "replay.jsonl"}))
        .collect();
    let config = serde_json::json!({
        "languages": [{"language": "eng", "k": 5, "model_ids": MODELS}],
        "backends": backends,
    });

    let path = |name: &str| dir.path().join(name);
    fs::write(path("train.csv"), train).unwrap();
    fs::write(path("queries.jsonl"), queries).unwrap();
    fs::write(path("dev_gold.csv"), dev_gold).unwrap();
    fs::write(path("replay.jsonl"), replay).unwrap();
    fs::write(path("config.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
    Fixture {
        train: path("train.csv"),
        dev_gold: path("dev_gold.csv"),
        queries: path("queries.jsonl"),
        replay: path("replay.jsonl"),
        config: path("config.json"),
        dir,
        query_ids,
        replies,
        gold,
    }
}

/// Majority over the votes cast for `qid`, counted directly from the
/// fixture: positive when at least half of the voters say yes.
pub fn hand_majority(fx: &Fixture, qid: &str) -> Option<[bool; 6]> {
    let votes: Vec<[bool; 6]> = MODELS
        .iter()
        .filter_map(|m| fx.replies[&(m.to_string(), qid.to_string())].vote())
        .collect();
    if votes.is_empty() {
        return None;
    }
    Some(std::array::from_fn(|l| {
        let yes = votes.iter().filter(|v| v[l]).count();
        2 * yes >= votes.len()
    }))
}

/// Parses a labels CSV written by `predict` into id -> flags.
pub fn read_labels_csv(path: &std::path::Path) -> BTreeMap<String, [bool; 6]> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let id_col = col("id");
    let label_cols: Vec<usize> = LABEL_KEYS.iter().map(|k| col(k)).collect();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            let flags = std::array::from_fn(|l| &r[label_cols[l]] == "1");
            (r[id_col].to_string(), flags)
        })
        .collect()
}
