//! Pipeline configuration file (JSON).
//!
//! ```json
//! {
//!   "languages": [
//!     {"language": "eng", "resource_tier": "high", "retriever": "embedding",
//!      "model_ids": ["gpt-4o-mini", "llama"]}
//!   ],
//!   "backends": [
//!     {"kind": "http_chat", "model_id": "gpt-4o-mini",
//!      "endpoint": "https://api.openai.com/v1/chat/completions",
//!      "api_key_env": "OPENAI_API_KEY"},
//!     {"kind": "replay", "model_id": "llama", "fixture": "replay.jsonl"}
//!   ],
//!   "embedder": {"kind": "hashing", "dim": 256}
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::generators::BackendConfig;
use crate::retrieval::{EmbedderConfig, RetrieverKind, DEFAULT_N_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceTier {
    #[default]
    Low,
    High,
}

impl ResourceTier {
    /// Few-shot budget: low-resource texts cost more tokens, so they get
    /// fewer examples.
    pub fn default_k(self) -> usize {
        match self {
            ResourceTier::Low => 30,
            ResourceTier::High => 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageConfig {
    pub language: String,
    /// Name substituted into the prompt; defaults to the built-in name for
    /// the code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub resource_tier: ResourceTier,
    /// Overrides the tier's default K.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub retriever: RetrieverKind,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Pool members for this language. Empty means every configured backend.
    #[serde(default)]
    pub model_ids: Vec<String>,
}

fn default_n_max() -> usize {
    DEFAULT_N_MAX
}

impl LanguageConfig {
    pub fn new(language: impl Into<String>) -> Self {
        LanguageConfig {
            language: language.into(),
            name: None,
            resource_tier: ResourceTier::Low,
            k: None,
            retriever: RetrieverKind::Ngram,
            n_max: DEFAULT_N_MAX,
            model_ids: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or_else(|| self.resource_tier.default_k())
    }

    pub fn display_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| crate::prompting::language_name(&self.language).to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k() == 0 {
            return Err(ConfigError::Invalid(format!("{}: k must be at least 1", self.language)));
        }
        if !(1..=crate::retrieval::MAX_N).contains(&self.n_max) {
            return Err(ConfigError::Invalid(format!("{}: n_max out of range", self.language)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub languages: Vec<LanguageConfig>,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EmbedderConfig>,
    /// Directory relative paths inside the file are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for l in &cfg.languages {
            l.validate()?;
        }
        Ok(cfg)
    }

    /// The entry for `code`, or a low-tier n-gram default using every
    /// configured backend.
    pub fn language(&self, code: &str) -> LanguageConfig {
        self.languages
            .iter()
            .find(|l| l.language == code)
            .cloned()
            .unwrap_or_else(|| LanguageConfig::new(code))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_schedule() {
        let mut c = LanguageConfig::new("amh");
        assert_eq!(c.k(), 30);
        c.resource_tier = ResourceTier::High;
        assert_eq!(c.k(), 100);
        c.k = Some(5);
        assert_eq!(c.k(), 5);
        c.k = Some(0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn parses_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(
            &p,
            r#"{"languages":[{"language":"eng","resource_tier":"high","retriever":"embedding","model_ids":["a"]}],
                "backends":[{"kind":"replay","model_id":"a","fixture":"fx.jsonl"}],
                "embedder":{"kind":"hashing","dim":64}}"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.base_dir, dir.path());
        let eng = cfg.language("eng");
        assert_eq!(eng.k(), 100);
        assert_eq!(eng.retriever, RetrieverKind::Embedding);
        assert_eq!(eng.display_name(), "English");
        let other = cfg.language("hau");
        assert_eq!(other.k(), 30);
        assert_eq!(other.retriever, RetrieverKind::Ngram);
        assert_eq!(cfg.embedder, Some(EmbedderConfig::Hashing { dim: 64 }));
    }
}
