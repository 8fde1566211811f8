//! Run configuration: one TOML file governs every command.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Secrets never live here; the remote backend reads its key from the
//! environment variable named by `backend.api_key_env`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::blending::{default_blend, validate_entries, BlendEntry, BlendSource};
use crate::corpus::{ChunkConfig, IngestFormat};
use crate::evaluation::EvalConfig;
use crate::generation::{GenerationConfig, MockStyle};
use crate::http::RetryPolicy;
use crate::synthesis::{FilterConfig, Quotas, SynthesisConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Bm25,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub paths: Vec<PathBuf>,
    pub format: IngestFormat,
    pub window: usize,
    pub stride: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let c = ChunkConfig::default();
        Self {
            paths: Vec::new(),
            format: IngestFormat::Jsonl,
            window: c.window,
            stride: c.stride,
        }
    }
}

impl CorpusSection {
    pub fn chunking(&self) -> ChunkConfig {
        ChunkConfig {
            window: self.window,
            stride: self.stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub kind: RetrieverKind,
    pub endpoint: Option<String>,
    /// Depth of the round-trip filter retrieval.
    pub k: usize,
    /// Passages placed in each training or evaluation prompt.
    pub context_budget: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            kind: RetrieverKind::Bm25,
            endpoint: None,
            k: 10,
            context_budget: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub kind: BackendChoice,
    pub url: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub mock_style: MockStyle,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub retries: u32,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        let g = GenerationConfig::answers();
        Self {
            kind: BackendChoice::Mock,
            url: None,
            model: None,
            api_key_env: None,
            mock_style: MockStyle::Grounded,
            temperature: g.temperature,
            top_p: g.top_p,
            max_new_tokens: g.max_new_tokens,
            retries: g.retries,
            timeout_ms: RetryPolicy::default().timeout_ms,
            max_in_flight: 8,
        }
    }
}

impl BackendSection {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.retries,
            timeout_ms: self.timeout_ms,
            ..RetryPolicy::default()
        }
    }

    /// Sampling for answer extraction; question generation shares it with a
    /// shorter token cap.
    pub fn answer_config(&self) -> GenerationConfig {
        GenerationConfig {
            temperature: self.temperature,
            top_p: self.top_p,
            max_new_tokens: self.max_new_tokens,
            seed: None,
            retries: self.retries,
        }
    }

    pub fn question_config(&self) -> GenerationConfig {
        GenerationConfig {
            max_new_tokens: self
                .max_new_tokens
                .min(GenerationConfig::questions().max_new_tokens),
            ..self.answer_config()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    pub quotas: Quotas,
    pub m_max: usize,
    pub filter: bool,
    pub claim_overlap: f64,
    pub reject_copies: bool,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let s = SynthesisConfig::default();
        Self {
            quotas: s.quotas,
            m_max: s.m_max,
            filter: s.filter.enabled,
            claim_overlap: s.filter.claim_overlap,
            reject_copies: s.reject_copies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlendSection {
    pub total: usize,
    /// Full replacement for the default mixture.
    pub entries: Option<Vec<BlendEntry>>,
    /// Files for the default mixture's external entries, by entry name.
    pub external: BTreeMap<String, PathBuf>,
}

impl Default for BlendSection {
    fn default() -> Self {
        Self {
            total: 1000,
            entries: None,
            external: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub items: Option<PathBuf>,
    pub use_provided_contexts: bool,
    pub rouge_beta: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            items: None,
            use_provided_contexts: e.use_provided_contexts,
            rouge_beta: e.rouge_beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    pub retrieval: RetrievalSection,
    pub backend: BackendSection,
    pub synthesis: SynthesisSection,
    pub blend: BlendSection,
    pub evaluation: EvaluationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            corpus: CorpusSection::default(),
            retrieval: RetrievalSection::default(),
            backend: BackendSection::default(),
            synthesis: SynthesisSection::default(),
            blend: BlendSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_owned(),
            msg: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Read, resolve relative paths and validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { msg, .. } => ConfigError::Parse {
                path: path.to_owned(),
                msg,
            },
            e => e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.corpus.paths.iter_mut().for_each(fix);
        self.blend.external.values_mut().for_each(fix);
        for e in self.blend.entries.iter_mut().flatten() {
            e.path.iter_mut().for_each(fix);
        }
        self.evaluation.items.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.corpus
            .chunking()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if self.retrieval.k == 0 || self.retrieval.context_budget == 0 {
            return Err(invalid(
                "retrieval.k and retrieval.context_budget must be positive",
            ));
        }
        if self.retrieval.kind == RetrieverKind::Remote && self.retrieval.endpoint.is_none() {
            return Err(invalid(
                "retrieval.kind = \"remote\" needs retrieval.endpoint",
            ));
        }
        let b = &self.backend;
        if b.max_in_flight == 0 {
            return Err(invalid("backend.max_in_flight must be positive"));
        }
        b.answer_config()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if b.kind == BackendChoice::Remote && (b.url.is_none() || b.model.is_none()) {
            return Err(invalid(
                "backend.kind = \"remote\" needs backend.url and backend.model",
            ));
        }
        if self.synthesis.m_max == 0 {
            return Err(invalid("synthesis.m_max must be positive"));
        }
        if !(0.0..=1.0).contains(&self.synthesis.claim_overlap) {
            return Err(invalid("synthesis.claim_overlap must be in [0, 1]"));
        }
        if self.blend.total == 0 {
            return Err(invalid("blend.total must be positive"));
        }
        if self.blend.entries.is_some() && !self.blend.external.is_empty() {
            return Err(invalid(
                "use either blend.entries or blend.external, not both",
            ));
        }
        if let Some(entries) = &self.blend.entries {
            validate_entries(entries).map_err(|e| invalid(format!("blend.entries: {e}")))?;
        }
        let defaults = default_blend();
        for name in self.blend.external.keys() {
            let known = defaults
                .iter()
                .any(|e| &e.name == name && e.source == BlendSource::ExternalFile);
            if !known {
                return Err(invalid(format!(
                    "blend.external: no external entry named {name:?}"
                )));
            }
        }
        if !(self.evaluation.rouge_beta > 0.0 && self.evaluation.rouge_beta.is_finite()) {
            return Err(invalid("evaluation.rouge_beta must be positive"));
        }
        Ok(())
    }

    pub fn synthesis_config(&self) -> SynthesisConfig {
        SynthesisConfig {
            quotas: self.synthesis.quotas,
            m_max: self.synthesis.m_max,
            filter: FilterConfig {
                enabled: self.synthesis.filter,
                k: self.retrieval.k,
                claim_overlap: self.synthesis.claim_overlap,
            },
            context_budget: self.retrieval.context_budget,
            reject_copies: self.synthesis.reject_copies,
            seed: self.seed,
            max_in_flight: self.backend.max_in_flight,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            context_budget: self.retrieval.context_budget,
            use_provided_contexts: self.evaluation.use_provided_contexts,
            rouge_beta: self.evaluation.rouge_beta,
            seed: self.seed,
            max_in_flight: self.backend.max_in_flight,
        }
    }

    /// Blend entries with external files attached, before dropping or
    /// renormalizing.
    pub fn blend_entries(&self) -> Vec<BlendEntry> {
        match &self.blend.entries {
            Some(e) => e.clone(),
            None => default_blend()
                .into_iter()
                .map(|mut e| {
                    if let Some(p) = self.blend.external.get(&e.name) {
                        e.path = Some(p.clone());
                    }
                    e
                })
                .collect(),
        }
    }
}

/// Hex sha256 of the JSON encoding of `parts`.
pub fn digest<T: Serialize + ?Sized>(parts: &T) -> String {
    let bytes = serde_json::to_vec(parts).expect("config values serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Hex sha256 of a file's bytes.
pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_paper_budgets() {
        let c = RunConfig::from_toml("", Path::new("/x")).unwrap();
        assert_eq!(c.synthesis.quotas, Quotas::LLAMA);
        assert_eq!(c.retrieval.k, 10);
        assert_eq!(c.retrieval.context_budget, 10);
        assert_eq!(c.output_dir, PathBuf::from("/x/out"));
        c.validate().unwrap();
    }

    #[test]
    fn sections_parse_and_resolve() {
        let c = RunConfig::from_toml(
            r#"
            seed = 3
            output_dir = "run"
            [corpus]
            paths = ["docs.jsonl"]
            window = 64
            stride = 32
            [backend]
            kind = "remote"
            url = "http://localhost:8000/v1/chat/completions"
            model = "m"
            api_key_env = "MY_KEY"
            [synthesis.quotas]
            short_span = 30
            multiple_choice = 10
            claim_verification = 20
            [blend.external]
            drop = "ext/drop.jsonl"
            "#,
            Path::new("/cfg"),
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.corpus.paths, [PathBuf::from("/cfg/docs.jsonl")]);
        assert_eq!(c.synthesis_config().quotas.multiple_choice, 10);
        let drop = c
            .blend_entries()
            .into_iter()
            .find(|e| e.name == "drop")
            .unwrap();
        assert_eq!(drop.path, Some(PathBuf::from("/cfg/ext/drop.jsonl")));
    }

    #[test]
    fn secrets_and_typos_rejected() {
        let err =
            RunConfig::from_toml("[backend]\napi_key = \"sk-123\"\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("api_key"), "{err}");
        assert!(RunConfig::from_toml("[corpus]\nwindw = 3\n", Path::new(".")).is_err());
    }

    #[test]
    fn invalid_values_caught() {
        let bad = [
            "[corpus]\nwindow = 4\nstride = 8\n",
            "[retrieval]\nkind = \"remote\"\n",
            "[backend]\nkind = \"remote\"\n",
            "[blend]\ntotal = 0\n",
            "[blend.external]\nshort_span_qa = \"x\"\n",
            "[backend]\ntop_p = 0.0\n",
        ];
        for b in bad {
            let c = RunConfig::from_toml(b, Path::new(".")).unwrap();
            assert!(c.validate().is_err(), "{b}");
        }
    }

    #[test]
    fn digest_is_stable() {
        let c = RunConfig::default();
        assert_eq!(digest(&c), digest(&c.clone()));
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(digest(&c), digest(&d));
    }
}
