//! The TOML run configuration.
//!
//! ```toml
//! [retrieval]
//! corpus_dir = "corpus"      # store written by `mcqa index`
//! k1 = 0.9
//! b = 0.4
//! per_source_k = 32
//! final_k = 5
//!
//! [reranker]                 # optional; lexical overlap when absent
//! url = "http://localhost:8080/rerank"
//!
//! [backends.local]
//! kind = "openai"            # or "scripted"
//! base_url = "http://localhost:8000/v1"
//! api_key_env = "OPENAI_API_KEY"
//! requests_per_second = 4.0
//!
//! [roles.reader]
//! backend = "local"
//! model = "qwen2.5-7b-instruct"
//!
//! [run]
//! mode = "full"
//! dataset = "data/medqa.jsonl"
//! format = "medqa"
//! output_dir = "out"
//! cache_dir = "cache"
//! ```
//!
//! Roles without a `[roles.*]` table use `[run] default_backend` and
//! `default_model`. Relative paths resolve against the config file's
//! directory. For a backend alias `local`, `MCQA_LOCAL_BASE_URL` and
//! `MCQA_LOCAL_API_KEY` override the file; `MCQA_RERANKER_URL` overrides the
//! reranker url.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::corpus::CorpusStore;
use crate::dataset::DatasetFormat;
use crate::harness::RunConfig;
use crate::kgcc::{load_demonstrations, KgccConfig};
use crate::llm::{ChatBackend, Gateway, OpenAiBackend, PromptTemplate, ResponseCache, Role, RoleConfig, ScriptedBackend};
use crate::pipeline::{Mode, Pipeline};
use crate::retrieval::rerank::{HttpReranker, HttpRerankerConfig, LexicalReranker, Reranker};
use crate::retrieval::{IndexConfig, MultiSourceIndex, SourceBalancedRetriever};
use crate::sync::RetryPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    pub corpus_dir: Option<PathBuf>,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_per_source_k")]
    pub per_source_k: usize,
    #[serde(default = "default_final_k")]
    pub final_k: usize,
}

fn default_k1() -> f64 {
    IndexConfig::default().k1
}
fn default_b() -> f64 {
    IndexConfig::default().b
}
fn default_per_source_k() -> usize {
    IndexConfig::default().per_source_k
}
fn default_final_k() -> usize {
    IndexConfig::default().final_k
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            corpus_dir: None,
            k1: default_k1(),
            b: default_b(),
            per_source_k: default_per_source_k(),
            final_k: default_final_k(),
        }
    }
}

impl RetrievalSection {
    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            k1: self.k1,
            b: self.b,
            per_source_k: self.per_source_k,
            final_k: self.final_k,
            ..IndexConfig::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankerSection {
    pub url: Option<String>,
    #[serde(default = "default_rerank_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_rerank_in_flight")]
    pub max_in_flight: usize,
}

fn default_rerank_timeout() -> u64 {
    30_000
}
fn default_rerank_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Openai,
    Scripted,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    /// Variable holding the API key.
    pub api_key_env: Option<String>,
    /// Fixture file for `scripted` backends.
    pub fixtures: Option<PathBuf>,
    pub requests_per_second: Option<f64>,
    #[serde(default = "default_backend_timeout")]
    pub timeout_ms: u64,
}

fn default_backend_timeout() -> u64 {
    120_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleSection {
    pub backend: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    /// File replacing the role's prompt template.
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub format: DatasetFormat,
    pub expected_count: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: Option<RetryPolicy>,
    pub default_backend: Option<String>,
    pub default_model: Option<String>,
    #[serde(default = "default_max_points")]
    pub max_knowledge_points: usize,
    #[serde(default = "default_refill")]
    pub refill_budget: usize,
    /// JSON lines of `{question, document, summary}` summarization examples.
    pub demonstrations: Option<PathBuf>,
}

fn default_mode() -> Mode {
    Mode::Full
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_concurrency() -> usize {
    4
}
fn default_in_flight() -> usize {
    8
}
fn default_max_points() -> usize {
    3
}
fn default_refill() -> usize {
    3
}

impl Default for RunSection {
    fn default() -> Self {
        toml::from_str("").expect("empty run section uses defaults")
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub retrieval: RetrievalSection,
    pub reranker: Option<RerankerSection>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSection>,
    #[serde(default)]
    pub roles: BTreeMap<String, RoleSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Environment variable name for `field` of backend `alias`.
pub fn backend_env_var(alias: &str, field: &str) -> String {
    let alias: String = alias
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("MCQA_{alias}_{field}")
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Config::parse(&raw, base)
    }

    pub fn parse(raw: &str, base_dir: impl Into<PathBuf>) -> Result<Config, ConfigError> {
        let mut config: Config = toml::from_str(raw)?;
        config.base_dir = base_dir.into();
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> Result<(), ConfigError> {
        for name in self.roles.keys() {
            if Role::parse(name).is_none() {
                return Err(invalid(format!(
                    "unknown role [roles.{name}] (expected summarizer, explorer, generator, integrator or reader)"
                )));
            }
        }
        for (alias, b) in &self.backends {
            match b.kind {
                BackendKind::Scripted if b.fixtures.is_none() => {
                    return Err(invalid(format!("scripted backend {alias:?} needs `fixtures`")))
                }
                _ => {}
            }
            if let Some(rps) = b.requests_per_second {
                if rps <= 0.0 || rps.is_nan() {
                    return Err(invalid(format!("backend {alias:?}: requests_per_second must be positive")));
                }
            }
        }
        if self.run.concurrency == 0 || self.run.max_in_flight == 0 {
            return Err(invalid("run.concurrency and run.max_in_flight must be at least 1"));
        }
        self.retrieval
            .index_config()
            .validate()
            .map_err(|e| invalid(format!("[retrieval]: {e}")))?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn corpus_dir(&self) -> Option<PathBuf> {
        self.retrieval.corpus_dir.as_deref().map(|p| self.resolve(p))
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.run.dataset.as_deref().map(|p| self.resolve(p))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.run.output_dir)
    }

    /// Resolved `RoleConfig` for `role`, or `None` if neither a role table
    /// nor run defaults name a backend and model.
    pub fn role_config(&self, role: Role) -> Result<Option<RoleConfig>, ConfigError> {
        let section = self.roles.get(role.as_str());
        let backend = section
            .and_then(|s| s.backend.clone())
            .or_else(|| self.run.default_backend.clone());
        let model = section
            .and_then(|s| s.model.clone())
            .or_else(|| self.run.default_model.clone());
        let (backend, model) = match (backend, model) {
            (Some(b), Some(m)) => (b, m),
            (None, None) if section.is_none() => return Ok(None),
            _ => return Err(invalid(format!("role {role} needs both `backend` and `model`"))),
        };
        if !self.backends.contains_key(&backend) {
            return Err(invalid(format!("role {role} uses undefined backend {backend:?}")));
        }
        let mut config = RoleConfig::with_defaults(role, model, backend);
        if let Some(s) = section {
            if let Some(t) = s.temperature {
                config.temperature = t;
            }
            if let Some(n) = s.max_tokens {
                config.max_tokens = n;
            }
            if let Some(path) = &s.template {
                let path = self.resolve(path);
                let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                config.template = PromptTemplate {
                    id: format!("{role}:custom"),
                    text,
                };
            }
        }
        Ok(Some(config))
    }

    fn build_backend(&self, alias: &str, section: &BackendSection) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        match section.kind {
            BackendKind::Openai => {
                let base_url = env(&backend_env_var(alias, "BASE_URL"))
                    .or_else(|| section.base_url.clone())
                    .ok_or_else(|| invalid(format!("backend {alias:?} has no base_url")))?;
                let api_key = env(&backend_env_var(alias, "API_KEY"))
                    .or_else(|| section.api_key_env.as_deref().and_then(env));
                Ok(Arc::new(OpenAiBackend::new(
                    alias,
                    &base_url,
                    api_key,
                    Duration::from_millis(section.timeout_ms),
                )))
            }
            BackendKind::Scripted => {
                let path = self.resolve(section.fixtures.as_deref().expect("checked on load"));
                let backend = ScriptedBackend::from_file(alias, &path)
                    .map_err(|e| invalid(format!("backend {alias:?}: {e}")))?;
                Ok(Arc::new(backend))
            }
        }
    }

    /// Gateway with every configured role and backend, plus the response
    /// cache when `cache_dir` is set.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let mut builder = Gateway::builder().max_in_flight(self.run.max_in_flight);
        if let Some(retry) = self.run.retry {
            builder = builder.retry(retry);
        }
        for (alias, section) in &self.backends {
            builder = builder.backend(alias.clone(), self.build_backend(alias, section)?, section.requests_per_second);
        }
        for role in Role::ALL {
            if let Some(config) = self.role_config(role)? {
                builder = builder.role(config);
            }
        }
        if let Some(dir) = &self.run.cache_dir {
            let dir = self.resolve(dir);
            let cache = ResponseCache::open(&dir).map_err(|source| ConfigError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            builder = builder.cache(cache);
        }
        builder.build().map_err(|e| invalid(e.to_string()))
    }

    pub fn build_reranker(&self) -> Arc<dyn Reranker> {
        let url = env("MCQA_RERANKER_URL").or_else(|| self.reranker.as_ref().and_then(|r| r.url.clone()));
        match url {
            Some(url) => {
                let section = self.reranker.clone().unwrap_or(RerankerSection {
                    url: None,
                    timeout_ms: default_rerank_timeout(),
                    max_in_flight: default_rerank_in_flight(),
                });
                Arc::new(HttpReranker::new(HttpRerankerConfig {
                    url,
                    timeout_ms: section.timeout_ms,
                    retry: self.run.retry.unwrap_or_default(),
                    max_in_flight: section.max_in_flight,
                }))
            }
            None => Arc::new(LexicalReranker),
        }
    }

    /// Opens the corpus store and builds the in-memory BM25 indexes.
    pub fn build_retriever(&self) -> Result<SourceBalancedRetriever, ConfigError> {
        let dir = self
            .corpus_dir()
            .ok_or_else(|| invalid("[retrieval] corpus_dir is required for this mode"))?;
        let store = CorpusStore::open(&dir).map_err(|e| invalid(format!("corpus {}: {e}", dir.display())))?;
        if store.is_empty() {
            return Err(invalid(format!("corpus {} is empty; run `mcqa index` first", dir.display())));
        }
        let index = MultiSourceIndex::from_store(&store, self.retrieval.index_config()).map_err(|e| invalid(e.to_string()))?;
        Ok(SourceBalancedRetriever::new(index, self.build_reranker()))
    }

    pub fn kgcc_config(&self) -> Result<KgccConfig, ConfigError> {
        let demonstrations = match &self.run.demonstrations {
            Some(p) => load_demonstrations(self.resolve(p)).map_err(invalid)?,
            None => Vec::new(),
        };
        Ok(KgccConfig {
            final_k: self.retrieval.final_k,
            max_knowledge_points: self.run.max_knowledge_points,
            refill_budget: self.run.refill_budget,
            demonstrations: Arc::new(demonstrations),
        })
    }

    /// Roles `mode` calls that have no configuration.
    pub fn missing_roles(&self, mode: Mode) -> Result<Vec<Role>, ConfigError> {
        let mut missing = Vec::new();
        for role in mode.allowed_roles() {
            if self.role_config(role)?.is_none() {
                missing.push(role);
            }
        }
        Ok(missing)
    }

    pub fn build_pipeline(&self, mode: Mode) -> Result<Pipeline, ConfigError> {
        let missing = self.missing_roles(mode)?;
        if !missing.is_empty() {
            let names: Vec<&str> = missing.iter().map(|r| r.as_str()).collect();
            return Err(invalid(format!("mode {mode} needs role(s) {} configured", names.join(", "))));
        }
        let gateway = Arc::new(self.build_gateway()?);
        let retriever = if mode.uses_retrieval() {
            Some(Arc::new(self.build_retriever()?))
        } else {
            None
        };
        let mut pipeline = Pipeline::new(gateway, retriever, self.kgcc_config()?);
        if !mode.uses_retrieval() {
            pipeline = pipeline.with_selection_reranker(self.build_reranker());
        }
        Ok(pipeline)
    }

    pub fn run_config(&self, mode: Mode) -> RunConfig {
        RunConfig {
            mode,
            output_dir: self.output_dir(),
            concurrency: self.run.concurrency,
            resume: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = Config::parse("", "/tmp").unwrap();
        assert_eq!(c.retrieval.k1, 0.9);
        assert_eq!(c.retrieval.b, 0.4);
        assert_eq!(c.retrieval.per_source_k, 32);
        assert_eq!(c.retrieval.final_k, 5);
        assert_eq!(c.run.mode, Mode::Full);
        assert_eq!(c.output_dir(), PathBuf::from("/tmp/out"));
    }

    #[test]
    fn roles_fall_back_to_run_defaults() {
        let c = Config::parse(
            r#"
[backends.mock]
kind = "scripted"
fixtures = "f.json"
[roles.generator]
model = "big"
temperature = 1.0
[run]
default_backend = "mock"
default_model = "small"
"#,
            "/tmp",
        )
        .unwrap();
        let g = c.role_config(Role::Generator).unwrap().unwrap();
        assert_eq!((g.model.as_str(), g.backend.as_str(), g.temperature, g.max_tokens), ("big", "mock", 1.0, 256));
        let r = c.role_config(Role::Reader).unwrap().unwrap();
        assert_eq!((r.model.as_str(), r.temperature), ("small", 0.2));
        assert!(c.missing_roles(Mode::Full).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_sections() {
        assert!(Config::parse("[roles.oracle]\nmodel = \"m\"", "").is_err());
        assert!(Config::parse("[retrieval]\nk1 = -1.0", "").is_err());
        assert!(Config::parse("[backends.x]\nkind = \"scripted\"", "").is_err());
        assert!(Config::parse("[run]\nmode = \"fancy\"", "").is_err());
        assert!(Config::parse("[run]\nbogus = 1", "").is_err());
        let c = Config::parse("[roles.reader]\nbackend = \"nowhere\"\nmodel = \"m\"", "").unwrap();
        assert!(c.role_config(Role::Reader).is_err());
    }

    #[test]
    fn missing_roles_are_reported_per_mode() {
        let c = Config::parse(
            "[backends.b]\nkind = \"openai\"\nbase_url = \"http://127.0.0.1:1\"\n[roles.reader]\nbackend = \"b\"\nmodel = \"m\"",
            "",
        )
        .unwrap();
        assert!(c.missing_roles(Mode::Direct).unwrap().is_empty());
        assert_eq!(c.missing_roles(Mode::NoKgcc).unwrap(), vec![Role::Generator, Role::Integrator]);
    }

    #[test]
    fn env_var_names() {
        assert_eq!(backend_env_var("local-vllm", "API_KEY"), "MCQA_LOCAL_VLLM_API_KEY");
    }
}
