//! Run configuration: TOML with `${VAR}` interpolation, command-line
//! overrides, validation and the content hash that names run directories.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use imageshare_core::pipeline::Profile;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Bad or incomplete configuration. Exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub backend: BackendConfig,
    pub embedding: EmbeddingConfig,
    pub pipeline: PipelineConfig,
    pub generation: GenerationConfig,
    pub retrieval: RetrievalConfig,
    pub evaluate: EvaluateConfig,
    pub augment: AugmentConfig,
    /// Operational settings; they never change results and stay out of
    /// the run hash.
    pub run: RunSettings,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dialogue JSONL.
    pub dialogues: Option<PathBuf>,
    /// Annotation JSONL.
    pub annotations: Option<PathBuf>,
    /// Candidate image JSONL (`{"id", "uri", "source"}` per line). Defaults
    /// to the gold images of the dialogues.
    pub images: Option<PathBuf>,
    /// Dialogues and annotations to draw few-shot exemplars from.
    pub train_dialogues: Option<PathBuf>,
    pub train_annotations: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Openai,
    /// Answers every prompt with the gold annotation.
    GoldEcho,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "openai" => Ok(Self::Openai),
            "gold-echo" | "gold_echo" => Ok(Self::GoldEcho),
            other => Err(format!("unknown backend `{other}` (expected openai or gold-echo)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Id recorded in fingerprints; derived from kind and model if unset.
    pub id: Option<String>,
    pub model: Option<String>,
    pub base_url: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub max_attempts: u32,
    pub max_in_flight: usize,
    /// Share of dialogues the gold-echo backend refuses.
    pub refusal_rate: f64,
    pub refusal_seed: Option<u64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Openai,
            id: None,
            model: None,
            base_url: None,
            api_key: None,
            max_attempts: 4,
            max_in_flight: 4,
            refusal_rate: 0.0,
            refusal_seed: None,
        }
    }
}

impl BackendConfig {
    pub fn backend_id(&self) -> String {
        if let Some(id) = &self.id {
            return id.clone();
        }
        match self.kind {
            BackendKind::Openai => format!("openai:{}", self.model.as_deref().unwrap_or("unset")),
            BackendKind::GoldEcho => "gold-echo".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    #[default]
    None,
    /// Deterministic hashed bag of tokens; offline but not semantic.
    Hash,
    /// External service: `GET /meta`, `POST /embed/text`, `POST /embed/image`.
    Http,
    /// Maps each gold description onto its gold image vector.
    Gold,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub id: Option<String>,
    pub dim: usize,
    pub url: Option<String>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { kind: EmbeddingKind::None, id: None, dim: 512, url: None }
    }
}

impl EmbeddingConfig {
    pub fn backend_id(&self) -> String {
        if let Some(id) = &self.id {
            return id.clone();
        }
        match self.kind {
            EmbeddingKind::None => "none".into(),
            EmbeddingKind::Hash => format!("hash-{}", self.dim),
            EmbeddingKind::Http => format!("http:{}", self.url.as_deref().unwrap_or("")),
            EmbeddingKind::Gold => format!("gold-{}", self.dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKeys {
    #[default]
    Full,
    DecisionOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    #[serde(with = "profile_serde")]
    pub profile: Profile,
    pub seed: u64,
    pub cot: bool,
    pub shots: usize,
    pub exemplar_payload: PayloadKeys,
    pub salient: bool,
    /// Name pool file, one name per line; bundled list if unset.
    pub names: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Full,
            seed: 0,
            cot: false,
            shots: 0,
            exemplar_payload: PayloadKeys::Full,
            salient: false,
            names: None,
        }
    }
}

mod profile_serde {
    use imageshare_core::pipeline::Profile;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Profile, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(super::profile_name(*p))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Profile, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn profile_name(p: Profile) -> &'static str {
    match p {
        Profile::Full => "full",
        Profile::DescribeRetrieve => "describe_retrieve",
    }
}

/// Per-stage overrides of the sampling defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub stage1: GenOverride,
    pub stage2: GenOverride,
    pub augment: GenOverride,
    pub objects: GenOverride,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenOverride {
    pub max_tokens: Option<u32>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub frequency_penalty: Option<f64>,
    pub presence_penalty: Option<f64>,
    pub stop: Option<Vec<String>>,
}

impl GenOverride {
    pub fn apply(&self, cfg: &mut imageshare_core::llm::GenConfig) {
        if let Some(v) = self.max_tokens {
            cfg.max_tokens = v;
        }
        if let Some(v) = self.temperature {
            cfg.temperature = v;
        }
        if let Some(v) = self.top_p {
            cfg.top_p = v;
        }
        if let Some(v) = self.frequency_penalty {
            cfg.frequency_penalty = v;
        }
        if let Some(v) = self.presence_penalty {
            cfg.presence_penalty = v;
        }
        if let Some(v) = &self.stop {
            cfg.stop = v.clone();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    #[default]
    All,
    Sampled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub pool: PoolKind,
    pub pool_size: usize,
    pub pool_seed: u64,
    /// Build the candidate index when none is stored yet.
    pub build_index: bool,
    /// Where indexes live; `<out>/indexes` if unset.
    pub index_dir: Option<PathBuf>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { pool: PoolKind::All, pool_size: 100, pool_seed: 0, build_index: false, index_dir: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectSource {
    #[default]
    Lexical,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentGoldRule {
    #[default]
    Union,
    Intersection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub intent_gold: IntentGoldRule,
    pub all_sentence_threshold: f64,
    pub objects: ObjectSource,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { intent_gold: IntentGoldRule::Union, all_sentence_threshold: 0.5, objects: ObjectSource::Lexical }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Corpus,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    pub match_threshold: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { provider: ProviderKind::Corpus, endpoint: None, match_threshold: 0.8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub workers: usize,
    /// Response cache; `<out>/cache` if unset.
    pub cache_dir: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self { workers: 4, cache_dir: None, out: PathBuf::from("runs") }
    }
}

/// Replaces `${VAR}` and `${VAR:-default}` in `text` from `lookup`.
pub fn interpolate(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or_else(|| format!("unterminated `${{` in `{text}`"))?;
        let expr = &after[..end];
        let (name, default) = match expr.split_once(":-") {
            Some((n, d)) => (n, Some(d)),
            None => (expr, None),
        };
        match (lookup(name), default) {
            (Some(v), _) => out.push_str(&v),
            (None, Some(d)) => out.push_str(d),
            (None, None) => return Err(format!("environment variable `{name}` is not set")),
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(v: &mut toml::Value, path: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), String> {
    match v {
        toml::Value::String(s) => *s = interpolate(s, lookup).map_err(|e| format!("{path}: {e}"))?,
        toml::Value::Array(items) => {
            for (i, item) in items.iter_mut().enumerate() {
                interpolate_value(item, &format!("{path}[{i}]"), lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (k, item) in t.iter_mut() {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                interpolate_value(item, &sub, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Parses TOML text, interpolating environment variables into every string.
pub fn parse_config(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> anyhow::Result<RunConfig> {
    let mut value: toml::Value = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
    interpolate_value(&mut value, "", lookup).map_err(config_error)?;
    value.try_into().map_err(|e: toml::de::Error| config_error(e.to_string()))
}

/// Reads the config file (or defaults when there is none) and makes its
/// relative paths relative to the file's directory.
pub fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text, &|name| std::env::var(name).ok())?;
    let base = path.parent().unwrap_or(Path::new(""));
    cfg.rebase(base);
    Ok(cfg)
}

fn rebase_path(p: &mut PathBuf, base: &Path) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    fn rebase(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [&mut d.dialogues, &mut d.annotations, &mut d.images, &mut d.train_dialogues, &mut d.train_annotations]
            .into_iter()
            .flatten()
        {
            rebase_path(p, base);
        }
        if let Some(p) = &mut self.pipeline.names {
            rebase_path(p, base);
        }
        if let Some(p) = &mut self.retrieval.index_dir {
            rebase_path(p, base);
        }
        if let Some(p) = &mut self.run.cache_dir {
            rebase_path(p, base);
        }
        rebase_path(&mut self.run.out, base);
    }

    /// Checks the settings every command relies on.
    pub fn validate(&self) -> anyhow::Result<()> {
        let d = &self.data;
        for (field, path) in [
            ("data.dialogues", &d.dialogues),
            ("data.annotations", &d.annotations),
            ("data.images", &d.images),
            ("data.train_dialogues", &d.train_dialogues),
            ("data.train_annotations", &d.train_annotations),
            ("pipeline.names", &self.pipeline.names),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(config_error(format!("{field}: no such file {}", p.display())));
                }
            }
        }
        if d.dialogues.is_none() {
            return Err(config_error("data.dialogues is required"));
        }
        if self.pipeline.shots > 0 {
            if self.pipeline.profile != Profile::Full {
                return Err(config_error("pipeline.shots applies only to the full profile"));
            }
            if d.train_dialogues.is_none() || d.train_annotations.is_none() {
                return Err(config_error("pipeline.shots needs data.train_dialogues and data.train_annotations"));
            }
        }
        if !(0.0..=1.0).contains(&self.backend.refusal_rate) {
            return Err(config_error("backend.refusal_rate must lie in [0, 1]"));
        }
        if self.backend.refusal_rate > 0.0 && self.backend.kind != BackendKind::GoldEcho {
            return Err(config_error("backend.refusal_rate applies only to the gold-echo backend"));
        }
        if self.backend.kind == BackendKind::GoldEcho && d.annotations.is_none() {
            return Err(config_error("the gold-echo backend needs data.annotations"));
        }
        if self.embedding.kind == EmbeddingKind::Gold && d.annotations.is_none() {
            return Err(config_error("the gold embedding needs data.annotations"));
        }
        if self.embedding.kind == EmbeddingKind::Http && self.embedding.url.is_none() {
            return Err(config_error("embedding.url is required for the http embedding"));
        }
        if self.embedding.dim == 0 {
            return Err(config_error("embedding.dim must be positive"));
        }
        if self.retrieval.pool == PoolKind::Sampled && self.retrieval.pool_size == 0 {
            return Err(config_error("retrieval.pool_size must be positive"));
        }
        if self.run.workers == 0 {
            return Err(config_error("run.workers must be positive"));
        }
        if self.backend.max_in_flight == 0 || self.backend.max_attempts == 0 {
            return Err(config_error("backend.max_in_flight and backend.max_attempts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.augment.match_threshold) {
            return Err(config_error("augment.match_threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.run.cache_dir.clone().unwrap_or_else(|| self.run.out.join("cache"))
    }

    pub fn index_dir(&self) -> PathBuf {
        self.retrieval.index_dir.clone().unwrap_or_else(|| self.run.out.join("indexes"))
    }

    /// The settings that determine results, as stored in the run
    /// directory. Secrets and operational settings are left out.
    pub fn resolved(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("run");
        }
        v
    }

    /// Content hash over the resolved settings and the bytes of every input
    /// file, so changing either lands in a fresh run directory.
    pub fn run_id(&self) -> anyhow::Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.resolved())?);
        let d = &self.data;
        for p in
            [&d.dialogues, &d.annotations, &d.images, &d.train_dialogues, &d.train_annotations, &self.pipeline.names]
                .into_iter()
                .flatten()
        {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            h.update(Sha256::digest(&bytes));
        }
        Ok(hex::encode(h.finalize())[..16].to_owned())
    }

    pub fn run_dir(&self) -> anyhow::Result<PathBuf> {
        Ok(self.run.out.join(self.run_id()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(name: &str) -> Option<String> {
        (name == "KEY").then(|| "secret".to_owned())
    }

    #[test]
    fn interpolation() {
        assert_eq!(interpolate("a ${KEY} b", &env).unwrap(), "a secret b");
        assert_eq!(interpolate("${MISSING:-x}", &env).unwrap(), "x");
        assert!(interpolate("${MISSING}", &env).unwrap_err().contains("MISSING"));
        assert!(interpolate("${KEY", &env).is_err());
        assert_eq!(interpolate("plain", &env).unwrap(), "plain");
    }

    #[test]
    fn parses_nested_tables_with_env() {
        let cfg = parse_config(
            r#"
            [backend]
            kind = "openai"
            model = "m"
            api_key = "${KEY}"
            [pipeline]
            profile = "describe_retrieve"
            [generation.stage2]
            temperature = 0.5
            "#,
            &env,
        )
        .unwrap();
        assert_eq!(cfg.backend.api_key.as_deref(), Some("secret"));
        assert_eq!(cfg.backend.backend_id(), "openai:m");
        assert_eq!(cfg.pipeline.profile, Profile::DescribeRetrieve);
        assert_eq!(cfg.generation.stage2.temperature, Some(0.5));
        assert!(!cfg.resolved().to_string().contains("secret"));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = parse_config("[pipeline]\nshotz = 3\n", &env).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn run_id_ignores_operational_settings() {
        let mut a = RunConfig::default();
        let mut b = RunConfig::default();
        b.run.workers = 17;
        b.run.out = PathBuf::from("elsewhere");
        assert_eq!(a.run_id().unwrap(), b.run_id().unwrap());
        a.pipeline.seed = 3;
        assert_ne!(a.run_id().unwrap(), b.run_id().unwrap());
    }
}
