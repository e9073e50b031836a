//! TOML run configuration and its resolution into an [`Experiment`].

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batching::{BatchMode, Embedder, HashEmbedder, RemoteEmbedder};
use crate::fewshot::{load_few_shots, FewShotError};
use crate::gateway::{
    BackendKind, ChatBackend, HttpBackend, HttpConfig, MockAnswer, MockBackend, Prices, RateLimits,
    ReplayBackend, RetryPolicy, DEFAULT_TEMPERATURE,
};
use crate::ingest::{attach_labels, load_dataset, load_labels, IngestOptions, PairLayout};
use crate::model::{project_features, DataError, DataInstance, Task, TaskKind};
use crate::pipeline::{BatchingSpec, Experiment};
use crate::prompt::{question_body, PromptConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    FewShot(#[from] FewShotError),
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset CSV (or pairs file for the `tables` layout).
    pub dataset: PathBuf,
    /// Label CSV `id,label`; labels may also come from a `label` column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Few-shot sidecar (JSON lines). Few-shot prompting is on when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub few_shots: Option<PathBuf>,
    /// Examples to use from the sidecar; 3 for schema matching, 10 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    /// Attributes to keep; all when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_attributes: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub empty_is_missing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PairLayout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSettings {
    #[serde(default = "yes")]
    pub reasoning: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_hint: Option<String>,
    #[serde(default = "yes")]
    pub confirm_target: bool,
}

impl Default for PromptSettings {
    fn default() -> Self {
        PromptSettings {
            reasoning: true,
            type_hint: None,
            confirm_target: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hash {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Remote {
        url: String,
        dimension: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_dimension() -> usize {
    HashEmbedder::default().dimension
}

fn default_timeout_secs() -> u64 {
    60
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hash {
            dimension: default_dimension(),
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Box<dyn Embedder> {
        match self {
            EmbedderConfig::Hash { dimension } => Box::new(HashEmbedder {
                dimension: *dimension,
            }),
            EmbedderConfig::Remote {
                url,
                dimension,
                timeout_secs,
            } => Box::new(RemoteEmbedder::new(
                url.clone(),
                *dimension,
                Duration::from_secs(*timeout_secs),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchingSettings {
    #[serde(default = "default_mode")]
    pub mode: BatchMode,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    #[serde(default)]
    pub embedder: EmbedderConfig,
}

fn default_mode() -> BatchMode {
    BatchMode::Random
}

fn default_batch_size() -> usize {
    10
}

impl Default for BatchingSettings {
    fn default() -> Self {
        BatchingSettings {
            mode: default_mode(),
            batch_size: default_batch_size(),
            seed: 0,
            clusters: None,
            embedder: EmbedderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub prices: Prices,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    /// JSON lines `{"instance": id, "reason": .., "answer": ..}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<PathBuf>,
    /// Answer for questions not listed in `answers`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "default_backend")]
    pub kind: BackendKind,
    #[serde(default)]
    pub http: HttpConfig,
    /// Transcript answered by the replay backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    #[serde(default)]
    pub mock: MockConfig,
    /// Worker threads; 1 for http, 4 otherwise when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub rate_limits: RateLimits,
}

fn default_backend() -> BackendKind {
    BackendKind::Http
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: default_backend(),
            http: HttpConfig::default(),
            transcript: None,
            mock: MockConfig::default(),
            workers: None,
            retry: RetryPolicy::default(),
            rate_limits: RateLimits::default(),
        }
    }
}

impl BackendConfig {
    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(match self.kind {
            BackendKind::Http => 1,
            _ => 4,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Fraction of instances that may fail to parse before the run is
    /// reported as failed.
    #[serde(default = "default_failure_rate")]
    pub max_parse_failure_rate: f64,
    #[serde(default)]
    pub strict_parsing: bool,
}

fn default_failure_rate() -> f64 {
    0.1
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/latest"),
            max_parse_failure_rate: default_failure_rate(),
            strict_parsing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub data: DataConfig,
    #[serde(default)]
    pub prompt: PromptSettings,
    #[serde(default)]
    pub batching: BatchingSettings,
    pub model: ModelConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Batch sizes that worked well per model family.
pub fn recommended_batch_range(model: &str) -> Option<(usize, usize)> {
    let m = model.to_ascii_lowercase();
    if m.contains("gpt-4o") {
        Some((5, 10))
    } else if m.contains("gpt-4") {
        Some((10, 15))
    } else if m.contains("gpt-3.5") {
        Some((10, 20))
    } else {
        None
    }
}

pub fn default_shots(kind: TaskKind) -> usize {
    match kind {
        TaskKind::SchemaMatching => 3,
        _ => 10,
    }
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn require_file(what: &str, path: &Path) -> Result<(), ConfigError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Toml {
            path: origin.to_owned(),
            source,
        })
    }

    /// Reads `path` and makes its relative paths relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config = RunConfig::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data.dataset);
        for p in [
            &mut self.data.labels,
            &mut self.data.few_shots,
            &mut self.backend.transcript,
            &mut self.backend.mock.answers,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        if let Some(PairLayout::Tables { left, right, .. }) = &mut self.data.pairs {
            resolve(base, left);
            resolve(base, right);
        }
        resolve(base, &mut self.output.dir);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Checks everything that can be checked without loading data. Returns
    /// warnings for settings that are legal but unusual.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let mut warnings = Vec::new();
        if self.batching.batch_size == 0 {
            return invalid("batch_size must be at least 1".into());
        }
        if self.batching.clusters == Some(0) {
            return invalid("clusters must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.model.temperature) {
            return invalid(format!(
                "temperature {} outside [0, 2]",
                self.model.temperature
            ));
        }
        if self.model.max_tokens == Some(0) {
            return invalid("max_tokens must be positive".into());
        }
        if self.model.name.trim().is_empty() {
            return invalid("model name is empty".into());
        }
        if self.data.shots == Some(0) {
            return invalid("shots must be at least 1 when set".into());
        }
        if self.prompt.type_hint.is_some() && self.task.kind() != TaskKind::DataImputation {
            return invalid("type_hint only applies to data imputation".into());
        }
        if !(0.0..=1.0).contains(&self.output.max_parse_failure_rate) {
            return invalid("max_parse_failure_rate must be in [0, 1]".into());
        }
        if self.backend.workers == Some(0) {
            return invalid("workers must be at least 1".into());
        }
        if let Some(keep) = &self.data.keep_attributes {
            if let Some(target) = self.task.target() {
                if !keep.iter().any(|k| k == target) {
                    return invalid(format!(
                        "keep_attributes drops the target attribute `{target}`"
                    ));
                }
            }
        }
        require_file("dataset", &self.data.dataset)?;
        if let Some(p) = &self.data.labels {
            require_file("label file", p)?;
        }
        if let Some(p) = &self.data.few_shots {
            require_file("few-shot file", p)?;
        }
        if let Some(PairLayout::Tables { left, right, .. }) = &self.data.pairs {
            require_file("left table", left)?;
            require_file("right table", right)?;
        }
        match self.backend.kind {
            BackendKind::Replay => match &self.backend.transcript {
                None => return invalid("the replay backend needs backend.transcript".into()),
                Some(p) => require_file("transcript", p)?,
            },
            BackendKind::Mock => {
                let mock = &self.backend.mock;
                if mock.answers.is_none() && mock.default_answer.is_none() {
                    return invalid(
                        "the mock backend needs backend.mock.answers or default_answer".into(),
                    );
                }
                if let Some(p) = &mock.answers {
                    require_file("mock answer file", p)?;
                }
            }
            BackendKind::Http => {}
        }
        if let Some((lo, hi)) = recommended_batch_range(&self.model.name) {
            let b = self.batching.batch_size;
            if b < lo || b > hi {
                warnings.push(format!(
                    "batch size {b} is outside the range [{lo}, {hi}] recommended for {}",
                    self.model.name
                ));
            }
        }
        Ok(warnings)
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            empty_is_missing: self.data.empty_is_missing,
            pairs: self.data.pairs.clone().unwrap_or(PairLayout::Prefixed),
        }
    }

    /// Loads the dataset, labels and few-shot examples. Instances used as
    /// few-shot examples are removed from the evaluation pool.
    pub fn load_experiment(&self) -> Result<Experiment, ConfigError> {
        let task = &self.task;
        let mut instances = load_dataset(&self.data.dataset, task, &self.ingest_options())?;
        if let Some(path) = &self.data.labels {
            let labels = load_labels(path, task)?;
            let attached = attach_labels(&mut instances, &labels);
            log::info!("attached {attached} labels from {}", path.display());
        }
        if let Some(keep) = &self.data.keep_attributes {
            let keep: BTreeSet<String> = keep.iter().cloned().collect();
            instances = instances
                .iter()
                .map(|i| project_features(i, &keep, task))
                .collect::<Result<_, _>>()?;
        }

        let mut prompt = PromptConfig::new(task.clone());
        prompt.reasoning_enabled = self.prompt.reasoning;
        prompt.confirm_target = self.prompt.confirm_target;
        prompt.type_hint = self.prompt.type_hint.clone();
        if let Some(path) = &self.data.few_shots {
            let mut shots = load_few_shots(path, task, &instances)?;
            shots.truncate(self.data.shots.unwrap_or(default_shots(task.kind())));
            let used: BTreeSet<&str> = shots.iter().map(|s| s.instance.id.as_str()).collect();
            let before = instances.len();
            instances.retain(|i| !used.contains(i.id.as_str()));
            if before != instances.len() {
                log::info!(
                    "{} few-shot instances removed from the evaluation pool",
                    before - instances.len()
                );
            }
            prompt.few_shots = shots;
        }
        if let Some(hint) = &prompt.type_hint {
            if hint.trim().is_empty() {
                return Err(ConfigError::Invalid("type_hint is empty".into()));
            }
        }

        Ok(Experiment {
            prompt,
            instances,
            model: self.model.name.clone(),
            temperature: self.model.temperature,
            max_tokens: self.model.max_tokens,
            batching: BatchingSpec {
                mode: self.batching.mode,
                batch_size: self.batching.batch_size,
                seed: self.batching.seed,
                clusters: self.batching.clusters,
            },
            strict_parsing: self.output.strict_parsing,
            workers: self.backend.workers(),
        })
    }

    /// Builds the configured backend. `instances` keys the mock answer file.
    pub fn build_backend(
        &self,
        instances: &[DataInstance],
    ) -> Result<Box<dyn ChatBackend>, ConfigError> {
        match self.backend.kind {
            BackendKind::Http => HttpBackend::from_config(&self.backend.http)
                .map(|b| Box::new(b) as Box<dyn ChatBackend>)
                .map_err(|e| ConfigError::Invalid(e.to_string())),
            BackendKind::Replay => {
                let path = self.backend.transcript.as_ref().ok_or_else(|| {
                    ConfigError::Invalid("the replay backend needs backend.transcript".into())
                })?;
                ReplayBackend::open(path)
                    .map(|b| Box::new(b) as Box<dyn ChatBackend>)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            BackendKind::Mock => {
                let mock = &self.backend.mock;
                let answers = match &mock.answers {
                    Some(path) => mock_answers(path, &self.task, instances)?,
                    None => HashMap::new(),
                };
                let fallback = mock
                    .default_answer
                    .as_ref()
                    .map(|a| MockAnswer::new(mock.default_reason.as_deref(), a));
                Ok(Box::new(MockBackend::by_question(answers, fallback)))
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MockLine {
    instance: String,
    #[serde(default)]
    reason: Option<String>,
    answer: String,
}

/// Reads a mock answer file and keys it by question text.
pub fn mock_answers(
    path: &Path,
    task: &Task,
    instances: &[DataInstance],
) -> Result<HashMap<String, MockAnswer>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    let by_id: HashMap<&str, &DataInstance> =
        instances.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut out = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let bad =
            |m: String| ConfigError::Invalid(format!("{} line {}: {m}", path.display(), idx + 1));
        let line: MockLine = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
        let Some(instance) = by_id.get(line.instance.as_str()) else {
            log::debug!("mock answer for `{}` has no instance", line.instance);
            continue;
        };
        let body = question_body(instance, task).map_err(|e| bad(e.to_string()))?;
        out.insert(
            body,
            MockAnswer {
                reason: line.reason,
                answer: line.answer,
            },
        );
    }
    Ok(out)
}

/// Commented starting point written by `tabprep init`.
pub const TEMPLATE: &str = r#"# tabprep run configuration. Relative paths are relative to this file.

[task]
# error_detection | data_imputation | schema_matching | entity_matching
kind = "entity_matching"
# required for error_detection and data_imputation
# target_attribute = "city"

[data]
dataset = "data/pairs.csv"
# labels = "data/labels.csv"
# few_shots = "data/few_shots.jsonl"
# shots = 10
# keep_attributes = ["name", "addr", "city", "phone"]
empty_is_missing = true
# pairs = { layout = "tables", left = "data/tableA.csv", right = "data/tableB.csv", key_column = "id" }

[prompt]
reasoning = true
confirm_target = true
# type_hint = "The city is a city in the United States."

[batching]
mode = "random"    # or "cluster"
batch_size = 10
seed = 42
# clusters = 4
# embedder = { kind = "remote", url = "http://localhost:8080/embed", dimension = 384 }

[model]
name = "gpt-3.5-turbo"
temperature = 0.35
# max_tokens = 1024
# micro-currency per 1,000 tokens
prices = { prompt_micro_per_1k = 0, completion_micro_per_1k = 0 }

[backend]
kind = "http"      # http | mock | replay
# workers = 1
# transcript = "runs/previous/transcript.jsonl"
http = { base_url = "https://api.openai.com/v1", api_key_env = "OPENAI_API_KEY", timeout_secs = 120 }

[output]
dir = "runs/latest"
max_parse_failure_rate = 0.1
strict_parsing = false
"#;
