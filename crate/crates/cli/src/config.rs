//! Pipeline configuration: one TOML file, overridable by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use scotd::builder::{Setting, TrainingMode};
use scotd::client::{DEFAULT_CONCURRENCY, DEFAULT_MAX_TOKENS, DEFAULT_STOP, MAX_SAMPLES_PER_REQUEST, MIN_MAX_TOKENS};
use scotd::eval::{Decode, SweepAxis, DEFAULT_CONTRAST_TOKEN_BUDGET};
use scotd::filters::{FilterKind, FilterSpec, DEFAULT_DOWNSAMPLE_BUDGET};
use scotd::hashing::{json_fingerprint, sha256_hex};

pub const DEFAULT_API_KEY_ENV: &str = "SCOTD_API_KEY";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub task: TaskPaths,
    pub teacher: Endpoint,
    pub sampling: Sampling,
    pub student: Endpoint,
    pub embedder: Option<EmbedderConfig>,
    pub filters: Vec<FilterEntry>,
    pub build: BuildConfig,
    pub eval: EvalConfig,
    pub trainer: Option<TrainerConfig>,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskPaths {
    /// Directory holding `task.json` and `instances.jsonl`.
    pub dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub test_instances: Option<PathBuf>,
    pub prompt_set: Option<PathBuf>,
}

impl TaskPaths {
    pub fn manifest(&self) -> Option<PathBuf> {
        self.manifest.clone().or_else(|| self.dir.as_ref().map(|d| d.join("task.json")))
    }

    pub fn instances(&self) -> Option<PathBuf> {
        self.instances.clone().or_else(|| self.dir.as_ref().map(|d| d.join("instances.jsonl")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Endpoint {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for Endpoint {
    fn default() -> Self {
        Endpoint {
            endpoint: None,
            model: None,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            concurrency: DEFAULT_CONCURRENCY,
            timeout_secs: 120,
            max_retries: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampling {
    pub n_samples: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub stop: Vec<String>,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            n_samples: scotd::builder::DEFAULT_N_SAMPLES,
            temperature: scotd::builder::DEFAULT_TEACHER_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop: vec![DEFAULT_STOP.into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}

/// A filter as written in config; the seed defaults to the global seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterEntry {
    pub kind: FilterKind,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildConfig {
    pub mode: TrainingMode,
    pub setting: Setting,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            mode: TrainingMode::Scotd,
            setting: Setting::Supervised,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub decode: Decode,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub contrast_instances: Option<PathBuf>,
    pub token_budget: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            decode: Decode::Greedy,
            n: scotd::aggregation::DEFAULT_SC_SAMPLES,
            temperature: scotd::aggregation::DEFAULT_SC_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            contrast_instances: None,
            token_budget: DEFAULT_CONTRAST_TOKEN_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub train_command: Vec<String>,
    pub serve_command: Vec<String>,
    pub port: u16,
    #[serde(default = "default_ready")]
    pub ready_timeout_secs: u64,
    pub work_dir: Option<PathBuf>,
    /// Opaque size label, used by the model-size sweep.
    pub size: Option<f64>,
}

fn default_ready() -> u64 {
    600
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub points: Vec<f64>,
    /// One trainer per size for the model-size axis.
    pub models: Vec<TrainerConfig>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            axis: SweepAxis::NRationales,
            points: vec![1.0, 5.0, 10.0, 20.0, 30.0],
            models: Vec::new(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).map_err(|e| format!("{}: {}", path.display(), e.message()))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.cache_dir);
        fix(&mut self.task.dir);
        fix(&mut self.task.manifest);
        fix(&mut self.task.instances);
        fix(&mut self.task.test_instances);
        fix(&mut self.task.prompt_set);
        fix(&mut self.eval.contrast_instances);
        for t in self.trainer.iter_mut().chain(self.sweep.models.iter_mut()) {
            fix(&mut t.work_dir);
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn filter_specs(&self) -> Vec<FilterSpec> {
        self.filters
            .iter()
            .map(|f| FilterSpec::new(f.kind, f.budget.unwrap_or(DEFAULT_DOWNSAMPLE_BUDGET), f.seed.unwrap_or(self.seed)))
            .collect()
    }

    /// Fingerprint of everything that shapes an artifact's content: the
    /// configuration without output locations, plus the bytes of each input.
    pub fn fingerprint(&self, command: &str, inputs: &[(&str, &Path)]) -> String {
        let mut view = self.clone();
        view.output_dir = None;
        view.cache_dir = None;
        view.task = TaskPaths::default();
        view.eval.contrast_instances = None;
        for t in view.trainer.iter_mut().chain(view.sweep.models.iter_mut()) {
            t.work_dir = None;
        }
        let hashes: BTreeMap<&str, String> = inputs
            .iter()
            .map(|(name, p)| (*name, std::fs::read(p).map(|b| sha256_hex(&b)).unwrap_or_default()))
            .collect();
        format!(
            "sha256:{}",
            json_fingerprint(&json!({"command": command, "config": view, "inputs": hashes}))
        )
    }
}

/// Collects every problem instead of stopping at the first.
#[derive(Debug, Default)]
pub struct Problems(pub Vec<String>);

impl Problems {
    pub fn push(&mut self, p: impl Into<String>) {
        self.0.push(p.into());
    }

    pub fn check(&mut self, ok: bool, p: impl FnOnce() -> String) {
        if !ok {
            self.0.push(p());
        }
    }

    pub fn file(&mut self, what: &str, path: Option<&Path>) {
        match path {
            None => self.push(format!("{what}: not set")),
            Some(p) if !p.is_file() => self.push(format!("{what}: {} does not exist", p.display())),
            Some(_) => {}
        }
    }

    pub fn endpoint(&mut self, what: &str, e: &Endpoint) {
        self.check(e.endpoint.is_some(), || format!("{what}.endpoint: not set"));
        self.check(e.model.is_some(), || format!("{what}.model: not set"));
        self.check(e.concurrency >= 1, || format!("{what}.concurrency: must be at least 1"));
    }

    pub fn temperature(&mut self, what: &str, t: f64) {
        self.check((0.0..=2.0).contains(&t), || format!("{what}: {t} outside [0, 2]"));
    }

    pub fn samples(&mut self, what: &str, n: usize) {
        self.check((1..=MAX_SAMPLES_PER_REQUEST).contains(&n), || {
            format!("{what}: {n} outside [1, {MAX_SAMPLES_PER_REQUEST}]")
        });
    }

    pub fn max_tokens(&mut self, what: &str, n: usize) {
        self.check(n >= MIN_MAX_TOKENS, || format!("{what}: {n} below {MIN_MAX_TOKENS}"));
    }

    pub fn filters(&mut self, specs: &[FilterSpec]) {
        for (i, s) in specs.iter().enumerate() {
            if let Err(e) = s.validate() {
                self.push(format!("filters[{i}] ({}): {e}", s.kind.as_str()));
            }
        }
    }

    pub fn trainer(&mut self, what: &str, t: Option<&TrainerConfig>) {
        match t {
            None => self.push(format!("{what}: not configured")),
            Some(t) => {
                self.check(!t.train_command.is_empty(), || format!("{what}.train_command: empty"));
                self.check(!t.serve_command.is_empty(), || format!("{what}.serve_command: empty"));
                self.check(t.port != 0, || format!("{what}.port: must be non-zero"));
            }
        }
    }

    pub fn into_result(self) -> Result<(), Vec<String>> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(self.0)
        }
    }
}
