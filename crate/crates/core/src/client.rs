//! Text-completion client with per-sample caching and a bounded worker pool.
//!
//! The wire protocol is the common completion shape:
//! request `{model, prompt, n, temperature, max_tokens, stop, logprobs}`,
//! response `{choices: [{text, finish_reason, logprobs: {token_logprobs}}]}`.
//! Each sample index is cached separately, so raising `num_samples` only
//! requests the new indices.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache::ContentStore;
use crate::http::{HttpService, ReqwestTransport, RetryPolicy, ServiceError, Transport};

pub const DEFAULT_MAX_TOKENS: usize = 256;
pub const DEFAULT_STOP: &str = "\n\n";
pub const DEFAULT_CONCURRENCY: usize = 8;
pub const MAX_SAMPLES_PER_REQUEST: usize = 128;
pub const MIN_MAX_TOKENS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub num_samples: usize,
    pub max_tokens: usize,
    pub stop_sequences: Vec<String>,
    pub want_logprobs: bool,
}

impl CompletionRequest {
    /// Request with the default generation length and blank-line stop.
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>, temperature: f64, num_samples: usize) -> Self {
        CompletionRequest {
            model_id: model_id.into(),
            prompt: prompt.into(),
            temperature,
            num_samples,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop_sequences: vec![DEFAULT_STOP.to_string()],
            want_logprobs: true,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let mut problems = Vec::new();
        if !(0.0..=2.0).contains(&self.temperature) {
            problems.push(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if !(1..=MAX_SAMPLES_PER_REQUEST).contains(&self.num_samples) {
            problems.push(format!(
                "num_samples {} outside [1, {MAX_SAMPLES_PER_REQUEST}]",
                self.num_samples
            ));
        }
        if self.max_tokens < MIN_MAX_TOKENS {
            problems.push(format!("max_tokens {} below {MIN_MAX_TOKENS}", self.max_tokens));
        }
        if self.model_id.is_empty() {
            problems.push("model_id is empty".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ClientError::InvalidRequest(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub token_logprobs: Option<Vec<f64>>,
    pub finish_reason: FinishReason,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            token_logprobs: None,
            finish_reason: FinishReason::Stop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("likelihood unavailable: completion carries no token logprobs")]
pub struct LikelihoodUnavailable;

/// Arithmetic mean of the completion's token log-probabilities.
pub fn mean_token_logprob(completion: &Completion) -> Result<f64, LikelihoodUnavailable> {
    match completion.token_logprobs.as_deref() {
        Some(lps) if !lps.is_empty() => Ok(lps.iter().sum::<f64>() / lps.len() as f64),
        _ => Err(LikelihoodUnavailable),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("expected {expected} completions, service returned {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("cache I/O: {0}")]
    Cache(#[from] std::io::Error),
    #[error("{0}")]
    Model(String),
}

impl ClientError {
    /// True for failures of the remote service rather than of the caller.
    pub fn is_upstream(&self) -> bool {
        matches!(
            self,
            ClientError::Service(_) | ClientError::Malformed(_) | ClientError::CountMismatch { .. }
        )
    }
}

/// Anything that serves the completion contract: the HTTP client, or an
/// in-process model in tests.
pub trait CompletionModel: Send + Sync {
    fn model_id(&self) -> &str;

    /// Returns exactly `request.num_samples` completions in sample-index order.
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, ClientError>;

    /// Upper bound on concurrent `complete` calls.
    fn max_in_flight(&self) -> usize {
        1
    }
}

impl<M: CompletionModel + ?Sized> CompletionModel for &M {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, ClientError> {
        (**self).complete(request)
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

impl<M: CompletionModel + ?Sized> CompletionModel for Box<M> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, ClientError> {
        (**self).complete(request)
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

/// Runs `f` over `items` with at most `max_in_flight` calls in flight.
/// Output order follows input order regardless of completion order.
pub fn run_bounded<T, R, F>(max_in_flight: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if max_in_flight <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight)
        .build()
        .expect("worker pool builds");
    pool.install(|| {
        use rayon::prelude::*;
        items.par_iter().map(&f).collect()
    })
}

/// Issues every request through `model`'s worker pool.
pub fn complete_all<M: CompletionModel + ?Sized>(
    model: &M,
    requests: &[CompletionRequest],
) -> Vec<Result<Vec<Completion>, ClientError>> {
    run_bounded(model.max_in_flight(), requests, |r| model.complete(r))
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model_id: String,
    pub api_key: Option<String>,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub cache_dir: Option<PathBuf>,
    pub timeout: Duration,
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        ClientConfig {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            api_key: None,
            concurrency: DEFAULT_CONCURRENCY,
            retry: RetryPolicy::default(),
            cache_dir: None,
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Serialize)]
struct SampleKey<'a> {
    model_id: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
    stop_sequences: &'a [String],
    sample_index: usize,
}

/// A cached sample. Remembers whether logprobs were asked for, so a server
/// that never returns them still gets cache hits.
#[derive(Serialize, Deserialize)]
struct CacheEntry {
    completion: Completion,
    logprobs_requested: bool,
}

/// HTTP completion client with an optional content-addressed cache.
pub struct CompletionClient {
    model_id: String,
    concurrency: usize,
    service: HttpService,
    cache: Option<Arc<ContentStore>>,
    network_calls: AtomicUsize,
}

impl CompletionClient {
    pub fn new(config: ClientConfig) -> Result<Self, ClientError> {
        let transport = ReqwestTransport::new(config.timeout)
            .map_err(|e| ClientError::Model(format!("cannot build HTTP client: {e}")))?;
        Self::with_transport(config, Arc::new(transport))
    }

    pub fn with_transport(config: ClientConfig, transport: Arc<dyn Transport>) -> Result<Self, ClientError> {
        let cache = match &config.cache_dir {
            Some(dir) => Some(Arc::new(ContentStore::open(dir)?)),
            None => None,
        };
        Ok(Self::with_store(config, transport, cache))
    }

    /// Shares an already-open store, e.g. with the embedder.
    pub fn with_store(config: ClientConfig, transport: Arc<dyn Transport>, cache: Option<Arc<ContentStore>>) -> Self {
        CompletionClient {
            model_id: config.model_id,
            concurrency: config.concurrency.max(1),
            service: HttpService::new(config.endpoint, config.api_key, config.retry, transport),
            cache,
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    fn cache_key(request: &CompletionRequest, sample_index: usize) -> String {
        ContentStore::key_for(&SampleKey {
            model_id: &request.model_id,
            prompt: &request.prompt,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            stop_sequences: &request.stop_sequences,
            sample_index,
        })
    }

    fn fetch(&self, request: &CompletionRequest, n: usize) -> Result<Vec<Completion>, ClientError> {
        let body = json!({
            "model": request.model_id,
            "prompt": request.prompt,
            "n": n,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stop": request.stop_sequences,
            "logprobs": if request.want_logprobs { json!(1) } else { Value::Null },
        });
        self.network_calls.fetch_add(1, Ordering::Relaxed);
        let response = self.service.post(&body)?;
        let out = parse_response(&response)?;
        if out.len() != n {
            return Err(ClientError::CountMismatch {
                expected: n,
                got: out.len(),
            });
        }
        Ok(out)
    }
}

impl CompletionModel for CompletionClient {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, ClientError> {
        request.validate()?;
        let n = request.num_samples;
        let Some(cache) = &self.cache else {
            return self.fetch(request, n);
        };
        let keys: Vec<String> = (0..n).map(|i| Self::cache_key(request, i)).collect();
        let mut slots: Vec<Option<Completion>> = keys
            .iter()
            .map(|k| {
                cache
                    .get::<CacheEntry>(k)
                    .filter(|e| !request.want_logprobs || e.logprobs_requested || e.completion.token_logprobs.is_some())
                    .map(|e| e.completion)
            })
            .collect();
        let missing: Vec<usize> = (0..n).filter(|&i| slots[i].is_none()).collect();
        if !missing.is_empty() {
            let fresh = self.fetch(request, missing.len())?;
            for (idx, completion) in missing.into_iter().zip(fresh) {
                let entry = CacheEntry {
                    completion,
                    logprobs_requested: request.want_logprobs,
                };
                cache.put(&keys[idx], &entry)?;
                let CacheEntry { completion, .. } = entry;
                slots[idx] = Some(completion);
            }
        }
        Ok(slots.into_iter().map(|c| c.expect("every slot filled")).collect())
    }

    fn max_in_flight(&self) -> usize {
        self.concurrency
    }
}

/// Decodes the `choices` array, ordering by `index` when the server sends it.
pub fn parse_response(response: &Value) -> Result<Vec<Completion>, ClientError> {
    let choices = response
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ClientError::Malformed("missing `choices` array".into()))?;
    let mut indexed = Vec::with_capacity(choices.len());
    for (pos, choice) in choices.iter().enumerate() {
        let text = choice
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| ClientError::Malformed(format!("choice {pos} has no `text`")))?;
        let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        };
        let token_logprobs = match choice.get("logprobs").and_then(|l| l.get("token_logprobs")) {
            None | Some(Value::Null) => None,
            Some(Value::Array(items)) => {
                let mut lps = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::Null => continue,
                        v => {
                            let lp = v.as_f64().ok_or_else(|| {
                                ClientError::Malformed(format!("choice {pos}: non-numeric logprob"))
                            })?;
                            if !lp.is_finite() || lp > 1e-6 {
                                return Err(ClientError::Malformed(format!(
                                    "choice {pos}: logprob {lp} is not a log-probability"
                                )));
                            }
                            lps.push(lp.min(0.0));
                        }
                    }
                }
                (!lps.is_empty()).then_some(lps)
            }
            Some(_) => return Err(ClientError::Malformed(format!("choice {pos}: bad `token_logprobs`"))),
        };
        let index = choice
            .get("index")
            .and_then(Value::as_u64)
            .map(|i| i as usize)
            .unwrap_or(pos);
        indexed.push((
            index,
            Completion {
                text: text.to_string(),
                token_logprobs,
                finish_reason,
            },
        ));
    }
    indexed.sort_by_key(|(i, _)| *i);
    if indexed.iter().enumerate().any(|(pos, (i, _))| *i != pos) {
        return Err(ClientError::Malformed("choice indices are not 0..n".into()));
    }
    Ok(indexed.into_iter().map(|(_, c)| c).collect())
}
