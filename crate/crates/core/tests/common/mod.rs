//! Shared fixtures: a synthetic task and a deterministic mock teacher.
#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use scotd::builder::{CoTSample, DistillationCorpus, ProvenanceStep, TeacherParams};
use scotd::client::{ClientError, Completion, CompletionModel, CompletionRequest, FinishReason};
use scotd::hashing::sub_seed;
use scotd::http::{HttpResponse, Transport, TransportError};
use scotd::parser::parse_cot;
use scotd::task::{Instance, OptionKey, PromptExample, PromptSet, TaskSpec};

pub const VOCAB: &[&str] = &[
    "the", "answer", "must", "be", "related", "to", "bees", "magnets", "metal", "friction", "rougher", "carpet", "ice",
    "swarm", "because", "only", "fits", "objects", "include", "more", "less", "surface", "gym", "thus", "so", "it",
    "has", "of", "above", "choices", "numerous", "plates", "nails", "cutlery", "smooth", "slide",
];

pub fn task4() -> TaskSpec {
    TaskSpec::multiple_choice("synth", 4).unwrap()
}

/// `n` instances `i0000..` with uniformly drawn gold labels.
pub fn instances(task: &TaskSpec, n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let gold = task.option_keys[rng.gen_range(0..task.option_keys.len())].as_str().to_string();
            let choices: Vec<(String, String)> = task
                .option_keys
                .iter()
                .map(|k| (k.as_str().to_string(), format!("option {} of {i}", k.as_str())))
                .collect();
            let refs: Vec<(&str, &str)> = choices.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
            Instance::new(task, format!("i{i:04}"), format!("synthetic question number {i}?"), &refs, Some(&gold)).unwrap()
        })
        .collect()
}

pub fn prompt_set(task: &TaskSpec) -> PromptSet {
    let ex = |id: &str, q: &str, gold: &str, rationale: &str| {
        let choices: Vec<(String, String)> = task
            .option_keys
            .iter()
            .map(|k| (k.as_str().to_string(), format!("choice {}", k.as_str())))
            .collect();
        let refs: Vec<(&str, &str)> = choices.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        PromptExample {
            instance: Instance::new(task, id, q, &refs, Some(gold)).unwrap(),
            rationale: rationale.into(),
            label: OptionKey::new(gold).unwrap(),
        }
    };
    PromptSet::new(
        task,
        vec![
            ex("p1", "Which one is first?", "a", "The first choice comes first."),
            ex("p2", "Which one is third?", "c", "Counting from the start, the third is c."),
        ],
    )
    .unwrap()
}

/// Question line of the last `Q:` block of a prompt.
pub fn target_question(prompt: &str) -> &str {
    prompt.rsplit("Q: ").next().unwrap_or("").lines().next().unwrap_or("")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WrongLabel {
    /// The key after gold, cyclically.
    Next,
    /// Uniform over the non-gold keys.
    Uniform,
}

/// Emits a chain of thought ending in the gold label with probability
/// `p_correct`. Output is a pure function of (seed, prompt, temperature).
pub struct MockTeacher {
    pub id: String,
    gold: HashMap<String, OptionKey>,
    keys: Vec<OptionKey>,
    pub p_correct: f64,
    pub wrong: WrongLabel,
    pub p_unparseable: f64,
    pub logprobs: bool,
    pub seed: u64,
    pub in_flight: usize,
    pub calls: AtomicUsize,
}

impl MockTeacher {
    pub fn new(task: &TaskSpec, instances: &[Instance], p_correct: f64, seed: u64) -> Self {
        MockTeacher {
            id: "mock-teacher".into(),
            gold: instances
                .iter()
                .map(|i| (i.question.clone(), i.gold_label.clone().unwrap()))
                .collect(),
            keys: task.option_keys.clone(),
            p_correct,
            wrong: WrongLabel::Uniform,
            p_unparseable: 0.0,
            logprobs: true,
            seed,
            in_flight: 4,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn wrong_label(&self, gold: &OptionKey, rng: &mut ChaCha8Rng) -> OptionKey {
        let g = self.keys.iter().position(|k| k == gold).unwrap();
        match self.wrong {
            WrongLabel::Next => self.keys[(g + 1) % self.keys.len()].clone(),
            WrongLabel::Uniform => {
                let r = rng.gen_range(0..self.keys.len() - 1);
                self.keys[if r >= g { r + 1 } else { r }].clone()
            }
        }
    }

    pub fn generate(&self, prompt: &str, temperature: f64, n: usize, want_logprobs: bool) -> Vec<Completion> {
        let question = target_question(prompt);
        let gold = self.gold.get(question).cloned().unwrap_or_else(|| self.keys[0].clone());
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, &format!("{temperature}|{prompt}")));
        (0..n)
            .map(|_| {
                let len = rng.gen_range(4..14);
                let words: Vec<&str> = (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
                let mut text = format!(" {}.", words.join(" "));
                if rng.gen_bool(self.p_unparseable) {
                    text.push_str(" I cannot tell.");
                } else {
                    let label = if rng.gen_bool(self.p_correct) { gold.clone() } else { self.wrong_label(&gold, &mut rng) };
                    text.push_str(&format!(" So the answer is: ({})", label.as_str()));
                }
                let token_logprobs = (self.logprobs && want_logprobs)
                    .then(|| (0..len + 6).map(|_| -(rng.gen_range(0..256) as f64) / 64.0).collect());
                Completion {
                    text,
                    token_logprobs,
                    finish_reason: FinishReason::Stop,
                }
            })
            .collect()
    }
}

impl CompletionModel for MockTeacher {
    fn model_id(&self) -> &str {
        &self.id
    }
    fn complete(&self, r: &CompletionRequest) -> Result<Vec<Completion>, ClientError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.generate(&r.prompt, r.temperature, r.num_samples, r.want_logprobs))
    }
    fn max_in_flight(&self) -> usize {
        self.in_flight
    }
}

/// Serves a [`MockTeacher`] through the completion HTTP contract.
pub struct MockTransport {
    pub teacher: Arc<MockTeacher>,
    pub requests: AtomicUsize,
}

impl MockTransport {
    pub fn new(teacher: MockTeacher) -> Self {
        MockTransport {
            teacher: Arc::new(teacher),
            requests: AtomicUsize::new(0),
        }
    }
}

pub fn completion_response(completions: &[Completion]) -> Value {
    let choices: Vec<Value> = completions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "index": i,
                "text": c.text,
                "finish_reason": "stop",
                "logprobs": c.token_logprobs.as_ref().map(|l| json!({ "token_logprobs": l })),
            })
        })
        .collect();
    json!({ "object": "text_completion", "choices": choices })
}

impl Transport for MockTransport {
    fn post_json(&self, _url: &str, body: &Value, _key: Option<&str>) -> Result<HttpResponse, TransportError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let prompt = body["prompt"].as_str().ok_or_else(|| TransportError("no prompt".into()))?;
        let n = body["n"].as_u64().unwrap_or(1) as usize;
        let t = body["temperature"].as_f64().unwrap_or(1.0);
        let out = self.teacher.generate(prompt, t, n, !body["logprobs"].is_null());
        Ok(HttpResponse {
            status: 200,
            body: completion_response(&out).to_string(),
        })
    }
}

/// Fails every request; proves a run is served entirely from cache.
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn post_json(&self, _: &str, _: &Value, _: Option<&str>) -> Result<HttpResponse, TransportError> {
        Err(TransportError("offline".into()))
    }
}

pub fn teacher_params() -> TeacherParams {
    TeacherParams {
        model_id: "mock-teacher".into(),
        temperature: 1.0,
        max_tokens: 256,
    }
}

/// A sample whose rationale is `rationale` and whose label is `label`.
pub fn sample(task: &TaskSpec, instance_id: &str, index: usize, rationale: &str, label: &str, lp: Option<f64>) -> CoTSample {
    let raw = format!("{rationale} So the answer is: ({label})");
    CoTSample {
        instance_id: instance_id.into(),
        sample_index: index,
        parsed: parse_cot(&raw, task),
        raw_text: raw,
        mean_logprob: lp,
        teacher: teacher_params(),
    }
}

pub fn corpus_from(task: &TaskSpec, entries: Vec<(String, Vec<CoTSample>)>) -> DistillationCorpus {
    DistillationCorpus {
        task_id: task.task_id.clone(),
        prompt_set_fingerprint: "v1:test".into(),
        entries: entries.into_iter().collect(),
        provenance: vec![ProvenanceStep {
            kind: "sample".into(),
            budget: None,
            seed: None,
            params: json!({}),
        }],
    }
}

/// Random words from [`VOCAB`].
pub fn random_text(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

type Respond = dyn Fn(&CompletionRequest) -> Result<Vec<Completion>, ClientError> + Send + Sync;

/// A model defined by a closure.
pub struct FnModel {
    pub id: String,
    respond: Box<Respond>,
}

impl FnModel {
    pub fn new(f: impl Fn(&CompletionRequest) -> Result<Vec<Completion>, ClientError> + Send + Sync + 'static) -> Self {
        FnModel {
            id: "fn-model".into(),
            respond: Box::new(f),
        }
    }

    /// Answers every request with `n` copies of `text`.
    pub fn constant(text: &'static str) -> Self {
        Self::new(move |r| Ok((0..r.num_samples).map(|_| Completion::text(text)).collect()))
    }
}

impl CompletionModel for FnModel {
    fn model_id(&self) -> &str {
        &self.id
    }
    fn complete(&self, r: &CompletionRequest) -> Result<Vec<Completion>, ClientError> {
        (self.respond)(r)
    }
}
