//! Few-shot prompt construction, teacher sampling, and training-set export.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::client::{complete_all, mean_token_logprob, ClientError, CompletionModel, CompletionRequest, DEFAULT_MAX_TOKENS, DEFAULT_STOP};
use crate::hashing::json_fingerprint;
use crate::parser::{parse_cot, render_answer, render_target, ParsedCoT};
use crate::task::{Instance, OptionKey, PromptSet, TaskSpec, PROMPT_SEPARATOR};

/// Bumped whenever the prompt layout below changes.
pub const TEMPLATE_VERSION: u32 = 1;

pub const DEFAULT_N_SAMPLES: usize = 30;
pub const DEFAULT_TEACHER_TEMPERATURE: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("prompt set is for task {found:?}, target belongs to {expected:?}")]
    TaskMismatch { expected: String, found: String },
    #[error("{what} contains the prompt separator")]
    SeparatorCollision { what: String },
    #[error("prompt set is empty")]
    EmptyPromptSet,
    #[error("instance {instance_id}: {source}")]
    Client {
        instance_id: String,
        #[source]
        source: ClientError,
    },
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("duplicate instance_id {0:?}")]
    DuplicateInstance(String),
    #[error("corpus entry {0:?} has no matching instance")]
    UnknownInstance(String),
    #[error("instance {0:?} has no gold label, required in the supervised setting")]
    MissingGold(String),
    #[error("greedy_cot export needs a corpus sampled with n_samples=1 at temperature 0")]
    NotGreedyCorpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: usize,
}

/// One sampled rationale with its parsed label.
#[derive(Debug, Clone, PartialEq)]
pub struct CoTSample {
    pub instance_id: String,
    pub sample_index: usize,
    pub raw_text: String,
    pub parsed: ParsedCoT,
    pub mean_logprob: Option<f64>,
    pub teacher: TeacherParams,
}

/// One applied pipeline step, serialized as `{"kind", "budget", "seed", "params"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub kind: String,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub params: Value,
}

/// Sampled rationales per instance, keyed by instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillationCorpus {
    pub task_id: String,
    /// `v{template}:{sha256}`; corpora with different templates do not mix.
    pub prompt_set_fingerprint: String,
    pub entries: BTreeMap<String, Vec<CoTSample>>,
    pub provenance: Vec<ProvenanceStep>,
}

impl DistillationCorpus {
    pub fn n_samples(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn n_instances(&self) -> usize {
        self.entries.len()
    }

    pub fn samples(&self) -> impl Iterator<Item = &CoTSample> {
        self.entries.values().flatten()
    }

    /// Same metadata with new entries and one more provenance step.
    pub fn derive(&self, entries: BTreeMap<String, Vec<CoTSample>>, step: ProvenanceStep) -> Self {
        let mut provenance = self.provenance.clone();
        provenance.push(step);
        DistillationCorpus {
            task_id: self.task_id.clone(),
            prompt_set_fingerprint: self.prompt_set_fingerprint.clone(),
            entries,
            provenance,
        }
    }

    /// Keeps only sample indices below `budget` for every instance.
    pub fn first_n_samples(&self, budget: usize) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(id, samples)| {
                (
                    id.clone(),
                    samples.iter().filter(|s| s.sample_index < budget).cloned().collect(),
                )
            })
            .collect();
        self.derive(
            entries,
            ProvenanceStep {
                kind: "first_n".into(),
                budget: Some(budget),
                seed: None,
                params: json!({}),
            },
        )
    }

    /// Keeps only the listed instances.
    pub fn select_instances(&self, ids: &HashSet<String>, seed: Option<u64>, fraction: f64) -> Self {
        let entries = self
            .entries
            .iter()
            .filter(|(id, _)| ids.contains(*id))
            .map(|(id, s)| (id.clone(), s.clone()))
            .collect();
        self.derive(
            entries,
            ProvenanceStep {
                kind: "instance_subset".into(),
                budget: Some(ids.len()),
                seed,
                params: json!({ "fraction": fraction }),
            },
        )
    }

    /// The teacher settings of the sampling step, when this corpus has one.
    pub fn sampling_step(&self) -> Option<&ProvenanceStep> {
        self.provenance.iter().find(|s| s.kind == "sample")
    }

    pub fn template_version(&self) -> Option<&str> {
        self.prompt_set_fingerprint.split_once(':').map(|(v, _)| v)
    }
}

pub fn prompt_set_fingerprint(task: &TaskSpec, prompt_set: &PromptSet) -> String {
    let examples: Vec<Value> = prompt_set
        .examples
        .iter()
        .map(|ex| {
            json!({
                "id": ex.instance.instance_id,
                "question": ex.instance.question,
                "choices": ex.instance.ordered_choices(task).map(|(k, v)| (k.to_string(), v)).collect::<Vec<_>>(),
                "label": ex.label,
                "rationale": ex.rationale,
            })
        })
        .collect();
    let hash = json_fingerprint(&json!({
        "task_id": task.task_id,
        "option_keys": task.option_keys,
        "answer_phrase": task.answer_phrase,
        "examples": examples,
    }));
    format!("v{TEMPLATE_VERSION}:{hash}")
}

fn check_field(what: impl FnOnce() -> String, text: &str) -> Result<(), BuildError> {
    if text.contains(PROMPT_SEPARATOR) {
        return Err(BuildError::SeparatorCollision { what: what() });
    }
    Ok(())
}

/// `Q: {question}\nAnswer Choices:\n(k) {text}...\nA:`
fn render_question(task: &TaskSpec, instance: &Instance) -> Result<String, BuildError> {
    check_field(|| format!("question of {}", instance.instance_id), &instance.question)?;
    let mut out = format!("Q: {}\nAnswer Choices:", instance.question);
    for (key, text) in instance.ordered_choices(task) {
        check_field(|| format!("choice ({key}) of {}", instance.instance_id), text)?;
        out.push_str(&format!("\n({key}) {text}"));
    }
    out.push_str("\nA:");
    Ok(out)
}

/// Zero-shot prompt used for student training and evaluation.
pub fn zero_shot_prompt(task: &TaskSpec, instance: &Instance) -> Result<String, BuildError> {
    render_question(task, instance)
}

/// Few-shot teacher prompt: every demonstration with its rationale and
/// answer, blank-line separated, then the target question up to `A:`.
pub fn build_prompt(task: &TaskSpec, prompt_set: &PromptSet, target: &Instance) -> Result<String, BuildError> {
    build_prompt_with(task, prompt_set, target, true)
}

/// Few-shot prompt whose demonstrations carry only the answer clause.
pub fn build_label_only_prompt(task: &TaskSpec, prompt_set: &PromptSet, target: &Instance) -> Result<String, BuildError> {
    build_prompt_with(task, prompt_set, target, false)
}

fn build_prompt_with(
    task: &TaskSpec,
    prompt_set: &PromptSet,
    target: &Instance,
    with_rationale: bool,
) -> Result<String, BuildError> {
    if prompt_set.task_id != target.task_id {
        return Err(BuildError::TaskMismatch {
            expected: target.task_id.clone(),
            found: prompt_set.task_id.clone(),
        });
    }
    if prompt_set.examples.is_empty() {
        return Err(BuildError::EmptyPromptSet);
    }
    let mut blocks = Vec::with_capacity(prompt_set.examples.len() + 1);
    for ex in &prompt_set.examples {
        let mut block = render_question(task, &ex.instance)?;
        if with_rationale {
            let target = render_target(&ex.rationale, &ex.label, task).map_err(|_| BuildError::SeparatorCollision {
                what: format!("rationale of demonstration {}", ex.instance.instance_id),
            })?;
            block.push(' ');
            block.push_str(&target);
        } else {
            block.push(' ');
            block.push_str(&render_answer(&ex.label, task));
        }
        blocks.push(block);
    }
    blocks.push(render_question(task, target)?);
    Ok(blocks.join("\n\n"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingParams {
    pub model_id: String,
    pub n_samples: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub stop_sequences: Vec<String>,
}

impl SamplingParams {
    pub fn new(model_id: impl Into<String>) -> Self {
        SamplingParams {
            model_id: model_id.into(),
            n_samples: DEFAULT_N_SAMPLES,
            temperature: DEFAULT_TEACHER_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop_sequences: vec![DEFAULT_STOP.to_string()],
        }
    }

    /// One temperature-0 sample per instance: the Greedy-CoT baseline corpus.
    pub fn greedy(model_id: impl Into<String>) -> Self {
        SamplingParams {
            n_samples: 1,
            temperature: 0.0,
            ..Self::new(model_id)
        }
    }
}

/// Samples `n_samples` rationales per instance from the teacher.
pub fn sample_corpus<M: CompletionModel + ?Sized>(
    task: &TaskSpec,
    instances: &[Instance],
    prompt_set: &PromptSet,
    params: &SamplingParams,
    teacher: &M,
) -> Result<DistillationCorpus, BuildError> {
    if params.n_samples == 0 {
        return Err(BuildError::NoSamples);
    }
    let mut seen = HashSet::new();
    for inst in instances {
        if !seen.insert(inst.instance_id.as_str()) {
            return Err(BuildError::DuplicateInstance(inst.instance_id.clone()));
        }
    }
    let requests = instances
        .iter()
        .map(|inst| {
            Ok(CompletionRequest {
                model_id: params.model_id.clone(),
                prompt: build_prompt(task, prompt_set, inst)?,
                temperature: params.temperature,
                num_samples: params.n_samples,
                max_tokens: params.max_tokens,
                stop_sequences: params.stop_sequences.clone(),
                want_logprobs: true,
            })
        })
        .collect::<Result<Vec<_>, BuildError>>()?;

    let teacher_params = TeacherParams {
        model_id: params.model_id.clone(),
        temperature: params.temperature,
        max_tokens: params.max_tokens,
    };
    let mut entries = BTreeMap::new();
    for (inst, result) in instances.iter().zip(complete_all(teacher, &requests)) {
        let completions = result.map_err(|source| BuildError::Client {
            instance_id: inst.instance_id.clone(),
            source,
        })?;
        let samples = completions
            .into_iter()
            .enumerate()
            .map(|(sample_index, c)| CoTSample {
                instance_id: inst.instance_id.clone(),
                sample_index,
                parsed: parse_cot(&c.text, task),
                mean_logprob: mean_token_logprob(&c).ok().map(crate::corpus_io::quantize_logprob),
                raw_text: c.text,
                teacher: teacher_params.clone(),
            })
            .collect();
        entries.insert(inst.instance_id.clone(), samples);
    }
    Ok(DistillationCorpus {
        task_id: task.task_id.clone(),
        prompt_set_fingerprint: prompt_set_fingerprint(task, prompt_set),
        entries,
        provenance: vec![ProvenanceStep {
            kind: "sample".into(),
            budget: Some(params.n_samples),
            seed: None,
            params: json!({
                "model_id": params.model_id,
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
                "stop": params.stop_sequences,
            }),
        }],
    })
}

/// Resolves corpus entry keys to their task and instance. Multi-task corpora
/// use `{task_id}::{instance_id}` keys.
#[derive(Debug, Clone, Default)]
pub struct TaskCatalog {
    tasks: BTreeMap<String, (TaskSpec, BTreeMap<String, Instance>)>,
}

pub const QUALIFIER: &str = "::";

pub fn qualify(task_id: &str, instance_id: &str) -> String {
    format!("{task_id}{QUALIFIER}{instance_id}")
}

impl TaskCatalog {
    pub fn single(task: &TaskSpec, instances: &[Instance]) -> Self {
        let mut c = TaskCatalog::default();
        c.add(task, instances);
        c
    }

    pub fn add(&mut self, task: &TaskSpec, instances: &[Instance]) {
        let by_id = instances
            .iter()
            .map(|i| (i.instance_id.clone(), i.clone()))
            .collect();
        self.tasks.insert(task.task_id.clone(), (task.clone(), by_id));
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.get(task_id).map(|(t, _)| t)
    }

    pub fn resolve(&self, key: &str) -> Option<(&TaskSpec, &Instance)> {
        if let Some((task_id, id)) = key.split_once(QUALIFIER) {
            if let Some((task, by_id)) = self.tasks.get(task_id) {
                if let Some(inst) = by_id.get(id) {
                    return Some((task, inst));
                }
            }
        }
        self.tasks
            .values()
            .find_map(|(task, by_id)| by_id.get(key).map(|inst| (task, inst)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    Scotd,
    LabelOnly,
    GreedyCot,
}

/// Whether training instances carry gold labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Supervised,
    FewShot,
}

/// One line of the training JSONL consumed by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    pub completion: String,
    pub instance_id: String,
    pub provenance: Vec<String>,
}

/// Converts a corpus into zero-shot `(prompt, completion)` training pairs.
///
/// Completions start with a space so that `prompt + completion` reads
/// `A: <rationale> <answer phrase> (k)`. Samples without a parsed label or
/// without a rationale are skipped in the chain-of-thought modes.
pub fn to_training_examples(
    corpus: &DistillationCorpus,
    catalog: &TaskCatalog,
    mode: TrainingMode,
    setting: Setting,
) -> Result<Vec<TrainingExample>, BuildError> {
    if mode == TrainingMode::GreedyCot {
        let greedy = corpus.sampling_step().is_some_and(|s| {
            s.budget == Some(1) && s.params.get("temperature").and_then(Value::as_f64) == Some(0.0)
        });
        if !greedy {
            return Err(BuildError::NotGreedyCorpus);
        }
    }
    let provenance: Vec<String> = corpus.provenance.iter().map(|s| s.kind.clone()).collect();
    let mut out = Vec::new();
    for (key, samples) in &corpus.entries {
        let (task, inst) = catalog
            .resolve(key)
            .ok_or_else(|| BuildError::UnknownInstance(key.clone()))?;
        let prompt = zero_shot_prompt(task, inst)?;
        let mut push = |completion: String| {
            out.push(TrainingExample {
                prompt: prompt.clone(),
                completion: format!(" {completion}"),
                instance_id: key.clone(),
                provenance: provenance.clone(),
            })
        };
        match mode {
            TrainingMode::Scotd | TrainingMode::GreedyCot => {
                for s in samples {
                    let Some(label) = &s.parsed.predicted_label else { continue };
                    match render_target(&s.parsed.rationale_text, label, task) {
                        Ok(t) => push(t),
                        Err(e) => tracing::debug!(instance = %key, sample = s.sample_index, error = %e, "skipping sample"),
                    }
                }
            }
            TrainingMode::LabelOnly => match setting {
                Setting::Supervised => {
                    let gold = inst
                        .gold_label
                        .as_ref()
                        .ok_or_else(|| BuildError::MissingGold(key.clone()))?;
                    push(render_answer(gold, task));
                }
                Setting::FewShot => {
                    for label in samples.iter().filter_map(|s| s.parsed.predicted_label.as_ref()) {
                        push(render_answer(label, task));
                    }
                }
            },
        }
    }
    Ok(out)
}

/// Parses a scotd training completion back into `(rationale, label)`.
pub fn parse_training_completion(completion: &str, task: &TaskSpec) -> Option<(String, OptionKey)> {
    let p = parse_cot(completion, task);
    p.predicted_label.map(|l| (p.rationale_text, l))
}

pub fn training_jsonl(examples: &[TrainingExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("training example serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::Completion;
    use crate::parser::ParseStatus;
    use crate::task::{PromptExample, TaskKind};
    use proptest::prelude::*;

    fn task() -> TaskSpec {
        TaskSpec::multiple_choice("obqa", 4).unwrap()
    }

    fn inst(task: &TaskSpec, id: &str, q: &str, gold: Option<&str>) -> Instance {
        Instance::new(task, id, q, &[("a", "clay pots"), ("b", "roofing nails"), ("c", "paper plates"), ("d", "plastic cutlery")], gold)
            .unwrap()
    }

    fn prompt_set(task: &TaskSpec) -> PromptSet {
        let demo = inst(task, "demo", "Magnets may be attracted to", Some("b"));
        PromptSet::new(
            task,
            vec![PromptExample {
                instance: demo,
                rationale: "Magnets are attracted to metal objects. These objects include roofing nails.".into(),
                label: OptionKey::new("b").unwrap(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn one_demo_one_target_layout() {
        let t = task();
        let p = build_prompt(&t, &prompt_set(&t), &inst(&t, "x", "Which is metal?", None)).unwrap();
        assert_eq!(p.matches("Q: ").count(), 2);
        assert_eq!(p.matches("\nA:").count(), 2);
        assert!(p.ends_with("(d) plastic cutlery\nA:"));
        assert!(p.contains("include roofing nails. So the answer is: (b)\n\nQ: Which is metal?"));
        assert_eq!(
            p,
            "Q: Magnets may be attracted to\nAnswer Choices:\n(a) clay pots\n(b) roofing nails\n(c) paper plates\n(d) plastic cutlery\n\
             A: Magnets are attracted to metal objects. These objects include roofing nails. So the answer is: (b)\n\n\
             Q: Which is metal?\nAnswer Choices:\n(a) clay pots\n(b) roofing nails\n(c) paper plates\n(d) plastic cutlery\nA:"
        );
    }

    #[test]
    fn uppercase_demo_label_is_normalized() {
        let t = TaskSpec::new("quarel", TaskKind::BinaryClassification, &["a", "b"], None).unwrap();
        let demo = Instance::new(&t, "d", "Which surface is rougher?", &[("A", "carpet"), ("B", "ice rink")], Some("A")).unwrap();
        let raw = "When something is smoother, it is easier to slide on and easier to pass through. So the carpet is rougher. So the answer is: (A)";
        let parsed = parse_cot(raw, &t);
        let set = PromptSet::new(
            &t,
            vec![PromptExample {
                instance: demo.clone(),
                rationale: parsed.rationale_text,
                label: parsed.predicted_label.unwrap(),
            }],
        )
        .unwrap();
        let target = Instance::new(&t, "x", "?", &[("a", "1"), ("b", "2")], None).unwrap();
        let p = build_prompt(&t, &set, &target).unwrap();
        let demo_block = p.split("\n\n").next().unwrap();
        assert!(demo_block.ends_with("So the carpet is rougher. So the answer is: (a)"), "{demo_block}");
    }

    #[test]
    fn empty_prompt_set_and_collisions() {
        let t = task();
        let empty = PromptSet {
            task_id: "obqa".into(),
            examples: vec![],
        };
        let target = inst(&t, "x", "q", None);
        assert!(matches!(build_prompt(&t, &empty, &target), Err(BuildError::EmptyPromptSet)));
        let bad = inst(&t, "y", "evil\n\nQ: injected", None);
        assert!(matches!(
            build_prompt(&t, &prompt_set(&t), &bad),
            Err(BuildError::SeparatorCollision { .. })
        ));
        let other = TaskSpec::multiple_choice("csqa", 4).unwrap();
        let foreign = inst(&other, "z", "q", None);
        assert!(matches!(build_prompt(&t, &prompt_set(&t), &foreign), Err(BuildError::TaskMismatch { .. })));
    }

    struct Fixed(&'static str);
    impl CompletionModel for Fixed {
        fn model_id(&self) -> &str {
            "fixed"
        }
        fn complete(&self, r: &CompletionRequest) -> Result<Vec<Completion>, ClientError> {
            Ok((0..r.num_samples)
                .map(|i| Completion {
                    token_logprobs: Some(vec![-(i as f64) / 3.0 - 0.1]),
                    ..Completion::text(self.0)
                })
                .collect())
        }
        fn max_in_flight(&self) -> usize {
            4
        }
    }

    fn instances(t: &TaskSpec, n: usize) -> Vec<Instance> {
        (0..n).map(|i| inst(t, &format!("i{i:03}"), &format!("question {i}"), Some("b"))).collect()
    }

    #[test]
    fn corpus_has_n_samples_per_instance() {
        let t = task();
        let insts = instances(&t, 100);
        let corpus = sample_corpus(&t, &insts, &prompt_set(&t), &SamplingParams::new("fixed"), &Fixed("r. So the answer is: (c)")).unwrap();
        assert_eq!(corpus.n_instances(), 100);
        assert_eq!(corpus.n_samples(), 3000);
        for samples in corpus.entries.values() {
            let idx: Vec<usize> = samples.iter().map(|s| s.sample_index).collect();
            assert_eq!(idx, (0..30).collect::<Vec<_>>());
            assert!(samples.iter().all(|s| s.parsed.predicted_label.as_ref().unwrap().as_str() == "c"));
        }
        let s = &corpus.entries["i000"][4];
        assert_eq!(s.mean_logprob, Some(crate::corpus_io::quantize_logprob(-4.0 / 3.0 - 0.1)));
        assert_eq!(corpus.provenance.len(), 1);
        assert_eq!(corpus.provenance[0].budget, Some(30));
    }

    #[test]
    fn client_errors_name_the_instance() {
        struct Failing;
        impl CompletionModel for Failing {
            fn model_id(&self) -> &str {
                "f"
            }
            fn complete(&self, r: &CompletionRequest) -> Result<Vec<Completion>, ClientError> {
                if r.prompt.contains("question 3") {
                    Err(ClientError::Model("boom".into()))
                } else {
                    Ok(vec![Completion::text("x"); r.num_samples])
                }
            }
        }
        let t = task();
        let err = sample_corpus(&t, &instances(&t, 5), &prompt_set(&t), &SamplingParams::new("f"), &Failing).unwrap_err();
        assert!(matches!(err, BuildError::Client { ref instance_id, .. } if instance_id == "i003"), "{err}");
    }

    #[test]
    fn training_export_modes() {
        let t = task();
        let insts = instances(&t, 10);
        let catalog = TaskCatalog::single(&t, &insts);
        let corpus = sample_corpus(&t, &insts, &prompt_set(&t), &SamplingParams::new("fixed"), &Fixed("Nails are metal. So the answer is: (c)")).unwrap();

        let scotd = to_training_examples(&corpus, &catalog, TrainingMode::Scotd, Setting::Supervised).unwrap();
        assert_eq!(scotd.len(), 300);
        assert!(scotd[0].prompt.starts_with("Q: question 0\nAnswer Choices:\n(a) clay pots"));
        assert!(scotd[0].prompt.ends_with("\nA:"));
        assert!(!scotd[0].prompt.contains("Magnets"), "training prompts are zero-shot");
        assert_eq!(scotd[0].completion, " Nails are metal. So the answer is: (c)");
        for ex in &scotd {
            let (r, l) = parse_training_completion(&ex.completion, &t).unwrap();
            assert_eq!((r.as_str(), l.as_str()), ("Nails are metal.", "c"));
        }

        let sup = to_training_examples(&corpus, &catalog, TrainingMode::LabelOnly, Setting::Supervised).unwrap();
        assert_eq!(sup.len(), 10);
        assert_eq!(sup[0].completion, " So the answer is: (b)");

        let few = to_training_examples(&corpus, &catalog, TrainingMode::LabelOnly, Setting::FewShot).unwrap();
        assert_eq!(few.len(), 300);
        assert!(few.iter().all(|e| e.completion == " So the answer is: (c)"), "teacher label kept even when wrong");

        assert!(matches!(
            to_training_examples(&corpus, &catalog, TrainingMode::GreedyCot, Setting::Supervised),
            Err(BuildError::NotGreedyCorpus)
        ));
        let greedy = sample_corpus(&t, &insts, &prompt_set(&t), &SamplingParams::greedy("fixed"), &Fixed("g. So the answer is: (b)")).unwrap();
        assert_eq!(to_training_examples(&greedy, &catalog, TrainingMode::GreedyCot, Setting::Supervised).unwrap().len(), 10);
    }

    #[test]
    fn supervised_label_only_needs_gold() {
        let t = task();
        let insts: Vec<Instance> = (0..3).map(|i| inst(&t, &format!("u{i}"), "q", None)).collect();
        let corpus = sample_corpus(&t, &insts, &prompt_set(&t), &SamplingParams::new("fixed"), &Fixed("So the answer is: (a)")).unwrap();
        let catalog = TaskCatalog::single(&t, &insts);
        assert!(matches!(
            to_training_examples(&corpus, &catalog, TrainingMode::LabelOnly, Setting::Supervised),
            Err(BuildError::MissingGold(_))
        ));
        let scotd = to_training_examples(&corpus, &catalog, TrainingMode::Scotd, Setting::FewShot).unwrap();
        assert!(scotd.is_empty(), "empty rationales cannot become targets");
        assert_eq!(corpus.entries["u0"][0].parsed.parse_status, ParseStatus::Ok);
    }

    proptest! {
        #[test]
        fn distinct_targets_render_distinct_prompts(
            q1 in "[a-z ?]{1,20}", q2 in "[a-z ?]{1,20}",
            c1 in proptest::collection::vec("[a-z ]{1,8}", 4),
            c2 in proptest::collection::vec("[a-z ]{1,8}", 4),
        ) {
            let t = task();
            let mk = |id: &str, q: &str, c: &[String]| Instance::new(&t, id, q,
                &[("a", c[0].as_str()), ("b", c[1].as_str()), ("c", c[2].as_str()), ("d", c[3].as_str())], None).unwrap();
            let x = mk("x", &q1, &c1);
            let y = mk("y", &q2, &c2);
            let set = prompt_set(&t);
            let px = build_prompt(&t, &set, &x).unwrap();
            let py = build_prompt(&t, &set, &y).unwrap();
            prop_assert_eq!(px == py, q1 == q2 && c1 == c2);
        }
    }
}
