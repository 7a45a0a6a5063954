//! Accuracy evaluation, contrast-set comparison, sweeps, and multi-task corpora.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aggregation::{greedy_predict, self_consistent_predict, DecodeError, GenerationParams, DEFAULT_SC_SAMPLES, DEFAULT_SC_TEMPERATURE};
use crate::builder::{
    build_label_only_prompt, prompt_set_fingerprint, qualify, to_training_examples, BuildError, DistillationCorpus,
    ProvenanceStep, Setting, TaskCatalog, TrainingMode,
};
use crate::client::{run_bounded, ClientError, CompletionModel, CompletionRequest};
use crate::embedder::Embedder;
use crate::filters::{apply_chain, FilterError, FilterSpec};
use crate::hashing::{json_fingerprint, sha256_hex};
use crate::parser::{parse_cot, ParseStatus};
use crate::task::{Instance, OptionKey, PromptSet, TaskKind, TaskSpec};
use crate::trainer::{Trainer, TrainerError};

/// Completion budget of the no-CoT baseline; the smallest a request allows.
pub const NO_COT_MAX_TOKENS: usize = 16;
pub const DEFAULT_CONTRAST_TOKEN_BUDGET: usize = 700;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decode {
    NoCot,
    Greedy,
    SelfConsistency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeParams {
    pub n: usize,
    pub temperature: f64,
    pub generation: GenerationParams,
    /// Demonstrations for the no-CoT baseline; their rationales are not shown.
    pub prompt_set: Option<PromptSet>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            n: DEFAULT_SC_SAMPLES,
            temperature: DEFAULT_SC_TEMPERATURE,
            generation: GenerationParams::default(),
            prompt_set: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("test instances without gold labels: {0:?}")]
    MissingGold(Vec<String>),
    #[error("model failed on instances {failing:?}: {first}")]
    Client { failing: Vec<String>, first: String, upstream: bool },
    #[error(transparent)]
    Prompt(#[from] BuildError),
    #[error("no_cot decoding needs a prompt set")]
    NoPromptSet,
    #[error("contrast evaluation needs a binary_classification task")]
    NotBinary,
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("cannot concatenate corpora: {0}")]
    Concat(String),
}

impl EvalError {
    pub fn is_upstream(&self) -> bool {
        matches!(self, EvalError::Client { upstream: true, .. } | EvalError::Trainer(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub instance_id: String,
    pub predicted: Option<OptionKey>,
    pub gold: OptionKey,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteStats {
    pub mean_valid_votes: f64,
    pub mean_total_votes: f64,
    pub ties_broken: usize,
    pub no_winner: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub model_id: String,
    pub decode: Decode,
    pub accuracy: f64,
    pub n_instances: usize,
    pub per_instance: Vec<InstanceResult>,
    pub vote_stats: Option<VoteStats>,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn n_correct(&self) -> usize {
        self.per_instance.iter().filter(|r| r.correct).count()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Reads the label of a no-CoT completion: the answer clause if present,
/// otherwise a leading `(k)`.
pub fn parse_label_only(text: &str, task: &TaskSpec) -> Option<OptionKey> {
    let parsed = parse_cot(text, task);
    if parsed.parse_status != ParseStatus::NoAnswerPhrase {
        return parsed.predicted_label;
    }
    let t = text.trim_start();
    let inner = t.strip_prefix('(')?.split(')').next()?;
    task.key(inner).cloned()
}

struct Prediction {
    label: Option<OptionKey>,
    vote: Option<crate::aggregation::VoteResult>,
}

fn predict_one(
    task: &TaskSpec,
    inst: &Instance,
    model: &dyn CompletionModel,
    decode: Decode,
    params: &DecodeParams,
) -> Result<Prediction, DecodeError> {
    match decode {
        Decode::Greedy => Ok(Prediction {
            label: greedy_predict(inst, task, model, &params.generation)?.predicted_label,
            vote: None,
        }),
        Decode::SelfConsistency => {
            let v = self_consistent_predict(inst, task, model, params.n, params.temperature, &params.generation)?;
            Ok(Prediction {
                label: v.winner.clone(),
                vote: Some(v),
            })
        }
        Decode::NoCot => {
            let set = params.prompt_set.as_ref().expect("checked by evaluate");
            let req = CompletionRequest {
                model_id: model.model_id().to_string(),
                prompt: build_label_only_prompt(task, set, inst)?,
                temperature: 0.0,
                num_samples: 1,
                max_tokens: NO_COT_MAX_TOKENS,
                stop_sequences: vec!["\n".into()],
                want_logprobs: false,
            };
            let out = model.complete(&req)?;
            let text = out.first().map(|c| c.text.as_str()).unwrap_or("");
            Ok(Prediction {
                label: parse_label_only(text, task),
                vote: None,
            })
        }
    }
}

fn report_fingerprint(task: &TaskSpec, model: &dyn CompletionModel, decode: Decode, params: &DecodeParams, ids: &[&str]) -> String {
    json_fingerprint(&json!({
        "task_id": task.task_id,
        "model_id": model.model_id(),
        "decode": decode,
        "n": params.n,
        "temperature": params.temperature,
        "generation": params.generation,
        "prompt_set": params.prompt_set.as_ref().map(|p| prompt_set_fingerprint(task, p)),
        "instances": ids,
    }))
}

/// Scores `model` on labeled test instances. Unparseable or absent
/// predictions count as incorrect.
pub fn evaluate(
    task: &TaskSpec,
    test: &[Instance],
    model: &dyn CompletionModel,
    decode: Decode,
    params: &DecodeParams,
) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let unlabeled: Vec<String> = test
        .iter()
        .filter(|i| i.gold_label.is_none())
        .map(|i| i.instance_id.clone())
        .collect();
    if !unlabeled.is_empty() {
        return Err(EvalError::MissingGold(unlabeled));
    }
    if decode == Decode::NoCot && params.prompt_set.is_none() {
        return Err(EvalError::NoPromptSet);
    }
    let mut ordered: Vec<&Instance> = test.iter().collect();
    ordered.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));

    let results = run_bounded(model.max_in_flight(), &ordered, |inst| predict_one(task, inst, model, decode, params));

    let mut failing = Vec::new();
    let mut first_err: Option<DecodeError> = None;
    let mut per_instance = Vec::with_capacity(ordered.len());
    let mut votes = Vec::new();
    for (inst, result) in ordered.iter().zip(results) {
        match result {
            Ok(pred) => {
                let gold = inst.gold_label.clone().expect("checked above");
                let correct = pred.label.as_ref() == Some(&gold);
                per_instance.push(InstanceResult {
                    instance_id: inst.instance_id.clone(),
                    predicted: pred.label,
                    gold,
                    correct,
                });
                votes.extend(pred.vote);
            }
            Err(DecodeError::Prompt(e)) => return Err(EvalError::Prompt(e)),
            Err(e) => {
                failing.push(inst.instance_id.clone());
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        let upstream = matches!(&e, DecodeError::Client(c) if c.is_upstream());
        return Err(EvalError::Client {
            failing,
            first: e.to_string(),
            upstream,
        });
    }

    let n = per_instance.len();
    let n_correct = per_instance.iter().filter(|r| r.correct).count();
    let vote_stats = (decode == Decode::SelfConsistency).then(|| VoteStats {
        mean_valid_votes: votes.iter().map(|v| v.valid_votes as f64).sum::<f64>() / n as f64,
        mean_total_votes: votes.iter().map(|v| v.total_votes as f64).sum::<f64>() / n as f64,
        ties_broken: votes.iter().filter(|v| v.tie_broken).count(),
        no_winner: votes.iter().filter(|v| v.winner.is_none()).count(),
    });
    let ids: Vec<&str> = ordered.iter().map(|i| i.instance_id.as_str()).collect();
    Ok(EvalReport {
        task_id: task.task_id.clone(),
        model_id: model.model_id().to_string(),
        decode,
        accuracy: n_correct as f64 / n as f64,
        n_instances: n,
        per_instance,
        vote_stats,
        config_fingerprint: report_fingerprint(task, model, decode, params, &ids),
    })
}

/// Keeps the first `budget` whitespace-delimited tokens of `text`.
pub fn truncate_tokens(text: &str, budget: usize) -> &str {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            if seen == budget {
                return text[..i].trim_end();
            }
            seen += 1;
            in_token = true;
        }
    }
    text
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub original: EvalReport,
    pub contrast: EvalReport,
    /// original accuracy minus contrast accuracy
    pub gap: f64,
}

/// Evaluates one model on an original test set and its contrast set, with
/// inputs truncated to `token_budget` tokens.
pub fn evaluate_contrast_pair(
    task: &TaskSpec,
    original: &[Instance],
    contrast: &[Instance],
    model: &dyn CompletionModel,
    decode: Decode,
    params: &DecodeParams,
    token_budget: usize,
) -> Result<ContrastReport, EvalError> {
    if task.kind != TaskKind::BinaryClassification {
        return Err(EvalError::NotBinary);
    }
    let truncate = |set: &[Instance]| -> Vec<Instance> {
        set.iter()
            .map(|i| Instance {
                question: truncate_tokens(&i.question, token_budget).to_string(),
                ..i.clone()
            })
            .collect()
    };
    let original = evaluate(task, &truncate(original), model, decode, params)?;
    let contrast = evaluate(task, &truncate(contrast), model, decode, params)?;
    let gap = original.accuracy - contrast.accuracy;
    Ok(ContrastReport { original, contrast, gap })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NRationales,
    DataFraction,
    ModelSize,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::NRationales => "n_rationales",
            SweepAxis::DataFraction => "data_fraction",
            SweepAxis::ModelSize => "model_size",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// `axis,x,task,decode,accuracy,n` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,x,task,decode,accuracy,n\n");
        for p in &self.points {
            let decode = serde_json::to_value(p.report.decode).expect("decode serializes");
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.axis.as_str(),
                p.x,
                p.report.task_id,
                decode.as_str().unwrap_or_default(),
                p.report.accuracy,
                p.report.n_instances
            ));
        }
        out
    }
}

/// Everything between a sampled corpus and an evaluated student.
pub struct PipelineConfig<'a> {
    pub filters: Vec<FilterSpec>,
    pub embedder: Option<(&'a dyn Embedder, &'a str)>,
    pub mode: TrainingMode,
    pub setting: Setting,
    pub trainer: &'a dyn Trainer,
    pub decode: Decode,
    pub decode_params: DecodeParams,
    pub seed: u64,
}

fn train_and_eval(
    corpus: &DistillationCorpus,
    catalog: &TaskCatalog,
    task: &TaskSpec,
    test: &[Instance],
    cfg: &PipelineConfig<'_>,
    trainer: &dyn Trainer,
    tag: &str,
) -> Result<EvalReport, EvalError> {
    let filtered = apply_chain(corpus, &cfg.filters, catalog, cfg.embedder)?;
    let examples = to_training_examples(&filtered, catalog, cfg.mode, cfg.setting)?;
    let student = trainer.train(&examples, tag)?;
    evaluate(task, test, student.as_ref(), cfg.decode, &cfg.decode_params)
}

fn sorted_unique(xs: &[f64]) -> Result<Vec<f64>, EvalError> {
    let mut v = xs.to_vec();
    if v.is_empty() {
        return Err(EvalError::InvalidSweep("no sweep points".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EvalError::InvalidSweep("non-finite sweep point".into()));
    }
    v.sort_by(f64::total_cmp);
    if v.windows(2).any(|w| w[0] == w[1]) {
        return Err(EvalError::InvalidSweep("duplicate sweep points".into()));
    }
    Ok(v)
}

/// Trains and evaluates one student per rationale budget, each on the first
/// `b` sample indices of every training instance.
pub fn run_n_rationales_sweep(
    task: &TaskSpec,
    train: &[Instance],
    test: &[Instance],
    corpus: &DistillationCorpus,
    budgets: &[usize],
    cfg: &PipelineConfig<'_>,
) -> Result<SweepResult, EvalError> {
    let available = corpus
        .sampling_step()
        .and_then(|s| s.budget)
        .unwrap_or_else(|| corpus.samples().map(|s| s.sample_index + 1).max().unwrap_or(0));
    if let Some(b) = budgets.iter().find(|&&b| b == 0 || b > available) {
        return Err(EvalError::InvalidSweep(format!("budget {b} outside 1..={available}")));
    }
    let xs = sorted_unique(&budgets.iter().map(|&b| b as f64).collect::<Vec<_>>())?;
    let catalog = TaskCatalog::single(task, train);
    let mut points = Vec::with_capacity(xs.len());
    for x in xs {
        let b = x as usize;
        let restricted = corpus.first_n_samples(b);
        let report = train_and_eval(&restricted, &catalog, task, test, cfg, cfg.trainer, &format!("n_rationales={b}"))?;
        points.push(SweepPoint { x, report });
    }
    Ok(SweepResult {
        axis: SweepAxis::NRationales,
        points,
    })
}

/// Nested instance subsets: one seeded shuffle of the sorted ids, then a
/// prefix of `ceil(f * n)` ids per fraction.
pub fn nested_subsets(ids: &[String], fractions: &[f64], seed: u64) -> Vec<HashSet<String>> {
    let mut order: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    fractions
        .iter()
        .map(|f| {
            let take = ((f * order.len() as f64).ceil() as usize).clamp(1, order.len().max(1));
            order.iter().take(take).cloned().collect()
        })
        .collect()
}

pub fn run_data_fraction_sweep(
    task: &TaskSpec,
    train: &[Instance],
    test: &[Instance],
    corpus: &DistillationCorpus,
    fractions: &[f64],
    cfg: &PipelineConfig<'_>,
) -> Result<SweepResult, EvalError> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(EvalError::InvalidSweep(format!("fraction {f} outside (0, 1]")));
    }
    let xs = sorted_unique(fractions)?;
    let ids: Vec<String> = corpus.entries.keys().cloned().collect();
    let subsets = nested_subsets(&ids, &xs, cfg.seed);
    let catalog = TaskCatalog::single(task, train);
    let mut points = Vec::with_capacity(xs.len());
    for (x, subset) in xs.into_iter().zip(subsets) {
        let sub = if x == 1.0 { corpus.clone() } else { corpus.select_instances(&subset, Some(cfg.seed), x) };
        let report = train_and_eval(&sub, &catalog, task, test, cfg, cfg.trainer, &format!("data_fraction={x}"))?;
        points.push(SweepPoint { x, report });
    }
    Ok(SweepResult {
        axis: SweepAxis::DataFraction,
        points,
    })
}

/// One trainer per model size; sizes are opaque numeric labels.
pub fn run_model_size_sweep(
    task: &TaskSpec,
    train: &[Instance],
    test: &[Instance],
    corpus: &DistillationCorpus,
    sizes: &[(f64, &dyn Trainer)],
    cfg: &PipelineConfig<'_>,
) -> Result<SweepResult, EvalError> {
    let xs = sorted_unique(&sizes.iter().map(|(x, _)| *x).collect::<Vec<_>>())?;
    let catalog = TaskCatalog::single(task, train);
    let mut points = Vec::with_capacity(xs.len());
    for x in xs {
        let trainer = sizes.iter().find(|(s, _)| *s == x).expect("x comes from sizes").1;
        let report = train_and_eval(corpus, &catalog, task, test, cfg, trainer, &format!("model_size={x}"))?;
        points.push(SweepPoint { x, report });
    }
    Ok(SweepResult {
        axis: SweepAxis::ModelSize,
        points,
    })
}

/// Merges corpora for multi-task training. Corpora of different tasks get
/// `{task_id}::{instance_id}` entry keys.
pub fn concat_corpora(corpora: &[DistillationCorpus]) -> Result<DistillationCorpus, EvalError> {
    match corpora {
        [] => return Err(EvalError::Concat("no corpora given".into())),
        [single] => return Ok(single.clone()),
        _ => {}
    }
    let versions: BTreeSet<Option<&str>> = corpora.iter().map(|c| c.template_version()).collect();
    if versions.len() != 1 {
        return Err(EvalError::Concat(format!("incompatible prompt templates {versions:?}")));
    }
    let task_ids: BTreeSet<&str> = corpora.iter().map(|c| c.task_id.as_str()).collect();
    let multi = task_ids.len() > 1;
    let mut entries = BTreeMap::new();
    for c in corpora {
        for (id, samples) in &c.entries {
            let key = if multi { qualify(&c.task_id, id) } else { id.clone() };
            if entries.contains_key(&key) {
                return Err(EvalError::Concat(format!(
                    "instance {id:?} of task {:?} appears in more than one corpus",
                    c.task_id
                )));
            }
            let samples = samples
                .iter()
                .map(|s| crate::builder::CoTSample {
                    instance_id: key.clone(),
                    ..s.clone()
                })
                .collect();
            entries.insert(key, samples);
        }
    }
    let fingerprints: BTreeSet<&str> = corpora.iter().map(|c| c.prompt_set_fingerprint.as_str()).collect();
    let prompt_set_fingerprint = if fingerprints.len() == 1 {
        fingerprints.into_iter().next().unwrap().to_string()
    } else {
        let joined: Vec<&str> = corpora.iter().map(|c| c.prompt_set_fingerprint.as_str()).collect();
        format!(
            "{}:{}",
            versions.into_iter().next().flatten().unwrap_or("v0"),
            sha256_hex(joined.join("\n").as_bytes())
        )
    };
    let sources: Vec<serde_json::Value> = corpora
        .iter()
        .map(|c| {
            json!({
                "task_id": c.task_id,
                "prompt_set_fingerprint": c.prompt_set_fingerprint,
                "provenance": c.provenance,
                "n_samples": c.n_samples(),
            })
        })
        .collect();
    Ok(DistillationCorpus {
        task_id: task_ids.into_iter().collect::<Vec<_>>().join("+"),
        prompt_set_fingerprint,
        entries,
        provenance: vec![ProvenanceStep {
            kind: "concat".into(),
            budget: None,
            seed: None,
            params: json!({ "sources": sources }),
        }],
    })
}

impl From<ClientError> for EvalError {
    fn from(e: ClientError) -> Self {
        EvalError::Client {
            failing: Vec::new(),
            upstream: e.is_upstream(),
            first: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation() {
        assert_eq!(truncate_tokens("a b  c d", 2), "a b");
        assert_eq!(truncate_tokens("  a b", 5), "  a b");
        assert_eq!(truncate_tokens("a b", 0), "");
        assert_eq!(truncate_tokens("one two three", 3), "one two three");
    }

    #[test]
    fn label_only_parsing() {
        let t = TaskSpec::multiple_choice("t", 4).unwrap();
        assert_eq!(parse_label_only(" So the answer is: (c)", &t).unwrap().as_str(), "c");
        assert_eq!(parse_label_only(" (B)", &t).unwrap().as_str(), "b");
        assert_eq!(parse_label_only("So the answer is: (q)", &t), None);
        assert_eq!(parse_label_only("maybe", &t), None);
    }

    #[test]
    fn nested_fraction_subsets() {
        let ids: Vec<String> = (0..50).map(|i| format!("i{i}")).collect();
        let subs = nested_subsets(&ids, &[0.2, 0.4, 0.6, 0.8, 1.0], 3);
        assert_eq!(subs.iter().map(HashSet::len).collect::<Vec<_>>(), [10, 20, 30, 40, 50]);
        for w in subs.windows(2) {
            assert!(w[0].is_subset(&w[1]));
        }
        assert_eq!(nested_subsets(&ids, &[0.2], 3), subs[..1].to_vec());
    }

    #[test]
    fn sweep_points_validation() {
        assert!(sorted_unique(&[]).is_err());
        assert!(sorted_unique(&[1.0, 1.0]).is_err());
        assert_eq!(sorted_unique(&[5.0, 1.0, 30.0]).unwrap(), [1.0, 5.0, 30.0]);
    }
}
