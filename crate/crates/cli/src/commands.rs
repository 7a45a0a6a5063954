//! Subcommand bodies. Each one merges its flags into the config, validates
//! everything up front, and either prints the plan (`--dry-run`) or runs.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use scotd::builder::{sample_corpus, to_training_examples, training_jsonl, SamplingParams, TaskCatalog};
use scotd::cache::ContentStore;
use scotd::client::{ClientConfig, CompletionClient};
use scotd::corpus_io::{read_corpus, stats, write_atomic, write_corpus};
use scotd::embedder::{Embedder, HashedBigramEmbedder, RemoteEmbedder};
use scotd::eval::{
    evaluate, evaluate_contrast_pair, run_data_fraction_sweep, run_model_size_sweep, run_n_rationales_sweep, Decode,
    DecodeParams, PipelineConfig, SweepAxis,
};
use scotd::filters::{apply_chain, FilterKind, FilterSpec, DEFAULT_DOWNSAMPLE_BUDGET};
use scotd::http::{HttpService, ReqwestTransport, RetryPolicy};
use scotd::task::{load_instances, Instance, PromptSet, TaskSpec};
use scotd::trainer::{CommandTrainer, Trainer};
use scotd::{DistillationCorpus, GenerationParams};

use crate::config::{Config, Endpoint, Problems, TrainerConfig};
use crate::error::CliError;
use crate::{BuildArgs, Command, EvalArgs, FilterArgs, SampleArgs, StatsArgs, SweepArgs};

pub const HASHED_EMBEDDER_NAME: &str = "hashed_bigram";

/// What a command reads and writes, printed by `--dry-run`.
struct Plan {
    command: &'static str,
    fingerprint: String,
    inputs: Vec<(&'static str, PathBuf)>,
    outputs: Vec<PathBuf>,
    details: Value,
}

impl Plan {
    fn new(cfg: &Config, command: &'static str, inputs: Vec<(&'static str, PathBuf)>, outputs: Vec<PathBuf>) -> Self {
        let refs: Vec<(&str, &Path)> = inputs.iter().map(|(n, p)| (*n, p.as_path())).collect();
        Plan {
            command,
            fingerprint: cfg.fingerprint(command, &refs),
            inputs,
            outputs,
            details: json!({}),
        }
    }

    fn print(&self) {
        let inputs: serde_json::Map<String, Value> =
            self.inputs.iter().map(|(n, p)| (n.to_string(), json!(p))).collect();
        let plan = json!({
            "command": self.command,
            "config_fingerprint": self.fingerprint,
            "inputs": inputs,
            "outputs": self.outputs,
            "details": self.details,
        });
        println!("{}", serde_json::to_string_pretty(&plan).expect("plan serializes"));
    }
}

pub fn run(cmd: &Command, cfg: Config, dry_run: bool) -> Result<(), CliError> {
    match cmd {
        Command::Sample(a) => sample(a, cfg, dry_run),
        Command::Filter(a) => filter(a, cfg, dry_run),
        Command::Build(a) => build(a, cfg, dry_run),
        Command::Eval(a) => eval(a, cfg, dry_run),
        Command::Sweep(a) => sweep(a, cfg, dry_run),
        Command::Stats(a) => stats_cmd(a, cfg, dry_run),
    }
}

fn set<T: Clone>(slot: &mut T, flag: &Option<T>) {
    if let Some(v) = flag {
        *slot = v.clone();
    }
}

fn set_opt<T: Clone>(slot: &mut Option<T>, flag: &Option<T>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

fn out_path(cfg: &Config, flag: &Option<PathBuf>, default: &str) -> PathBuf {
    flag.clone().unwrap_or_else(|| cfg.output_dir().join(default))
}

fn cache_dir(cfg: &Config) -> PathBuf {
    cfg.cache_dir.clone().unwrap_or_else(|| cfg.output_dir().join("cache"))
}

fn task_inputs(cfg: &Config, p: &mut Problems) -> Vec<(&'static str, PathBuf)> {
    let manifest = cfg.task.manifest();
    let instances = cfg.task.instances();
    p.file("task.manifest", manifest.as_deref());
    p.file("task.instances", instances.as_deref());
    manifest
        .map(|m| ("task_manifest", m))
        .into_iter()
        .chain(instances.map(|i| ("task_instances", i)))
        .collect()
}

fn load_task(cfg: &Config) -> Result<(TaskSpec, Vec<Instance>), CliError> {
    let manifest = cfg.task.manifest().ok_or_else(|| CliError::config("task.manifest: not set"))?;
    let instances = cfg.task.instances().ok_or_else(|| CliError::config("task.instances: not set"))?;
    Ok(scotd::task::load_task(&manifest, &instances)?)
}

fn load_prompt_set(cfg: &Config, task: &TaskSpec) -> Result<PromptSet, CliError> {
    let path = cfg.task.prompt_set.as_ref().ok_or_else(|| CliError::config("task.prompt_set: not set"))?;
    Ok(PromptSet::load(task, path)?)
}

fn api_key(e: &Endpoint) -> Option<String> {
    std::env::var(&e.api_key_env).ok().filter(|k| !k.is_empty())
}

fn retry(e: &Endpoint) -> RetryPolicy {
    RetryPolicy {
        max_retries: e.max_retries,
        ..RetryPolicy::default()
    }
}

fn client(e: &Endpoint, store: Option<Arc<ContentStore>>) -> Result<CompletionClient, CliError> {
    let mut cc = ClientConfig::new(
        e.endpoint.clone().unwrap_or_default(),
        e.model.clone().unwrap_or_default(),
    );
    cc.api_key = api_key(e);
    cc.concurrency = e.concurrency;
    cc.retry = retry(e);
    cc.timeout = Duration::from_secs(e.timeout_secs);
    let transport = ReqwestTransport::new(cc.timeout).map_err(|e| CliError::Upstream(e.to_string()))?;
    Ok(CompletionClient::with_store(cc, Arc::new(transport), store))
}

fn open_store(cfg: &Config) -> Result<Arc<ContentStore>, CliError> {
    let dir = cache_dir(cfg);
    ContentStore::open(&dir)
        .map(Arc::new)
        .map_err(|e| CliError::Data(format!("cache {}: {e}", dir.display())))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => {
            std::fs::create_dir_all(d).map_err(|e| CliError::Data(format!("{}: {e}", d.display())))
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    create_parent(path)?;
    Ok(write_atomic(path, contents.as_bytes())?)
}

/// Records the fingerprint in the newest provenance step.
fn stamp(corpus: &mut DistillationCorpus, fingerprint: &str) {
    if let Some(step) = corpus.provenance.last_mut() {
        match &mut step.params {
            Value::Object(m) => {
                m.insert("config_fingerprint".into(), json!(fingerprint));
            }
            Value::Null => step.params = json!({ "config_fingerprint": fingerprint }),
            other => *other = json!({ "value": other.clone(), "config_fingerprint": fingerprint }),
        }
    }
}

fn summary(v: Value) {
    println!("{}", serde_json::to_string(&v).expect("summary serializes"));
}

fn sample(a: &SampleArgs, mut cfg: Config, dry_run: bool) -> Result<(), CliError> {
    set_opt(&mut cfg.teacher.endpoint, &a.teacher_endpoint);
    set_opt(&mut cfg.teacher.model, &a.teacher_model);
    set(&mut cfg.sampling.n_samples, &a.n);
    set(&mut cfg.sampling.temperature, &a.temperature);
    set(&mut cfg.sampling.max_tokens, &a.max_tokens);
    if a.greedy {
        cfg.sampling.n_samples = 1;
        cfg.sampling.temperature = 0.0;
    }
    let output = out_path(&cfg, &a.output, "corpus.jsonl");

    let mut p = Problems::default();
    let mut inputs = task_inputs(&cfg, &mut p);
    p.file("task.prompt_set", cfg.task.prompt_set.as_deref());
    inputs.extend(cfg.task.prompt_set.clone().map(|x| ("prompt_set", x)));
    p.endpoint("teacher", &cfg.teacher);
    p.samples("sampling.n_samples", cfg.sampling.n_samples);
    p.temperature("sampling.temperature", cfg.sampling.temperature);
    p.max_tokens("sampling.max_tokens", cfg.sampling.max_tokens);
    p.into_result().map_err(CliError::Config)?;

    let (task, instances) = load_task(&cfg)?;
    let prompts = load_prompt_set(&cfg, &task)?;
    let mut plan = Plan::new(&cfg, "sample", inputs, vec![output.clone()]);
    if dry_run {
        plan.details = json!({
            "n_instances": instances.len(),
            "n_samples": cfg.sampling.n_samples,
            "temperature": cfg.sampling.temperature,
            "requests": instances.len(),
            "cache_dir": cache_dir(&cfg),
        });
        plan.print();
        return Ok(());
    }

    let teacher = client(&cfg.teacher, Some(open_store(&cfg)?))?;
    let params = SamplingParams {
        model_id: cfg.teacher.model.clone().unwrap_or_default(),
        n_samples: cfg.sampling.n_samples,
        temperature: cfg.sampling.temperature,
        max_tokens: cfg.sampling.max_tokens,
        stop_sequences: cfg.sampling.stop.clone(),
    };
    let mut corpus = sample_corpus(&task, &instances, &prompts, &params, &teacher)?;
    stamp(&mut corpus, &plan.fingerprint);
    create_parent(&output)?;
    write_corpus(&corpus, &output)?;
    summary(json!({
        "output": output,
        "n_instances": corpus.n_instances(),
        "n_samples": corpus.n_samples(),
        "network_calls": teacher.network_calls(),
        "config_fingerprint": plan.fingerprint,
    }));
    Ok(())
}

fn embedder(cfg: &Config, store: Option<Arc<ContentStore>>) -> Result<(Box<dyn Embedder>, String), CliError> {
    match &cfg.embedder {
        Some(e) => {
            let key = std::env::var(&e.api_key_env).ok().filter(|k| !k.is_empty());
            let transport =
                ReqwestTransport::new(Duration::from_secs(120)).map_err(|e| CliError::Upstream(e.to_string()))?;
            let service = HttpService::new(e.endpoint.clone(), key, RetryPolicy::default(), Arc::new(transport));
            Ok((Box::new(RemoteEmbedder::new(e.model.clone(), service, store)), e.model.clone()))
        }
        None => Ok((Box::new(HashedBigramEmbedder), HASHED_EMBEDDER_NAME.into())),
    }
}

/// Task catalog when the task is configured; filters that need gold labels
/// report their own error otherwise.
fn optional_catalog(cfg: &Config) -> Result<TaskCatalog, CliError> {
    if cfg.task.manifest().is_some() && cfg.task.instances().is_some() {
        let (task, instances) = load_task(cfg)?;
        Ok(TaskCatalog::single(&task, &instances))
    } else {
        Ok(TaskCatalog::default())
    }
}

fn filter(a: &FilterArgs, mut cfg: Config, dry_run: bool) -> Result<(), CliError> {
    if let Some(kind) = a.kind {
        let budget = a.budget.unwrap_or(DEFAULT_DOWNSAMPLE_BUDGET);
        cfg.filters = vec![crate::config::FilterEntry {
            kind,
            budget: Some(budget),
            seed: None,
        }];
    } else if a.budget.is_some() {
        return Err(CliError::config("--budget needs --kind"));
    }
    let input = out_path(&cfg, &a.input, "corpus.jsonl");
    let output = out_path(&cfg, &a.output, "filtered.jsonl");
    let specs: Vec<FilterSpec> = cfg.filter_specs();

    let mut p = Problems::default();
    p.file("input corpus", Some(&input));
    p.check(!specs.is_empty(), || "filters: none configured and no --kind given".into());
    p.filters(&specs);
    let mut inputs = vec![("corpus", input.clone())];
    if specs.iter().any(|s| s.kind == FilterKind::CorrectLabel) {
        inputs.extend(task_inputs(&cfg, &mut p));
    }
    p.into_result().map_err(CliError::Config)?;

    let corpus = read_corpus(&input)?;
    let catalog = optional_catalog(&cfg)?;
    let mut plan = Plan::new(&cfg, "filter", inputs, vec![output.clone()]);
    if dry_run {
        plan.details = json!({
            "filters": specs,
            "embedder": cfg.embedder.as_ref().map_or(HASHED_EMBEDDER_NAME.to_string(), |e| e.model.clone()),
            "n_instances": corpus.n_instances(),
            "n_samples": corpus.n_samples(),
        });
        plan.print();
        return Ok(());
    }

    let store = if cfg.embedder.is_some() { Some(open_store(&cfg)?) } else { None };
    let (emb, name) = embedder(&cfg, store)?;
    let mut filtered = apply_chain(&corpus, &specs, &catalog, Some((emb.as_ref(), name.as_str())))?;
    stamp(&mut filtered, &plan.fingerprint);
    create_parent(&output)?;
    write_corpus(&filtered, &output)?;
    summary(json!({
        "output": output,
        "n_instances": filtered.n_instances(),
        "n_samples": filtered.n_samples(),
        "config_fingerprint": plan.fingerprint,
    }));
    Ok(())
}

fn build(a: &BuildArgs, mut cfg: Config, dry_run: bool) -> Result<(), CliError> {
    set(&mut cfg.build.mode, &a.mode);
    set(&mut cfg.build.setting, &a.setting);
    let input = out_path(&cfg, &a.input, "filtered.jsonl");
    let output = out_path(&cfg, &a.output, "train.jsonl");
    let meta = output.with_extension("meta.json");

    let mut p = Problems::default();
    p.file("input corpus", Some(&input));
    let mut inputs = vec![("corpus", input.clone())];
    inputs.extend(task_inputs(&cfg, &mut p));
    p.into_result().map_err(CliError::Config)?;

    let corpus = read_corpus(&input)?;
    let (task, instances) = load_task(&cfg)?;
    let catalog = TaskCatalog::single(&task, &instances);
    let examples = to_training_examples(&corpus, &catalog, cfg.build.mode, cfg.build.setting)?;
    let mut plan = Plan::new(&cfg, "build", inputs, vec![output.clone(), meta.clone()]);
    if dry_run {
        plan.details = json!({
            "mode": cfg.build.mode,
            "setting": cfg.build.setting,
            "n_examples": examples.len(),
        });
        plan.print();
        return Ok(());
    }

    if examples.is_empty() {
        return Err(CliError::Data(format!("{}: no training examples", input.display())));
    }
    write_file(&output, &training_jsonl(&examples))?;
    let record = json!({
        "config_fingerprint": plan.fingerprint,
        "mode": cfg.build.mode,
        "setting": cfg.build.setting,
        "n_examples": examples.len(),
        "source_provenance": corpus.provenance,
    });
    write_file(&meta, &format!("{}\n", serde_json::to_string_pretty(&record).expect("meta serializes")))?;
    summary(json!({ "output": output, "n_examples": examples.len(), "config_fingerprint": plan.fingerprint }));
    Ok(())
}

fn decode_params(cfg: &Config, prompts: Option<PromptSet>) -> DecodeParams {
    DecodeParams {
        n: cfg.eval.n,
        temperature: cfg.eval.temperature,
        generation: GenerationParams {
            max_tokens: cfg.eval.max_tokens,
            stop_sequences: cfg.sampling.stop.clone(),
        },
        prompt_set: prompts,
    }
}

fn check_decode(cfg: &Config, p: &mut Problems) {
    if cfg.eval.decode == Decode::SelfConsistency {
        p.samples("eval.n", cfg.eval.n);
        p.temperature("eval.temperature", cfg.eval.temperature);
    }
    p.max_tokens("eval.max_tokens", cfg.eval.max_tokens);
    if cfg.eval.decode == Decode::NoCot {
        p.file("task.prompt_set", cfg.task.prompt_set.as_deref());
    }
}

fn eval_prompts(cfg: &Config, task: &TaskSpec) -> Result<Option<PromptSet>, CliError> {
    if cfg.eval.decode == Decode::NoCot {
        load_prompt_set(cfg, task).map(Some)
    } else {
        Ok(None)
    }
}

fn eval(a: &EvalArgs, mut cfg: Config, dry_run: bool) -> Result<(), CliError> {
    set(&mut cfg.eval.decode, &a.decode);
    set(&mut cfg.eval.n, &a.n);
    set(&mut cfg.eval.temperature, &a.temperature);
    set(&mut cfg.eval.max_tokens, &a.max_tokens);
    set_opt(&mut cfg.task.test_instances, &a.test);
    set_opt(&mut cfg.eval.contrast_instances, &a.contrast);
    set_opt(&mut cfg.student.endpoint, &a.student_endpoint);
    set_opt(&mut cfg.student.model, &a.student_model);
    let output = out_path(&cfg, &a.output, "report.json");

    let mut p = Problems::default();
    let mut inputs = task_inputs(&cfg, &mut p);
    p.file("task.test_instances", cfg.task.test_instances.as_deref());
    inputs.extend(cfg.task.test_instances.clone().map(|x| ("test_instances", x)));
    if let Some(c) = &cfg.eval.contrast_instances {
        p.file("eval.contrast_instances", Some(c));
        inputs.push(("contrast_instances", c.clone()));
    }
    p.endpoint("student", &cfg.student);
    check_decode(&cfg, &mut p);
    if cfg.eval.decode == Decode::NoCot {
        inputs.extend(cfg.task.prompt_set.clone().map(|x| ("prompt_set", x)));
    }
    p.into_result().map_err(CliError::Config)?;

    let (task, _) = load_task(&cfg)?;
    let test_path = cfg.task.test_instances.clone().expect("validated");
    let test = load_instances(&task, &test_path)?;
    let contrast = match &cfg.eval.contrast_instances {
        Some(c) => Some(load_instances(&task, c)?),
        None => None,
    };
    let params = decode_params(&cfg, eval_prompts(&cfg, &task)?);
    let mut plan = Plan::new(&cfg, "eval", inputs, vec![output.clone()]);
    if dry_run {
        plan.details = json!({
            "decode": cfg.eval.decode,
            "n_test": test.len(),
            "n_contrast": contrast.as_ref().map(Vec::len),
        });
        plan.print();
        return Ok(());
    }

    let student = client(&cfg.student, Some(open_store(&cfg)?))?;
    let record = match contrast {
        None => {
            let mut report = evaluate(&task, &test, &student, cfg.eval.decode, &params)?;
            report.config_fingerprint = plan.fingerprint.clone();
            summary(json!({ "output": output, "accuracy": report.accuracy, "n_instances": report.n_instances }));
            report.to_json()
        }
        Some(contrast) => {
            let mut r =
                evaluate_contrast_pair(&task, &test, &contrast, &student, cfg.eval.decode, &params, cfg.eval.token_budget)?;
            r.original.config_fingerprint = plan.fingerprint.clone();
            r.contrast.config_fingerprint = plan.fingerprint.clone();
            summary(json!({
                "output": output,
                "original": r.original.accuracy,
                "contrast": r.contrast.accuracy,
                "gap": r.gap,
            }));
            format!("{}\n", serde_json::to_string_pretty(&r).expect("report serializes"))
        }
    };
    write_file(&output, &record)
}

fn command_trainer(t: &TrainerConfig, cfg: &Config, label: &str) -> CommandTrainer {
    CommandTrainer {
        train_command: t.train_command.clone(),
        serve_command: t.serve_command.clone(),
        port: t.port,
        work_dir: t.work_dir.clone().unwrap_or_else(|| cfg.output_dir().join("runs").join(label)),
        model_id: cfg.student.model.clone().unwrap_or_else(|| "student".into()),
        ready_timeout: Duration::from_secs(t.ready_timeout_secs),
        concurrency: cfg.student.concurrency,
    }
}

fn sweep(a: &SweepArgs, mut cfg: Config, dry_run: bool) -> Result<(), CliError> {
    set(&mut cfg.sweep.axis, &a.axis);
    set(&mut cfg.sweep.points, &a.points);
    set_opt(&mut cfg.task.test_instances, &a.test);
    let input = out_path(&cfg, &a.input, "corpus.jsonl");
    let output = out_path(&cfg, &a.output, "sweep.csv");
    let json_out = output.with_extension("json");
    let specs = cfg.filter_specs();
    let axis = cfg.sweep.axis;

    let mut p = Problems::default();
    p.file("input corpus", Some(&input));
    let mut inputs = vec![("corpus", input.clone())];
    inputs.extend(task_inputs(&cfg, &mut p));
    p.file("task.test_instances", cfg.task.test_instances.as_deref());
    inputs.extend(cfg.task.test_instances.clone().map(|x| ("test_instances", x)));
    p.filters(&specs);
    check_decode(&cfg, &mut p);
    if cfg.eval.decode == Decode::NoCot {
        inputs.extend(cfg.task.prompt_set.clone().map(|x| ("prompt_set", x)));
    }
    match axis {
        SweepAxis::ModelSize => {
            p.check(!cfg.sweep.models.is_empty(), || "sweep.models: empty".into());
            for (i, m) in cfg.sweep.models.iter().enumerate() {
                p.trainer(&format!("sweep.models[{i}]"), Some(m));
                p.check(m.size.is_some(), || format!("sweep.models[{i}].size: not set"));
            }
        }
        SweepAxis::NRationales => {
            p.trainer("trainer", cfg.trainer.as_ref());
            for x in &cfg.sweep.points {
                p.check(x.fract() == 0.0 && *x >= 1.0, || format!("sweep.points: {x} is not a positive integer"));
            }
        }
        SweepAxis::DataFraction => p.trainer("trainer", cfg.trainer.as_ref()),
    }
    p.into_result().map_err(CliError::Config)?;

    let corpus = read_corpus(&input)?;
    let (task, train) = load_task(&cfg)?;
    let test = load_instances(&task, cfg.task.test_instances.as_ref().expect("validated"))?;
    let params = decode_params(&cfg, eval_prompts(&cfg, &task)?);
    let mut plan = Plan::new(&cfg, "sweep", inputs, vec![output.clone(), json_out.clone()]);
    if dry_run {
        let points: Vec<f64> = match axis {
            SweepAxis::ModelSize => cfg.sweep.models.iter().filter_map(|m| m.size).collect(),
            _ => cfg.sweep.points.clone(),
        };
        plan.details = json!({ "axis": axis, "points": points, "filters": specs, "n_test": test.len() });
        plan.print();
        return Ok(());
    }

    let store = if cfg.embedder.is_some() { Some(open_store(&cfg)?) } else { None };
    let (emb, name) = embedder(&cfg, store)?;
    let default_trainer = cfg.trainer.as_ref().map(|t| command_trainer(t, &cfg, "default"));
    let sized: Vec<(f64, CommandTrainer)> = cfg
        .sweep
        .models
        .iter()
        .map(|m| {
            let size = m.size.expect("validated");
            (size, command_trainer(m, &cfg, &format!("size_{size}")))
        })
        .collect();
    let fallback;
    let trainer: &dyn Trainer = match &default_trainer {
        Some(t) => t,
        None => {
            fallback = sized.first().map(|(_, t)| t.clone()).expect("validated");
            &fallback
        }
    };
    let pc = PipelineConfig {
        filters: specs,
        embedder: Some((emb.as_ref(), name.as_str())),
        mode: cfg.build.mode,
        setting: cfg.build.setting,
        trainer,
        decode: cfg.eval.decode,
        decode_params: params,
        seed: cfg.seed,
    };
    let mut result = match axis {
        SweepAxis::NRationales => {
            let budgets: Vec<usize> = cfg.sweep.points.iter().map(|x| *x as usize).collect();
            run_n_rationales_sweep(&task, &train, &test, &corpus, &budgets, &pc)?
        }
        SweepAxis::DataFraction => run_data_fraction_sweep(&task, &train, &test, &corpus, &cfg.sweep.points, &pc)?,
        SweepAxis::ModelSize => {
            let sizes: Vec<(f64, &dyn Trainer)> = sized.iter().map(|(s, t)| (*s, t as &dyn Trainer)).collect();
            run_model_size_sweep(&task, &train, &test, &corpus, &sizes, &pc)?
        }
    };
    for point in &mut result.points {
        point.report.config_fingerprint = plan.fingerprint.clone();
    }
    write_file(&output, &result.to_csv())?;
    let record = json!({ "config_fingerprint": plan.fingerprint, "result": result });
    write_file(&json_out, &format!("{}\n", serde_json::to_string_pretty(&record).expect("sweep serializes")))?;
    summary(json!({ "output": output, "points": result.points.len() }));
    Ok(())
}

fn stats_cmd(a: &StatsArgs, cfg: Config, dry_run: bool) -> Result<(), CliError> {
    let input = out_path(&cfg, &a.input, "corpus.jsonl");
    let mut p = Problems::default();
    p.file("input corpus", Some(&input));
    p.into_result().map_err(CliError::Config)?;

    let corpus = read_corpus(&input)?;
    let catalog = optional_catalog(&cfg)?;
    let plan = Plan::new(&cfg, "stats", vec![("corpus", input)], a.output.iter().cloned().collect());
    if dry_run {
        plan.print();
        return Ok(());
    }
    let has_task = cfg.task.manifest().is_some();
    let s = stats(&corpus, has_task.then_some(&catalog));
    let text = format!("{}\n", serde_json::to_string_pretty(&s).expect("stats serialize"));
    print!("{text}");
    if let Some(out) = &a.output {
        write_file(out, &text)?;
    }
    Ok(())
}
