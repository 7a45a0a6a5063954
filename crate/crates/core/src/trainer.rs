//! Interface to the external student trainer.
//!
//! Training runs as a configured command over a training JSONL file; the
//! trained student is then started with a serve command and reached over the
//! completion protocol. Command arguments may use the placeholders
//! `{train}`, `{out}`, `{checkpoint}` and `{port}`.

use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::builder::{training_jsonl, TrainingExample};
use crate::client::{ClientConfig, ClientError, Completion, CompletionClient, CompletionModel, CompletionRequest};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("no training examples")]
    EmptyCorpus,
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("command {command:?} exited with {status}: {stderr}")]
    CommandFailed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("student server on port {port} not reachable after {waited:?}")]
    NotReady { port: u16, waited: Duration },
    #[error("trainer unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Turns training examples into a model serving the completion contract.
pub trait Trainer: Send + Sync {
    fn train(&self, examples: &[TrainingExample], run_tag: &str) -> Result<Box<dyn CompletionModel>, TrainerError>;
}

#[derive(Debug, Clone)]
pub struct CommandTrainer {
    pub train_command: Vec<String>,
    pub serve_command: Vec<String>,
    pub port: u16,
    pub work_dir: PathBuf,
    pub model_id: String,
    pub ready_timeout: Duration,
    pub concurrency: usize,
}

fn substitute(args: &[String], vars: &[(&str, String)]) -> Vec<String> {
    args.iter()
        .map(|a| {
            vars.iter()
                .fold(a.clone(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
        })
        .collect()
}

fn sanitize(tag: &str) -> String {
    tag.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

impl CommandTrainer {
    fn run_dir(&self, tag: &str) -> PathBuf {
        self.work_dir.join(sanitize(tag))
    }

    fn wait_ready(&self, child: &mut Child) -> Result<(), TrainerError> {
        let start = Instant::now();
        while start.elapsed() < self.ready_timeout {
            if TcpStream::connect(("127.0.0.1", self.port)).is_ok() {
                return Ok(());
            }
            if let Ok(Some(status)) = child.try_wait() {
                return Err(TrainerError::CommandFailed {
                    command: self.serve_command.join(" "),
                    status: status.to_string(),
                    stderr: "server exited before becoming ready".into(),
                });
            }
            std::thread::sleep(Duration::from_millis(100));
        }
        Err(TrainerError::NotReady {
            port: self.port,
            waited: self.ready_timeout,
        })
    }
}

fn run_to_completion(argv: &[String], cwd: &Path) -> Result<(), TrainerError> {
    let (program, rest) = argv
        .split_first()
        .ok_or_else(|| TrainerError::Unavailable("empty command".into()))?;
    let out = Command::new(program)
        .args(rest)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .output()
        .map_err(|source| TrainerError::Io {
            context: format!("spawning {program}"),
            source,
        })?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        let tail: String = stderr.lines().rev().take(20).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n");
        return Err(TrainerError::CommandFailed {
            command: argv.join(" "),
            status: out.status.to_string(),
            stderr: tail,
        });
    }
    Ok(())
}

impl Trainer for CommandTrainer {
    fn train(&self, examples: &[TrainingExample], run_tag: &str) -> Result<Box<dyn CompletionModel>, TrainerError> {
        if examples.is_empty() {
            return Err(TrainerError::EmptyCorpus);
        }
        let dir = self.run_dir(run_tag);
        let io = |context: &str| {
            let context = context.to_string();
            move |source| TrainerError::Io { context, source }
        };
        std::fs::create_dir_all(&dir).map_err(io("creating run directory"))?;
        let train_path = dir.join("train.jsonl");
        let out_dir = dir.join("checkpoint");
        std::fs::write(&train_path, training_jsonl(examples)).map_err(io("writing training JSONL"))?;
        let vars = [
            ("train", train_path.display().to_string()),
            ("out", out_dir.display().to_string()),
            ("checkpoint", out_dir.display().to_string()),
            ("port", self.port.to_string()),
        ];
        tracing::info!(run_tag, examples = examples.len(), "training student");
        run_to_completion(&substitute(&self.train_command, &vars), &dir)?;

        let serve = substitute(&self.serve_command, &vars);
        let (program, rest) = serve
            .split_first()
            .ok_or_else(|| TrainerError::Unavailable("empty serve command".into()))?;
        let mut child = Command::new(program)
            .args(rest)
            .current_dir(&dir)
            .stdin(Stdio::null())
            .spawn()
            .map_err(io("spawning serve command"))?;
        if let Err(e) = self.wait_ready(&mut child) {
            let _ = child.kill();
            let _ = child.wait();
            return Err(e);
        }
        let mut cfg = ClientConfig::new(format!("http://127.0.0.1:{}/v1/completions", self.port), self.model_id.clone());
        cfg.concurrency = self.concurrency;
        Ok(Box::new(ServedStudent {
            client: CompletionClient::new(cfg)?,
            child: Mutex::new(child),
        }))
    }
}

/// A trained student behind its HTTP server; the server stops on drop.
pub struct ServedStudent {
    client: CompletionClient,
    child: Mutex<Child>,
}

impl CompletionModel for ServedStudent {
    fn model_id(&self) -> &str {
        self.client.model_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Completion>, ClientError> {
        self.client.complete(request)
    }
    fn max_in_flight(&self) -> usize {
        self.client.max_in_flight()
    }
}

impl Drop for ServedStudent {
    fn drop(&mut self) {
        let child = self.child.get_mut().unwrap_or_else(|p| p.into_inner());
        let _ = child.kill();
        let _ = child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_are_substituted() {
        let args: Vec<String> = ["python", "train.py", "--data={train}", "{out}", "--port", "{port}"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = substitute(&args, &[("train", "/t.jsonl".into()), ("out", "/ck".into()), ("port", "9".into())]);
        assert_eq!(out, ["python", "train.py", "--data=/t.jsonl", "/ck", "--port", "9"]);
        assert_eq!(sanitize("n_rationales=5/x"), "n_rationales_5_x");
    }

    #[test]
    fn empty_corpus_is_rejected_before_running() {
        let t = CommandTrainer {
            train_command: vec!["false".into()],
            serve_command: vec!["false".into()],
            port: 1,
            work_dir: std::env::temp_dir(),
            model_id: "s".into(),
            ready_timeout: Duration::from_millis(10),
            concurrency: 1,
        };
        assert!(matches!(t.train(&[], "x"), Err(TrainerError::EmptyCorpus)));
    }
}
