//! Exit codes and the machine-readable error record.

use serde_json::json;

use scotd::builder::BuildError;
use scotd::client::ClientError;
use scotd::corpus_io::CorpusIoError;
use scotd::embedder::EmbedError;
use scotd::eval::EvalError;
use scotd::filters::FilterError;
use scotd::task::TaskError;
use scotd::trainer::TrainerError;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration; lists every problem found.
    Config(Vec<String>),
    /// A teacher, student, embedder or trainer service failed.
    Upstream(String),
    /// Input data is malformed or inconsistent.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Upstream(_) => 3,
            CliError::Data(_) => 4,
        }
    }

    pub fn record(&self) -> serde_json::Value {
        let (kind, messages) = match self {
            CliError::Config(m) => ("config", m.clone()),
            CliError::Upstream(m) => ("upstream", vec![m.clone()]),
            CliError::Data(m) => ("data", vec![m.clone()]),
        };
        json!({"error": {"kind": kind, "exit_code": self.exit_code(), "messages": messages}})
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorpusIoError> for CliError {
    fn from(e: CorpusIoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        if e.is_upstream() {
            CliError::Upstream(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match &e {
            BuildError::Client { source, .. } if source.is_upstream() => CliError::Upstream(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match &e {
            FilterError::Embedding {
                source: EmbedError::Service(_) | EmbedError::Malformed(_),
                ..
            } => CliError::Upstream(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Filter(f) => f.into(),
            EvalError::Prompt(b) => b.into(),
            EvalError::InvalidSweep(m) => CliError::config(m),
            e if e.is_upstream() => CliError::Upstream(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::EmptyCorpus => CliError::Data(e.to_string()),
            e => CliError::Upstream(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
