//! Canonical corpus files and corpus statistics.
//!
//! A corpus file is UTF-8 JSONL. The first line is a header carrying the
//! schema version, provenance, the ordered instance ids and a SHA-256 of the
//! body; every following line is one sample:
//!
//! ```text
//! {"instance_id","sample_index","raw_text","rationale","predicted","parse_status","mean_logprob","teacher":{..}}
//! ```
//!
//! Log-probabilities are stored with 6 significant digits.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::builder::{CoTSample, DistillationCorpus, ProvenanceStep, TaskCatalog, TeacherParams};
use crate::filters::{open_endedness_score, quintile_bins};
use crate::hashing::sha256_hex;
use crate::parser::{ParseStatus, ParsedCoT};
use crate::task::OptionKey;

pub const SCHEMA_VERSION: u32 = 1;

/// Rounds to 6 significant digits; idempotent.
pub fn quantize_logprob(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported corpus schema version {found} (this build reads {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("corpus body checksum mismatch (file truncated or edited)")]
    Checksum,
    #[error("corpus line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("empty corpus file")]
    Empty,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    task_id: String,
    prompt_set_fingerprint: String,
    provenance: Vec<ProvenanceStep>,
    instance_ids: Vec<String>,
    n_samples: usize,
    body_sha256: String,
}

#[derive(Debug, Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

/// One line of the samples JSONL.
#[derive(Debug, Serialize, Deserialize)]
pub struct SampleRecord {
    pub instance_id: String,
    pub sample_index: usize,
    pub raw_text: String,
    pub rationale: String,
    pub predicted: Option<OptionKey>,
    pub parse_status: ParseStatus,
    pub mean_logprob: Option<f64>,
    pub teacher: TeacherParams,
}

impl From<&CoTSample> for SampleRecord {
    fn from(s: &CoTSample) -> Self {
        SampleRecord {
            instance_id: s.instance_id.clone(),
            sample_index: s.sample_index,
            raw_text: s.raw_text.clone(),
            rationale: s.parsed.rationale_text.clone(),
            predicted: s.parsed.predicted_label.clone(),
            parse_status: s.parsed.parse_status,
            mean_logprob: s.mean_logprob.map(quantize_logprob),
            teacher: s.teacher.clone(),
        }
    }
}

impl SampleRecord {
    fn into_sample(self, line: usize) -> Result<CoTSample, CorpusIoError> {
        if (self.parse_status == ParseStatus::Ok) != self.predicted.is_some() {
            return Err(CorpusIoError::Malformed {
                line,
                message: "parse_status and predicted disagree".into(),
            });
        }
        Ok(CoTSample {
            instance_id: self.instance_id,
            sample_index: self.sample_index,
            raw_text: self.raw_text,
            parsed: ParsedCoT {
                rationale_text: self.rationale,
                predicted_label: self.predicted,
                parse_status: self.parse_status,
            },
            mean_logprob: self.mean_logprob.map(quantize_logprob),
            teacher: self.teacher,
        })
    }
}

pub fn encode_corpus(corpus: &DistillationCorpus) -> String {
    let mut body = String::new();
    for sample in corpus.samples() {
        body.push_str(&serde_json::to_string(&SampleRecord::from(sample)).expect("sample serializes"));
        body.push('\n');
    }
    let header = Header {
        schema_version: SCHEMA_VERSION,
        task_id: corpus.task_id.clone(),
        prompt_set_fingerprint: corpus.prompt_set_fingerprint.clone(),
        provenance: corpus.provenance.clone(),
        instance_ids: corpus.entries.keys().cloned().collect(),
        n_samples: corpus.n_samples(),
        body_sha256: sha256_hex(body.as_bytes()),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    out.push_str(&body);
    out
}

pub fn decode_corpus(text: &str) -> Result<DistillationCorpus, CorpusIoError> {
    let (head, body) = match text.split_once('\n') {
        Some(parts) => parts,
        None if text.trim().is_empty() => return Err(CorpusIoError::Empty),
        None => (text, ""),
    };
    let probe: VersionProbe = serde_json::from_str(head).map_err(|e| CorpusIoError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(CorpusIoError::SchemaVersion {
            found: probe.schema_version,
        });
    }
    let header: Header = serde_json::from_str(head).map_err(|e| CorpusIoError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if sha256_hex(body.as_bytes()) != header.body_sha256 {
        return Err(CorpusIoError::Checksum);
    }
    let mut entries: BTreeMap<String, Vec<CoTSample>> =
        header.instance_ids.iter().map(|id| (id.clone(), Vec::new())).collect();
    if entries.len() != header.instance_ids.len() {
        return Err(CorpusIoError::Malformed {
            line: 1,
            message: "duplicate instance ids in header".into(),
        });
    }
    let mut seen = HashSet::new();
    for (idx, line) in body.lines().enumerate() {
        let line_no = idx + 2;
        let record: SampleRecord = serde_json::from_str(line).map_err(|e| CorpusIoError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let sample = record.into_sample(line_no)?;
        if !seen.insert((sample.instance_id.clone(), sample.sample_index)) {
            return Err(CorpusIoError::Malformed {
                line: line_no,
                message: format!("duplicate sample ({}, {})", sample.instance_id, sample.sample_index),
            });
        }
        entries
            .get_mut(&sample.instance_id)
            .ok_or_else(|| CorpusIoError::Malformed {
                line: line_no,
                message: format!("instance {:?} missing from header", sample.instance_id),
            })?
            .push(sample);
    }
    let n: usize = entries.values().map(Vec::len).sum();
    if n != header.n_samples {
        return Err(CorpusIoError::Malformed {
            line: 1,
            message: format!("header declares {} samples, body has {n}", header.n_samples),
        });
    }
    Ok(DistillationCorpus {
        task_id: header.task_id,
        prompt_set_fingerprint: header.prompt_set_fingerprint,
        entries,
        provenance: header.provenance,
    })
}

/// Writes `contents` atomically while holding an exclusive lock on `<path>.lock`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CorpusIoError> {
    let io = |source| CorpusIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io)?;
    let mut lock_name = path.as_os_str().to_owned();
    lock_name.push(".lock");
    let lock = fs::OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_name)
        .map_err(io)?;
    lock.lock().map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    lock.unlock().map_err(io)?;
    Ok(())
}

pub fn write_corpus(corpus: &DistillationCorpus, path: &Path) -> Result<(), CorpusIoError> {
    write_atomic(path, encode_corpus(corpus).as_bytes())
}

pub fn read_corpus(path: &Path) -> Result<DistillationCorpus, CorpusIoError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_corpus(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_instances: usize,
    pub n_samples: usize,
    /// (min, mean, max)
    pub samples_per_instance: (usize, f64, usize),
    pub parse_ok_rate: f64,
    /// Fraction of samples whose label matches gold; only when every instance is labeled.
    pub correct_rate: Option<f64>,
    /// Highest open-endedness score in each of the four lower quintile bins.
    pub unique_bigram_quintile_edges: [usize; 4],
}

pub fn stats(corpus: &DistillationCorpus, catalog: Option<&TaskCatalog>) -> CorpusStats {
    let n_instances = corpus.n_instances();
    let n_samples = corpus.n_samples();
    let counts: Vec<usize> = corpus.entries.values().map(Vec::len).collect();
    let samples_per_instance = if counts.is_empty() {
        (0, 0.0, 0)
    } else {
        (
            *counts.iter().min().unwrap(),
            n_samples as f64 / n_instances as f64,
            *counts.iter().max().unwrap(),
        )
    };
    let rate = |k: usize| if n_samples == 0 { 0.0 } else { k as f64 / n_samples as f64 };
    let parse_ok_rate = rate(corpus.samples().filter(|s| s.parsed.is_ok()).count());

    let correct_rate = catalog.and_then(|cat| {
        if n_samples == 0 {
            return None;
        }
        let mut correct = 0;
        for (id, samples) in &corpus.entries {
            let gold = cat.resolve(id)?.1.gold_label.as_ref()?;
            correct += samples
                .iter()
                .filter(|s| s.parsed.is_ok() && s.parsed.predicted_label.as_ref() == Some(gold))
                .count();
        }
        Some(rate(correct))
    });

    let scores: Vec<(String, usize)> = corpus
        .entries
        .iter()
        .map(|(id, s)| (id.clone(), open_endedness_score(s)))
        .collect();
    let mut edges = [0usize; 4];
    let mut last = 0;
    let binned = quintile_bins(&scores);
    for (bin, edge) in edges.iter_mut().enumerate() {
        if let Some(max) = binned.iter().filter(|(_, _, b)| *b == bin).map(|(_, s, _)| *s).max() {
            last = max;
        }
        *edge = last;
    }

    CorpusStats {
        n_instances,
        n_samples,
        samples_per_instance,
        parse_ok_rate,
        correct_rate,
        unique_bigram_quintile_edges: edges,
    }
}
