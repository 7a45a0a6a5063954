//! Greedy decoding and self-consistency majority voting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::builder::{zero_shot_prompt, BuildError, CoTSample, TeacherParams};
use crate::client::{mean_token_logprob, ClientError, CompletionModel, CompletionRequest, DEFAULT_MAX_TOKENS, DEFAULT_STOP};
use crate::corpus_io::quantize_logprob;
use crate::parser::{parse_cot, ParsedCoT};
use crate::task::{Instance, OptionKey, TaskSpec};

pub const DEFAULT_SC_SAMPLES: usize = 30;
pub const DEFAULT_SC_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub winner: Option<OptionKey>,
    pub tally: BTreeMap<OptionKey, usize>,
    pub valid_votes: usize,
    pub total_votes: usize,
    pub tie_broken: bool,
}

/// Counts parsed labels and picks the most frequent one.
///
/// Ties go to the label whose samples have the greater summed mean
/// log-probability, provided every tied sample carries one; otherwise, or if
/// that also ties, to the lexicographically smallest key.
pub fn majority_vote(samples: &[CoTSample], _task: &TaskSpec) -> VoteResult {
    let mut tally: BTreeMap<OptionKey, usize> = BTreeMap::new();
    let mut logprobs: BTreeMap<&OptionKey, Vec<Option<f64>>> = BTreeMap::new();
    for s in samples {
        if let (true, Some(label)) = (s.parsed.is_ok(), &s.parsed.predicted_label) {
            *tally.entry(label.clone()).or_default() += 1;
            logprobs.entry(label).or_default().push(s.mean_logprob);
        }
    }
    let valid_votes = tally.values().sum();
    let top = tally.values().copied().max().unwrap_or(0);
    let tied: Vec<&OptionKey> = tally.iter().filter(|(_, &c)| c == top).map(|(k, _)| k).collect();
    let tie_broken = tied.len() > 1;

    let winner = if !tie_broken {
        tied.first().map(|k| (*k).clone())
    } else {
        // Sum in sorted order so the result does not depend on input order.
        let sums: Option<Vec<(&OptionKey, f64)>> = tied
            .iter()
            .map(|k| {
                let mut lps = logprobs[*k].iter().copied().collect::<Option<Vec<f64>>>()?;
                lps.sort_by(f64::total_cmp);
                Some((*k, lps.iter().sum::<f64>()))
            })
            .collect();
        match sums {
            Some(sums) => {
                let best = sums.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
                sums.iter().find(|(_, s)| *s == best).map(|(k, _)| (*k).clone())
            }
            None => tied.first().map(|k| (*k).clone()),
        }
    };
    VoteResult {
        winner,
        tally,
        valid_votes,
        total_votes: samples.len(),
        tie_broken,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error(transparent)]
    Prompt(#[from] BuildError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("self-consistency needs n >= 1")]
    NoSamples,
}

/// Generation settings shared by the decoding strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: usize,
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_tokens: DEFAULT_MAX_TOKENS,
            stop_sequences: vec![DEFAULT_STOP.to_string()],
        }
    }
}

fn request(model: &dyn CompletionModel, prompt: String, temperature: f64, n: usize, gen: &GenerationParams) -> CompletionRequest {
    CompletionRequest {
        model_id: model.model_id().to_string(),
        prompt,
        temperature,
        num_samples: n,
        max_tokens: gen.max_tokens,
        stop_sequences: gen.stop_sequences.clone(),
        want_logprobs: true,
    }
}

/// One temperature-0 completion of the zero-shot prompt, parsed.
pub fn greedy_predict(
    instance: &Instance,
    task: &TaskSpec,
    model: &dyn CompletionModel,
    gen: &GenerationParams,
) -> Result<ParsedCoT, DecodeError> {
    let prompt = zero_shot_prompt(task, instance)?;
    let out = model.complete(&request(model, prompt, 0.0, 1, gen))?;
    let first = out.into_iter().next().ok_or(ClientError::CountMismatch { expected: 1, got: 0 })?;
    Ok(parse_cot(&first.text, task))
}

/// Samples `n` chains of thought at `temperature` and majority-votes them.
pub fn self_consistent_predict(
    instance: &Instance,
    task: &TaskSpec,
    model: &dyn CompletionModel,
    n: usize,
    temperature: f64,
    gen: &GenerationParams,
) -> Result<VoteResult, DecodeError> {
    if n == 0 {
        return Err(DecodeError::NoSamples);
    }
    let prompt = zero_shot_prompt(task, instance)?;
    let completions = model.complete(&request(model, prompt, temperature, n, gen))?;
    let params = TeacherParams {
        model_id: model.model_id().to_string(),
        temperature,
        max_tokens: gen.max_tokens,
    };
    let samples: Vec<CoTSample> = completions
        .into_iter()
        .enumerate()
        .map(|(i, c)| CoTSample {
            instance_id: instance.instance_id.clone(),
            sample_index: i,
            parsed: parse_cot(&c.text, task),
            mean_logprob: mean_token_logprob(&c).ok().map(quantize_logprob),
            raw_text: c.text,
            teacher: params.clone(),
        })
        .collect();
    Ok(majority_vote(&samples, task))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::Completion;
    use crate::parser::ParseStatus;
    use std::sync::Mutex;

    fn task() -> TaskSpec {
        TaskSpec::multiple_choice("t", 5).unwrap()
    }

    fn vote(label: Option<&str>, lp: Option<f64>) -> CoTSample {
        CoTSample {
            instance_id: "q".into(),
            sample_index: 0,
            raw_text: String::new(),
            parsed: ParsedCoT {
                rationale_text: String::new(),
                predicted_label: label.map(|l| OptionKey::new(l).unwrap()),
                parse_status: if label.is_some() { ParseStatus::Ok } else { ParseStatus::NoAnswerPhrase },
            },
            mean_logprob: lp,
            teacher: TeacherParams {
                model_id: "m".into(),
                temperature: 0.7,
                max_tokens: 256,
            },
        }
    }

    fn key(k: &str) -> OptionKey {
        OptionKey::new(k).unwrap()
    }

    #[test]
    fn plain_majority() {
        let r = majority_vote(&[vote(Some("a"), None), vote(Some("a"), None), vote(Some("b"), None)], &task());
        assert_eq!(r.winner, Some(key("a")));
        assert_eq!(r.tally, BTreeMap::from([(key("a"), 2), (key("b"), 1)]));
        assert_eq!((r.valid_votes, r.total_votes, r.tie_broken), (3, 3, false));
    }

    #[test]
    fn tie_goes_to_higher_logprob_sum() {
        let r = majority_vote(&[vote(Some("a"), Some(-4.0)), vote(Some("b"), Some(-2.0))], &task());
        assert_eq!(r.winner, Some(key("b")));
        assert!(r.tie_broken);
    }

    #[test]
    fn tie_without_logprobs_is_lexicographic() {
        let r = majority_vote(&[vote(Some("c"), Some(-0.1)), vote(Some("b"), None)], &task());
        assert_eq!(r.winner, Some(key("b")));
        assert!(r.tie_broken);
    }

    #[test]
    fn nothing_parseable() {
        let r = majority_vote(&[vote(None, None), vote(None, Some(-1.0))], &task());
        assert_eq!(r.winner, None);
        assert_eq!((r.valid_votes, r.total_votes), (0, 2));
        assert!(!r.tie_broken);
    }

    struct Scripted {
        texts: Vec<&'static str>,
        seen: Mutex<Vec<CompletionRequest>>,
    }

    impl CompletionModel for Scripted {
        fn model_id(&self) -> &str {
            "student"
        }
        fn complete(&self, r: &CompletionRequest) -> Result<Vec<Completion>, ClientError> {
            self.seen.lock().unwrap().push(r.clone());
            Ok((0..r.num_samples).map(|i| Completion::text(self.texts[i % self.texts.len()])).collect())
        }
    }

    fn inst() -> Instance {
        Instance::new(&task(), "q", "?", &[("a", "1"), ("b", "2"), ("c", "3"), ("d", "4"), ("e", "5")], Some("a")).unwrap()
    }

    #[test]
    fn greedy_forces_temperature_zero() {
        let m = Scripted {
            texts: vec!["Because. So the answer is: (d)"],
            seen: Mutex::new(vec![]),
        };
        let p = greedy_predict(&inst(), &task(), &m, &GenerationParams::default()).unwrap();
        assert_eq!(p.predicted_label, Some(key("d")));
        let seen = m.seen.lock().unwrap();
        assert_eq!(seen[0].temperature, 0.0);
        assert_eq!(seen[0].num_samples, 1);
        assert!(!seen[0].prompt.contains("\n\nQ:"));
    }

    #[test]
    fn greedy_without_phrase() {
        let m = Scripted {
            texts: vec!["I am not sure."],
            seen: Mutex::new(vec![]),
        };
        let p = greedy_predict(&inst(), &task(), &m, &GenerationParams::default()).unwrap();
        assert_eq!(p.parse_status, ParseStatus::NoAnswerPhrase);
    }

    #[test]
    fn self_consistency_votes_over_samples() {
        let m = Scripted {
            texts: vec!["x. So the answer is: (b)", "y. So the answer is: (c)", "z. So the answer is: (b)"],
            seen: Mutex::new(vec![]),
        };
        let r = self_consistent_predict(&inst(), &task(), &m, DEFAULT_SC_SAMPLES, DEFAULT_SC_TEMPERATURE, &GenerationParams::default()).unwrap();
        assert_eq!(r.winner, Some(key("b")));
        assert_eq!(r.total_votes, 30);
        {
            let seen = m.seen.lock().unwrap();
            assert_eq!((seen[0].num_samples, seen[0].temperature), (30, 0.7));
        }

        let one = self_consistent_predict(&inst(), &task(), &m, 1, 0.7, &GenerationParams::default()).unwrap();
        assert_eq!(one.winner, Some(key("b")));
        assert_eq!(one.valid_votes, 1);
        assert!(matches!(
            self_consistent_predict(&inst(), &task(), &m, 0, 0.7, &GenerationParams::default()),
            Err(DecodeError::NoSamples)
        ));
    }
}
