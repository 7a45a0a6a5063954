//! Correctness filtering and per-instance downsampling.
//!
//! Every filter returns a subset of its input corpus and appends exactly one
//! provenance step. Random choices are drawn from a ChaCha8 stream seeded per
//! instance from `(seed, instance_id)`, so results do not depend on the order
//! or parallelism in which instances are processed.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::builder::{CoTSample, DistillationCorpus, ProvenanceStep, TaskCatalog};
use crate::cluster::average_linkage;
use crate::embedder::{cosine_distance, EmbedError, Embedder};
use crate::hashing::sub_seed;
use crate::text::unique_bigram_count;

/// Per-bin budgets of the open-endedness filter, least to most open-ended.
pub const OPEN_ENDEDNESS_LADDER: [usize; 5] = [1, 3, 5, 7, 9];
pub const DEFAULT_DOWNSAMPLE_BUDGET: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    CorrectLabel,
    /// Drops samples whose label could not be parsed.
    ParseOk,
    RandomK,
    DiversityK,
    LikelihoodTopK,
    OpenEndedness,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::CorrectLabel => "correct_label",
            FilterKind::ParseOk => "parse_ok",
            FilterKind::RandomK => "random_k",
            FilterKind::DiversityK => "diversity_k",
            FilterKind::LikelihoodTopK => "likelihood_top_k",
            FilterKind::OpenEndedness => "open_endedness",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(json!(s)).map_err(|_| format!("unknown filter kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Samples kept per instance; the average budget for open-endedness.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_budget() -> usize {
    DEFAULT_DOWNSAMPLE_BUDGET
}

impl FilterSpec {
    pub fn new(kind: FilterKind, budget: usize, seed: u64) -> Self {
        FilterSpec { kind, budget, seed }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.budget == 0 {
            return Err(FilterError::ZeroBudget);
        }
        if self.kind == FilterKind::OpenEndedness && self.budget != DEFAULT_DOWNSAMPLE_BUDGET {
            return Err(FilterError::LadderBudget(self.budget));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("filter budget must be at least 1")]
    ZeroBudget,
    #[error("open_endedness uses the fixed 1/3/5/7/9 ladder (average 5), got budget {0}")]
    LadderBudget(usize),
    #[error("instance {0:?} has no gold label; correct_label needs the supervised setting")]
    MissingGold(String),
    #[error("corpus entry {0:?} has no matching instance")]
    UnknownInstance(String),
    #[error("instance {instance_id:?} sample {sample_index} has no teacher likelihood")]
    MissingLikelihood { instance_id: String, sample_index: usize },
    #[error("instance {instance_id:?}: embedding failed: {source}")]
    Embedding {
        instance_id: String,
        #[source]
        source: EmbedError,
    },
    #[error("open_endedness needs at least 5 instances, corpus has {0}")]
    TooFewInstances(usize),
    #[error("{0} filter needs an embedder")]
    NoEmbedder(&'static str),
}

fn step(kind: FilterKind, budget: Option<usize>, seed: Option<u64>, params: serde_json::Value) -> ProvenanceStep {
    ProvenanceStep {
        kind: kind.as_str().to_string(),
        budget,
        seed,
        params,
    }
}

fn rng_for(seed: u64, instance_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, instance_id))
}

/// `min(k, len)` samples drawn uniformly without replacement, in index order.
fn random_subset(samples: &[CoTSample], k: usize, rng: &mut ChaCha8Rng) -> Vec<CoTSample> {
    if k >= samples.len() {
        return samples.to_vec();
    }
    let mut picked = sample_indices(rng, samples.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| samples[i].clone()).collect()
}

/// Keeps samples whose parsed label equals the gold label.
pub fn filter_correct(corpus: &DistillationCorpus, catalog: &TaskCatalog) -> Result<DistillationCorpus, FilterError> {
    let mut entries = BTreeMap::new();
    for (id, samples) in &corpus.entries {
        let (_, inst) = catalog
            .resolve(id)
            .ok_or_else(|| FilterError::UnknownInstance(id.clone()))?;
        let gold = inst
            .gold_label
            .as_ref()
            .ok_or_else(|| FilterError::MissingGold(id.clone()))?;
        let kept = samples
            .iter()
            .filter(|s| s.parsed.is_ok() && s.parsed.predicted_label.as_ref() == Some(gold))
            .cloned()
            .collect();
        entries.insert(id.clone(), kept);
    }
    Ok(corpus.derive(entries, step(FilterKind::CorrectLabel, None, None, json!({}))))
}

/// Drops unparseable samples (the few-shot policy, where labels are unchecked).
pub fn filter_parse_ok(corpus: &DistillationCorpus) -> DistillationCorpus {
    let entries = corpus
        .entries
        .iter()
        .map(|(id, s)| (id.clone(), s.iter().filter(|s| s.parsed.is_ok()).cloned().collect()))
        .collect();
    corpus.derive(entries, step(FilterKind::ParseOk, None, None, json!({})))
}

pub fn filter_random_k(corpus: &DistillationCorpus, k: usize, seed: u64) -> Result<DistillationCorpus, FilterError> {
    if k == 0 {
        return Err(FilterError::ZeroBudget);
    }
    let entries = corpus
        .entries
        .iter()
        .map(|(id, samples)| (id.clone(), random_subset(samples, k, &mut rng_for(seed, id))))
        .collect();
    Ok(corpus.derive(entries, step(FilterKind::RandomK, Some(k), Some(seed), json!({}))))
}

/// Cluster labels of one instance's samples under the diversity filter.
pub fn diversity_clusters(samples: &[CoTSample], k: usize, embedder: &dyn Embedder) -> Result<Vec<usize>, EmbedError> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = samples.iter().map(|s| s.parsed.rationale_text.clone()).collect();
    let embs = embedder.embed_batch(&texts)?;
    let n = embs.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(&embs[i], &embs[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok(average_linkage(&dist, k))
}

/// Clusters each instance's rationales into `min(k, n)` groups and keeps one
/// randomly chosen member per group.
pub fn filter_diversity_k(
    corpus: &DistillationCorpus,
    k: usize,
    seed: u64,
    embedder: &dyn Embedder,
    embedder_name: &str,
) -> Result<DistillationCorpus, FilterError> {
    if k == 0 {
        return Err(FilterError::ZeroBudget);
    }
    let items: Vec<(&String, &Vec<CoTSample>)> = corpus.entries.iter().collect();
    let kept: Vec<(String, Vec<CoTSample>)> = items
        .par_iter()
        .map(|(id, samples)| {
            let labels = diversity_clusters(samples, k, embedder).map_err(|source| FilterError::Embedding {
                instance_id: (*id).clone(),
                source,
            })?;
            let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
            let mut rng = rng_for(seed, id);
            let mut picked: Vec<usize> = (0..n_clusters)
                .map(|c| {
                    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                    members[rng.gen_range(0..members.len())]
                })
                .collect();
            picked.sort_unstable();
            Ok(((*id).clone(), picked.into_iter().map(|i| samples[i].clone()).collect()))
        })
        .collect::<Result<_, FilterError>>()?;
    Ok(corpus.derive(
        kept.into_iter().collect(),
        step(
            FilterKind::DiversityK,
            Some(k),
            Some(seed),
            json!({"linkage": "average", "metric": "cosine", "embedder": embedder_name}),
        ),
    ))
}

/// Keeps the `k` samples with the highest mean token log-probability;
/// ties go to the lower sample index.
pub fn filter_likelihood_top_k(corpus: &DistillationCorpus, k: usize) -> Result<DistillationCorpus, FilterError> {
    if k == 0 {
        return Err(FilterError::ZeroBudget);
    }
    let mut entries = BTreeMap::new();
    for (id, samples) in &corpus.entries {
        let mut scored = Vec::with_capacity(samples.len());
        for s in samples {
            let lp = s.mean_logprob.ok_or_else(|| FilterError::MissingLikelihood {
                instance_id: id.clone(),
                sample_index: s.sample_index,
            })?;
            scored.push((lp, s));
        }
        scored.sort_by(|(a, sa), (b, sb)| b.total_cmp(a).then(sa.sample_index.cmp(&sb.sample_index)));
        let mut kept: Vec<CoTSample> = scored.into_iter().take(k).map(|(_, s)| s.clone()).collect();
        kept.sort_by_key(|s| s.sample_index);
        entries.insert(id.clone(), kept);
    }
    Ok(corpus.derive(entries, step(FilterKind::LikelihoodTopK, Some(k), None, json!({}))))
}

/// Unique word bigrams pooled over an instance's rationales.
pub fn open_endedness_score(samples: &[CoTSample]) -> usize {
    unique_bigram_count(samples.iter().map(|s| s.parsed.rationale_text.as_str()))
}

/// Assigns quintile bins (0..5) to instances ranked by ascending score, ties
/// broken by instance id. Bins are equal-sized with the remainder going to the
/// lowest bins. Returned in rank order.
pub fn quintile_bins(scores: &[(String, usize)]) -> Vec<(String, usize, usize)> {
    let mut ranked: Vec<&(String, usize)> = scores.iter().collect();
    ranked.sort_by(|(ia, sa), (ib, sb)| sa.cmp(sb).then_with(|| ia.cmp(ib)));
    let n = ranked.len();
    let (base, extra) = (n / 5, n % 5);
    let mut out = Vec::with_capacity(n);
    let mut rank = 0;
    for bin in 0..5 {
        let size = base + usize::from(bin < extra);
        for _ in 0..size {
            let (id, score) = ranked[rank];
            out.push((id.clone(), *score, bin));
            rank += 1;
        }
    }
    out
}

/// Keeps 1, 3, 5, 7 or 9 random samples per instance by open-endedness quintile.
pub fn filter_open_endedness(corpus: &DistillationCorpus, seed: u64) -> Result<DistillationCorpus, FilterError> {
    if corpus.entries.len() < 5 {
        return Err(FilterError::TooFewInstances(corpus.entries.len()));
    }
    let scores: Vec<(String, usize)> = corpus
        .entries
        .iter()
        .map(|(id, s)| (id.clone(), open_endedness_score(s)))
        .collect();
    let mut entries = BTreeMap::new();
    for (id, _, bin) in quintile_bins(&scores) {
        let budget = OPEN_ENDEDNESS_LADDER[bin];
        let kept = random_subset(&corpus.entries[&id], budget, &mut rng_for(seed, &id));
        entries.insert(id, kept);
    }
    Ok(corpus.derive(
        entries,
        step(
            FilterKind::OpenEndedness,
            Some(DEFAULT_DOWNSAMPLE_BUDGET),
            Some(seed),
            json!({"ladder": OPEN_ENDEDNESS_LADDER, "score": "unique_word_bigrams"}),
        ),
    ))
}

/// Applies one filter from its spec.
pub fn apply_filter(
    corpus: &DistillationCorpus,
    spec: &FilterSpec,
    catalog: &TaskCatalog,
    embedder: Option<(&dyn Embedder, &str)>,
) -> Result<DistillationCorpus, FilterError> {
    spec.validate()?;
    match spec.kind {
        FilterKind::CorrectLabel => filter_correct(corpus, catalog),
        FilterKind::ParseOk => Ok(filter_parse_ok(corpus)),
        FilterKind::RandomK => filter_random_k(corpus, spec.budget, spec.seed),
        FilterKind::DiversityK => {
            let (e, name) = embedder.ok_or(FilterError::NoEmbedder("diversity_k"))?;
            filter_diversity_k(corpus, spec.budget, spec.seed, e, name)
        }
        FilterKind::LikelihoodTopK => filter_likelihood_top_k(corpus, spec.budget),
        FilterKind::OpenEndedness => filter_open_endedness(corpus, spec.seed),
    }
}

/// Applies filters left to right.
pub fn apply_chain(
    corpus: &DistillationCorpus,
    specs: &[FilterSpec],
    catalog: &TaskCatalog,
    embedder: Option<(&dyn Embedder, &str)>,
) -> Result<DistillationCorpus, FilterError> {
    let mut current = corpus.clone();
    for spec in specs {
        current = apply_filter(&current, spec, catalog, embedder)?;
    }
    Ok(current)
}
