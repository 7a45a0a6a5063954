//! Chain-of-thought distillation pipeline.
//!
//! Samples rationales from a teacher completion service, filters and
//! downsamples them, exports zero-shot training sets for a student, and
//! evaluates students with greedy or self-consistency decoding.
//!
//! | module | concern |
//! |---|---|
//! | [`task`] | tasks, instances, prompt sets |
//! | [`client`] | completion client: caching, retries, bounded concurrency |
//! | [`parser`] | answer extraction from chains of thought |
//! | [`builder`] | few-shot prompts, teacher sampling, training export |
//! | [`filters`] | correctness filter and downsampling filters |
//! | [`embedder`] | sentence embeddings for the diversity filter |
//! | [`aggregation`] | greedy decoding and majority voting |
//! | [`eval`] | accuracy reports, contrast sets, sweeps, multi-task corpora |
//! | [`corpus_io`] | corpus files and statistics |

pub mod aggregation;
pub mod builder;
pub mod cache;
pub mod client;
pub mod cluster;
pub mod corpus_io;
pub mod embedder;
pub mod eval;
pub mod filters;
pub mod hashing;
pub mod http;
pub mod parser;
pub mod task;
pub mod text;
pub mod trainer;

pub use aggregation::{greedy_predict, majority_vote, self_consistent_predict, GenerationParams, VoteResult};
pub use builder::{
    build_prompt, sample_corpus, to_training_examples, CoTSample, DistillationCorpus, ProvenanceStep, SamplingParams,
    Setting, TaskCatalog, TrainingExample, TrainingMode,
};
pub use client::{mean_token_logprob, ClientConfig, Completion, CompletionClient, CompletionModel, CompletionRequest};
pub use corpus_io::{read_corpus, stats, write_corpus, CorpusStats};
pub use embedder::{cosine_distance, Embedder, Embedding, HashedBigramEmbedder, RemoteEmbedder};
pub use eval::{evaluate, Decode, DecodeParams, EvalReport, SweepResult};
pub use filters::{apply_chain, FilterKind, FilterSpec};
pub use parser::{parse_cot, render_target, ParseStatus, ParsedCoT};
pub use task::{load_task, Instance, OptionKey, PromptExample, PromptSet, TaskKind, TaskSpec};
