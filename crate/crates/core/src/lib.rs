//! Harness for studying LLM judges that design and apply their own
//! evaluation rubrics: prompt pipelines, scoring, semantic rubric
//! deduplication, human-alignment tagging, and a reliability
//! statistics suite, all replayable offline through a scripted
//! gateway and an on-disk transcript cache.

pub mod analysis;
pub mod cli;
pub mod dataset;
pub mod domain;
pub mod gateway;
pub mod pipeline;
pub mod prompts;
pub mod report;
pub mod stats;

pub use domain::{
    normalize_score, rubric_fingerprint, CandidateOutput, DomainError, GenerationMode,
    NormalizedScore, PromptCondition, Rubric, RubricOrigin, RubricSet, RubricSource, Scale,
    ScaleKind, ScoreRecord, ScoringMode, TaskSpec,
};
pub use gateway::{
    cosine, ChatBackend, ChatRequest, DecodingParams, EmbeddingVector, Gateway, GatewayError,
    HttpBackend, MockBackend, MockScript, RetryPolicy,
};
pub use stats::{
    agreement_pct, correlate_with_human, fleiss_kappa, icc2, icc2k, krippendorff_alpha, pearson,
    spearman, AlphaMetric, HumanCorrelationReport, ScoreMatrix, StatError, StatResult,
};
