//! The three-step evaluation chain: sample rubrics from a generator
//! model, generate a scoring instruction per rubric, then score every
//! candidate output under every rubric, with structured-output
//! validation and bounded corrective re-prompting at each step.

pub mod parse;
mod run;

pub use run::{
    cell_name, read_score_lines, run_experiment, run_transfer, CellReport, DecodingConfig,
    RunManifest, RunOutcome, RunReport, TransferManifest, TransferOutcome,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, SampleSlice};
use crate::domain::{
    CandidateOutput, DomainError, GenerationMode, PromptCondition, Rubric, RubricOrigin,
    RubricSet, ScoreRecord, ScoringMode, TaskSpec,
};
use crate::gateway::{ChatRequest, DecodingParams, Gateway, GatewayError};
use crate::prompts::{
    build_generation_prompt, build_instruction_prompt, build_scoring_prompt, Exemplar, Polarity,
    PromptError, TemplateSet,
};
use crate::stats::rescale;

pub const MAX_ATTEMPTS: u32 = 3;

/// Per-rubric instruction attempt counts and failure diagnostics,
/// keyed by rubric_id.
pub type InstructionOutcome = (BTreeMap<String, u32>, BTreeMap<String, String>);

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("rubric generation discarded after {attempts} attempts: {last_error}")]
    GenerationDiscarded { attempts: u32, last_error: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("run I/O: {0}")]
    Io(String),
    #[error("missing run artifact: {0}")]
    MissingArtifact(String),
}

/// Outcome of the rubric-generation step for one cell: the parsed set
/// xor a discard flag, plus the raw completion and attempt counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub cell: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubric_set: Option<RubricSet>,
    /// Completion the parsed set came from (or the last malformed one).
    pub raw_completion: String,
    pub attempts: u32,
    pub discarded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    /// Per-rubric instruction attempts, keyed by rubric_id.
    #[serde(default)]
    pub instruction_attempts: BTreeMap<String, u32>,
    /// Rubrics whose instruction generation failed, with the reason.
    #[serde(default)]
    pub instruction_failures: BTreeMap<String, String>,
}

/// A (rubric, item) pair that produced no usable score after the
/// attempt budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingRecord {
    pub rubric_id: String,
    pub item_id: String,
    pub judge_model: String,
    pub condition: PromptCondition,
    pub attempts: u32,
    pub diagnostic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_key: Option<String>,
}

/// One line of a cell's score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScoreLine {
    Scored(ScoreRecord),
    Missing(MissingRecord),
}

/// Judge scores plus the cache key of the transcript each came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedScore {
    #[serde(flatten)]
    pub record: ScoreRecord,
    pub transcript_key: String,
}

/// Stage decoding parameters and attempt policy for one pipeline.
pub struct Pipeline<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateSet,
    /// Cache scope for sampled (temperature > 0) calls; normally the run id.
    pub run_scope: Option<String>,
    pub generation_params: DecodingParams,
    pub instruction_params: DecodingParams,
    pub scoring_params: DecodingParams,
    pub max_attempts: u32,
}

impl<'a> Pipeline<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet) -> Self {
        Self {
            gateway,
            templates,
            run_scope: None,
            generation_params: DecodingParams::sampling(),
            instruction_params: DecodingParams::sampling(),
            scoring_params: DecodingParams::greedy(),
            max_attempts: MAX_ATTEMPTS,
        }
    }

    pub fn with_scope(mut self, scope: impl Into<String>) -> Self {
        self.run_scope = Some(scope.into());
        self
    }

    fn attempt<T>(
        &self,
        model: &str,
        base_prompt: &str,
        params: &DecodingParams,
        schema_tag: Option<&str>,
        expected_schema: &str,
        parse: impl FnMut(&str) -> Result<T, String>,
    ) -> Result<Attempted<T>, GatewayError> {
        attempt_with_reprompt(
            self.gateway,
            model,
            base_prompt,
            params,
            schema_tag,
            self.run_scope.as_deref(),
            expected_schema,
            self.max_attempts,
            parse,
        )
    }

    /// Sample a rubric set for a task under one generation condition.
    /// Three malformed completions discard the cell.
    pub fn generate_rubrics(
        &self,
        task: &TaskSpec,
        condition: &PromptCondition,
        exemplars: &[Exemplar],
        generator_model: &str,
    ) -> Result<(RubricSet, u32, String), PipelineError> {
        let prompt = build_generation_prompt(task, condition, exemplars, self.templates)?;
        let attempted = self.attempt(
            generator_model,
            &prompt.user_text,
            &self.generation_params,
            Some("rubric_list"),
            "a JSON array of objects, each with the fields \"name\", \"description\", and \"scale\"",
            parse::parse_rubric_list,
        )?;
        match attempted.outcome {
            Ok(triples) => {
                let mut rubrics: Vec<Rubric> = Vec::new();
                for triple in triples {
                    let rubric = Rubric::new(
                        triple.name,
                        triple.description,
                        triple.scale,
                        RubricOrigin::Model(generator_model.to_string()),
                    )?;
                    // Exact repeats collapse to one rubric; semantic
                    // dedup happens later in analysis.
                    if !rubrics.iter().any(|r| r.rubric_id == rubric.rubric_id) {
                        rubrics.push(rubric);
                    }
                }
                let set = RubricSet::new(rubrics, *condition, task.clone(), generator_model)?;
                Ok((set, attempted.attempts, attempted.raw))
            }
            Err(last_error) => Err(PipelineError::GenerationDiscarded {
                attempts: attempted.attempts,
                last_error,
            }),
        }
    }

    /// Populate the instruction of every rubric in the set. A rubric
    /// whose instruction fails three times is flagged and left without
    /// one; the others are untouched.
    pub fn generate_instructions(
        &self,
        set: &mut RubricSet,
        condition: &PromptCondition,
        model: &str,
    ) -> Result<InstructionOutcome, PipelineError> {
        let mut attempts_by_rubric = BTreeMap::new();
        let mut failures = BTreeMap::new();
        for rubric in &mut set.rubrics {
            if rubric.instruction.is_some() {
                continue;
            }
            let prompt = build_instruction_prompt(rubric, self.templates, condition)?;
            let attempted = self.attempt(
                model,
                &prompt.user_text,
                &self.instruction_params,
                None,
                "a non-empty scoring instruction (Evaluation Criteria / Evaluation Steps)",
                parse::parse_instruction,
            )?;
            attempts_by_rubric.insert(rubric.rubric_id.clone(), attempted.attempts);
            match attempted.outcome {
                Ok(instruction) => rubric.instruction = Some(instruction),
                Err(err) => {
                    failures.insert(rubric.rubric_id.clone(), err);
                }
            }
        }
        Ok((attempts_by_rubric, failures))
    }

    /// Score every item under every rubric of the set. Unparseable
    /// replies are re-prompted up to the budget and then recorded as
    /// missing with diagnostics; scoring never aborts the cell.
    pub fn score_outputs(
        &self,
        set: &RubricSet,
        items: &[CandidateOutput],
        condition: &PromptCondition,
        judge_model: &str,
        demos: &[(CandidateOutput, f64)],
    ) -> Result<(Vec<RecordedScore>, Vec<MissingRecord>), PipelineError> {
        let mut records = Vec::new();
        let mut missing = Vec::new();
        for rubric in &set.rubrics {
            // Demo scores arrive on the quality signal's native range
            // normalized to [0, 1]; map onto this rubric's scale.
            let rubric_demos: Vec<(CandidateOutput, f64)> = demos
                .iter()
                .map(|(item, unit)| {
                    (
                        item.clone(),
                        rescale(*unit, (0.0, 1.0), (rubric.scale.numeric_min, rubric.scale.numeric_max)),
                    )
                })
                .collect();
            if rubric.instruction.is_none() {
                for item in items {
                    missing.push(MissingRecord {
                        rubric_id: rubric.rubric_id.clone(),
                        item_id: item.item_id.clone(),
                        judge_model: judge_model.to_string(),
                        condition: *condition,
                        attempts: 0,
                        diagnostic: "rubric has no instruction (instruction stage failed)".into(),
                        transcript_key: None,
                    });
                }
                continue;
            }
            for item in items {
                let demos_for_prompt: &[(CandidateOutput, f64)] =
                    if condition.scoring_mode == ScoringMode::FewShot {
                        &rubric_demos
                    } else {
                        &[]
                    };
                let prompt = build_scoring_prompt(
                    &set.task,
                    rubric,
                    item,
                    condition,
                    demos_for_prompt,
                    self.templates,
                )?;
                let scale = rubric.scale.clone();
                let attempted = match self.attempt(
                    judge_model,
                    &prompt.user_text,
                    &self.scoring_params,
                    Some("score_reasoning"),
                    "a JSON object with the fields \"reasoning\" and \"score\"",
                    |text| parse::parse_score_reply(text, &scale),
                ) {
                    Ok(a) => a,
                    Err(gateway_err) => {
                        // Transport-level failure for one pair: record
                        // it as missing, keep the run going.
                        missing.push(MissingRecord {
                            rubric_id: rubric.rubric_id.clone(),
                            item_id: item.item_id.clone(),
                            judge_model: judge_model.to_string(),
                            condition: *condition,
                            attempts: 0,
                            diagnostic: gateway_err.to_string(),
                            transcript_key: None,
                        });
                        continue;
                    }
                };
                match attempted.outcome {
                    Ok(reply) => records.push(RecordedScore {
                        record: ScoreRecord {
                            rubric_id: rubric.rubric_id.clone(),
                            item_id: item.item_id.clone(),
                            reasoning: reply.reasoning,
                            raw_score: reply.raw_score,
                            score: reply.normalized.value,
                            clamped: reply.normalized.clamped,
                            judge_model: judge_model.to_string(),
                            condition: *condition,
                            attempt_count: attempted.attempts,
                        },
                        transcript_key: attempted.transcript_key,
                    }),
                    Err(err) => missing.push(MissingRecord {
                        rubric_id: rubric.rubric_id.clone(),
                        item_id: item.item_id.clone(),
                        judge_model: judge_model.to_string(),
                        condition: *condition,
                        attempts: attempted.attempts,
                        diagnostic: err,
                        transcript_key: Some(attempted.transcript_key),
                    }),
                }
            }
        }
        Ok((records, missing))
    }
}

pub(crate) struct Attempted<T> {
    pub outcome: Result<T, String>,
    pub attempts: u32,
    pub raw: String,
    pub transcript_key: String,
}

/// Complete → validate → corrective-re-prompt loop shared by every
/// LLM-backed step. The corrective prompt appends the parse error and
/// the expected schema verbatim, so retries are auditable and hit
/// distinct cache keys.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attempt_with_reprompt<T>(
    gateway: &Gateway,
    model: &str,
    base_prompt: &str,
    params: &DecodingParams,
    schema_tag: Option<&str>,
    cache_scope: Option<&str>,
    expected_schema: &str,
    max_attempts: u32,
    mut parse: impl FnMut(&str) -> Result<T, String>,
) -> Result<Attempted<T>, GatewayError> {
    let mut prompt = base_prompt.to_string();
    let mut last_error = String::new();
    let mut last_key = String::new();
    let mut last_raw = String::new();
    for attempt in 1..=max_attempts.max(1) {
        let mut req = ChatRequest::new(model, prompt.clone(), params.clone());
        req.response_schema = schema_tag.map(str::to_string);
        req.cache_scope = cache_scope.map(str::to_string);
        last_key = req.cache_key().0;
        let completion = gateway.complete(&req)?;
        last_raw = completion.clone();
        match parse(&completion) {
            Ok(value) => {
                return Ok(Attempted {
                    outcome: Ok(value),
                    attempts: attempt,
                    raw: last_raw,
                    transcript_key: last_key,
                })
            }
            Err(err) => {
                last_error = err;
                prompt = format!(
                    "{base_prompt}\n\nYour previous reply could not be parsed: {last_error}\nReply again. Expected format: {expected_schema}"
                );
            }
        }
    }
    Ok(Attempted {
        outcome: Err(last_error),
        attempts: max_attempts.max(1),
        raw: last_raw,
        transcript_key: last_key,
    })
}

/// Stratified few-shot demos: one high, one mid, one low scorer on the
/// quality signal (when the pool allows), fixed per (dataset, seed) and
/// reused across rubrics. Scores are returned normalized to [0, 1] of
/// the signal's native range for later mapping onto each rubric scale.
pub fn select_demos(
    slice: &SampleSlice,
    quality_signal: &str,
    signal_range: (f64, f64),
) -> Vec<(CandidateOutput, f64)> {
    let mut pool: Vec<&CandidateOutput> = slice
        .items
        .iter()
        .filter(|i| i.human_scores.contains_key(quality_signal))
        .collect();
    pool.sort_by(|a, b| {
        let qa = a.human_scores[quality_signal];
        let qb = b.human_scores[quality_signal];
        qa.partial_cmp(&qb)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    if pool.is_empty() {
        return Vec::new();
    }
    let mut picks: Vec<&CandidateOutput> = vec![pool[0]];
    let mid = pool[pool.len() / 2];
    if !picks.iter().any(|p| p.item_id == mid.item_id) {
        picks.push(mid);
    }
    let high = pool[pool.len() - 1];
    if !picks.iter().any(|p| p.item_id == high.item_id) {
        picks.push(high);
    }
    picks
        .into_iter()
        .map(|item| {
            let unit = rescale(item.human_scores[quality_signal], signal_range, (0.0, 1.0));
            (item.clone(), unit)
        })
        .collect()
}

/// Exemplar material for a generation condition, drawn from the slice.
pub fn exemplars_for(
    slice: &SampleSlice,
    mode: GenerationMode,
) -> Result<Vec<Exemplar>, PipelineError> {
    match mode {
        GenerationMode::TaskOnly => Ok(Vec::new()),
        GenerationMode::TaskPlusContexts => {
            if slice.contrastive_pairs.len() < 3 {
                return Err(PipelineError::Prompt(PromptError::ExemplarMismatch(format!(
                    "slice has {} contexts, need 3",
                    slice.contrastive_pairs.len()
                ))));
            }
            Ok(slice
                .contrastive_pairs
                .iter()
                .take(3)
                .map(|pair| Exemplar {
                    context: pair.context.clone(),
                    output: String::new(),
                    polarity: Polarity::Neutral,
                    provenance: pair.positive.item_id.clone(),
                })
                .collect())
        }
        GenerationMode::TaskPlusContrastive => {
            if slice.contrastive_pairs.len() < 3 {
                return Err(PipelineError::Prompt(PromptError::ExemplarMismatch(format!(
                    "slice has {} contrastive pairs, need 3",
                    slice.contrastive_pairs.len()
                ))));
            }
            let mut exemplars = Vec::new();
            for pair in slice.contrastive_pairs.iter().take(3) {
                exemplars.push(Exemplar {
                    context: pair.context.clone(),
                    output: pair.positive.text.clone(),
                    polarity: Polarity::Positive,
                    provenance: pair.positive.item_id.clone(),
                });
                exemplars.push(Exemplar {
                    context: pair.context.clone(),
                    output: pair.negative.text.clone(),
                    polarity: Polarity::Negative,
                    provenance: pair.negative.item_id.clone(),
                });
            }
            Ok(exemplars)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RubricSource;
    use crate::gateway::{MockBackend, MockScript, RetryPolicy};
    use std::sync::LazyLock;

    static TEMPLATES: LazyLock<TemplateSet> = LazyLock::new(TemplateSet::builtin);

    fn task() -> TaskSpec {
        TaskSpec::new("t1", "Generate helpful responses.", "mock").unwrap()
    }

    fn condition(scoring: ScoringMode) -> PromptCondition {
        PromptCondition::new(GenerationMode::TaskOnly, scoring, RubricSource::LlmGenerated)
    }

    fn gateway(script: MockScript) -> Gateway {
        Gateway::new(Box::new(MockBackend::new(script).unwrap()))
            .with_retry(RetryPolicy::immediate(3))
    }

    const SIX_TRIPLES: &str = r#"[
        {"name": "Helpfulness", "description": "Addresses the request", "scale": "1-5"},
        {"name": "Accuracy", "description": "Factually correct", "scale": "1-5"},
        {"name": "Clarity", "description": "Easy to follow", "scale": "1-5"},
        {"name": "Tone", "description": "Appropriate register", "scale": "1-5"},
        {"name": "Depth", "description": "Covers details", "scale": "1-5"},
        {"name": "Creativity", "description": "Novel ideas", "scale": "1-5"}
    ]"#;

    #[test]
    fn well_formed_completion_parses_first_try() {
        let gw = gateway(MockScript::default().rule("define a set of metrics", &[SIX_TRIPLES]));
        let pipeline = Pipeline::new(&gw, &TEMPLATES);
        let (set, attempts, _raw) = pipeline
            .generate_rubrics(&task(), &condition(ScoringMode::ZeroShot), &[], "mock-gen")
            .unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(attempts, 1);
    }

    #[test]
    fn two_malformed_then_valid_takes_three_attempts() {
        let gw = gateway(MockScript::default().rule(
            "define a set of metrics",
            &["not json", "{\"oops\": true}", SIX_TRIPLES],
        ));
        let pipeline = Pipeline::new(&gw, &TEMPLATES);
        let (set, attempts, _raw) = pipeline
            .generate_rubrics(&task(), &condition(ScoringMode::ZeroShot), &[], "mock-gen")
            .unwrap();
        assert_eq!(attempts, 3);
        assert_eq!(set.len(), 6);
    }

    #[test]
    fn three_malformed_discards_without_crash() {
        let gw = gateway(MockScript::default().rule("define a set of metrics", &["junk"]));
        let pipeline = Pipeline::new(&gw, &TEMPLATES);
        let err = pipeline
            .generate_rubrics(&task(), &condition(ScoringMode::ZeroShot), &[], "mock-gen")
            .unwrap_err();
        match err {
            PipelineError::GenerationDiscarded { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected discard, got {other:?}"),
        }
    }

    #[test]
    fn corrective_reprompt_appends_error_and_schema() {
        // The second request must differ from the first and carry the
        // parse diagnostics; distinct cache keys prove it.
        let gw = gateway(MockScript::default().rule("define a set of metrics", &["junk", SIX_TRIPLES]));
        let pipeline = Pipeline::new(&gw, &TEMPLATES);
        pipeline
            .generate_rubrics(&task(), &condition(ScoringMode::ZeroShot), &[], "mock-gen")
            .unwrap();
        assert_eq!(gw.stats().backend_calls, 2);
    }

    fn instructed_set(pipeline: &Pipeline, k: usize) -> RubricSet {
        let names = ["A", "B", "C", "D", "E", "F"];
        let rubrics = names[..k]
            .iter()
            .map(|n| {
                Rubric::new(
                    *n,
                    format!("Measures {n}"),
                    crate::domain::Scale::one_to_five(),
                    RubricOrigin::Model("mock-gen".into()),
                )
                .unwrap()
            })
            .collect();
        let mut set =
            RubricSet::new(rubrics, condition(ScoringMode::ZeroShot), task(), "mock-gen").unwrap();
        pipeline
            .generate_instructions(&mut set, &condition(ScoringMode::ZeroShot), "mock-gen")
            .unwrap();
        set
    }

    #[test]
    fn instruction_fan_out_is_one_call_per_rubric() {
        let gw = gateway(MockScript::default().rule("generate scoring instruction", &["Rate 1 to 5."]));
        let pipeline = Pipeline::new(&gw, &TEMPLATES);
        let set = instructed_set(&pipeline, 4);
        assert_eq!(gw.stats().backend_calls, 4);
        assert!(set.rubrics.iter().all(|r| r.instruction.is_some()));
    }

    #[test]
    fn one_rubric_failing_thrice_leaves_others_intact() {
        let script = MockScript::parse(
            r#"{"chat_rules": [
                {"user_regex": "instruction for this A", "replies": ["  "], "repeat_last": true},
                {"user_regex": "generate scoring instruction", "replies": ["Rate it."], "repeat_last": true}
            ]}"#,
        )
        .unwrap();
        let gw = gateway(script);
        let pipeline = Pipeline::new(&gw, &TEMPLATES);
        let names = ["A", "B", "C"];
        let rubrics: Vec<Rubric> = names
            .iter()
            .map(|n| {
                Rubric::new(
                    *n,
                    format!("Measures {n}"),
                    crate::domain::Scale::one_to_five(),
                    RubricOrigin::Model("mock-gen".into()),
                )
                .unwrap()
            })
            .collect();
        let mut set =
            RubricSet::new(rubrics, condition(ScoringMode::ZeroShot), task(), "mock-gen").unwrap();
        let (attempts, failures) = pipeline
            .generate_instructions(&mut set, &condition(ScoringMode::ZeroShot), "mock-gen")
            .unwrap();
        assert_eq!(failures.len(), 1);
        assert_eq!(attempts.values().filter(|&&a| a == 3).count(), 1);
        assert!(set.rubrics[0].instruction.is_none());
        assert!(set.rubrics[1].instruction.is_some());
        assert!(set.rubrics[2].instruction.is_some());
    }

    fn items(n: usize) -> Vec<CandidateOutput> {
        (0..n)
            .map(|i| CandidateOutput {
                item_id: format!("i{i}"),
                context: None,
                text: format!("candidate output {i}"),
                human_scores: Default::default(),
            })
            .collect()
    }

    #[test]
    fn five_rubrics_fifty_items_yield_250_lines() {
        let script = MockScript::default()
            .rule("generate scoring instruction", &["Rate 1 to 5."])
            .rule("score the following output", &[r#"{"reasoning": "ok", "score": 3}"#]);
        let gw = gateway(script);
        let pipeline = Pipeline::new(&gw, &TEMPLATES);
        let set = instructed_set(&pipeline, 5);
        let items = items(50);
        let (records, missing) = pipeline
            .score_outputs(&set, &items, &condition(ScoringMode::ZeroShot), "mock-judge", &[])
            .unwrap();
        assert_eq!(records.len() + missing.len(), 5 * 50);
        assert_eq!(missing.len(), 0);
    }

    #[test]
    fn unparseable_score_exercises_reprompt_then_missing() {
        let script = MockScript::default()
            .rule("generate scoring instruction", &["Rate 1 to 5."])
            .rule("score the following output", &[r#"{"score": "excellent"}"#]);
        let gw = gateway(script);
        let pipeline = Pipeline::new(&gw, &TEMPLATES);
        let set = instructed_set(&pipeline, 1);
        let items = items(1);
        let (records, missing) = pipeline
            .score_outputs(&set, &items, &condition(ScoringMode::ZeroShot), "mock-judge", &[])
            .unwrap();
        assert!(records.is_empty());
        assert_eq!(missing.len(), 1);
        assert_eq!(missing[0].attempts, 3);
        assert!(missing[0].diagnostic.contains("unparseable"));
    }

    #[test]
    fn reprompted_score_records_attempt_count() {
        let script = MockScript::default()
            .rule("generate scoring instruction", &["Rate 1 to 5."])
            .rule(
                "score the following output",
                &["no score here", r#"{"reasoning": "fine", "score": 4}"#],
            );
        let gw = gateway(script);
        let pipeline = Pipeline::new(&gw, &TEMPLATES);
        let set = instructed_set(&pipeline, 1);
        let items = items(1);
        let (records, missing) = pipeline
            .score_outputs(&set, &items, &condition(ScoringMode::ZeroShot), "mock-judge", &[])
            .unwrap();
        assert!(missing.is_empty());
        assert_eq!(records[0].record.attempt_count, 2);
        assert_eq!(records[0].record.score, 4.0);
    }

    #[test]
    fn uninstructed_rubrics_surface_as_missing_records() {
        let gw = gateway(
            MockScript::default().rule("score the following output", &[r#"{"score": 2}"#]),
        );
        let pipeline = Pipeline::new(&gw, &TEMPLATES);
        let rubric = Rubric::new(
            "A",
            "Measures A",
            crate::domain::Scale::one_to_five(),
            RubricOrigin::Model("m".into()),
        )
        .unwrap();
        let set = RubricSet::new(vec![rubric], condition(ScoringMode::ZeroShot), task(), "m").unwrap();
        let items = items(4);
        let (records, missing) = pipeline
            .score_outputs(&set, &items, &condition(ScoringMode::ZeroShot), "mock-judge", &[])
            .unwrap();
        assert!(records.is_empty());
        assert_eq!(missing.len(), 4);
        assert!(missing[0].diagnostic.contains("no instruction"));
    }

    #[test]
    fn demo_selection_is_stratified_and_stable() {
        let mut items = items(7);
        for (i, item) in items.iter_mut().enumerate() {
            item.human_scores.insert("overall".into(), (i % 5 + 1) as f64);
        }
        let slice = SampleSlice {
            items,
            contexts: vec![],
            contrastive_pairs: vec![],
            seed: 1,
        };
        let demos = select_demos(&slice, "overall", (1.0, 5.0));
        assert_eq!(demos.len(), 3);
        assert_eq!(demos[0].1, 0.0); // low
        assert_eq!(demos[2].1, 1.0); // high
        let again = select_demos(&slice, "overall", (1.0, 5.0));
        assert_eq!(demos, again);
    }
}
