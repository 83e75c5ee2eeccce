//! Deterministic rendering of the three prompt templates (rubric
//! generation, scoring instruction, scoring) under every prompting
//! condition. Templates are UTF-8 text assets with `{placeholder}`
//! slots; rendering is a pure function of its inputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{CandidateOutput, PromptCondition, Rubric, ScaleKind, ScoringMode, TaskSpec};

pub const GENERATION_TEMPLATE: &str = include_str!("../templates/generation.txt");
pub const INSTRUCTION_TEMPLATE: &str = include_str!("../templates/instruction.txt");
pub const SCORING_TEMPLATE: &str = include_str!("../templates/scoring.txt");

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("exemplar mismatch: {0}")]
    ExemplarMismatch(String),
    #[error("rubric has no scoring instruction")]
    MissingInstruction,
    #[error("demonstration mismatch: {0}")]
    DemoMismatch(String),
    #[error("template references unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("rendered prompt still contains placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),
    #[error("template load: {0}")]
    TemplateIo(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Generation,
    Instruction,
    Scoring,
}

/// Whether an exemplar stands as a good output, a bad output, or a
/// bare context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

/// Sampled material grounding a generation prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub context: String,
    pub output: String,
    pub polarity: Polarity,
    /// Item id the exemplar was drawn from.
    pub provenance: String,
}

/// A fully substituted prompt ready for the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub user_text: String,
    pub template_id: TemplateId,
    pub condition: PromptCondition,
}

/// The three templates, loadable from a directory and hash-pinned into
/// run manifests so prompt drift invalidates cached transcripts.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub generation: String,
    pub instruction: String,
    pub scoring: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            generation: GENERATION_TEMPLATE.to_string(),
            instruction: INSTRUCTION_TEMPLATE.to_string(),
            scoring: SCORING_TEMPLATE.to_string(),
        }
    }

    /// Load `generation.txt`, `instruction.txt`, `scoring.txt` from a
    /// directory.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| PromptError::TemplateIo(format!("{name}: {e}")))
        };
        Ok(Self {
            generation: read("generation.txt")?,
            instruction: read("instruction.txt")?,
            scoring: read("scoring.txt")?,
        })
    }

    /// Content hashes for provenance pinning.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        let digest = |text: &str| hex::encode(Sha256::digest(text.as_bytes()));
        BTreeMap::from([
            ("generation".to_string(), digest(&self.generation)),
            ("instruction".to_string(), digest(&self.instruction)),
            ("scoring".to_string(), digest(&self.scoring)),
        ])
    }
}

/// Single-pass `{placeholder}` substitution. Substituted values are
/// never rescanned, so braces inside task or candidate text survive
/// untouched.
fn render(template: &str, values: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let marker = regex::Regex::new(r"\{([a-z_]+)\}").expect("static regex");
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for caps in marker.captures_iter(template) {
        let whole = caps.get(0).expect("match");
        let name = caps.get(1).expect("group").as_str();
        out.push_str(&template[last..whole.start()]);
        match values.get(name) {
            Some(value) => out.push_str(value),
            None => return Err(PromptError::UnknownPlaceholder(name.to_string())),
        }
        last = whole.end();
    }
    out.push_str(&template[last..]);
    // Empty optional slots leave blank lines behind; collapse them.
    let collapsed = regex::Regex::new(r"\n{3,}")
        .expect("static regex")
        .replace_all(&out, "\n\n")
        .trim()
        .to_string();
    for name in values.keys() {
        let needle = format!("{{{name}}}");
        if collapsed.contains(&needle) {
            return Err(PromptError::UnresolvedPlaceholder(name.to_string()));
        }
    }
    Ok(collapsed)
}

fn numbered_contexts(exemplars: &[&Exemplar]) -> String {
    exemplars
        .iter()
        .enumerate()
        .map(|(i, e)| format!("Context {}:\n{}", i + 1, e.context))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Build the rubric-generation prompt for a task under one condition.
/// Task-only takes no exemplars; the context condition takes exactly
/// three bare contexts; the contrastive condition takes three contexts
/// each paired with one positive and one negative output.
pub fn build_generation_prompt(
    task: &TaskSpec,
    condition: &PromptCondition,
    exemplars: &[Exemplar],
    templates: &TemplateSet,
) -> Result<RenderedPrompt, PromptError> {
    use crate::domain::GenerationMode::*;
    let samples = match condition.generation_mode {
        TaskOnly => {
            if !exemplars.is_empty() {
                return Err(PromptError::ExemplarMismatch(format!(
                    "task-only prompt takes no exemplars, got {}",
                    exemplars.len()
                )));
            }
            String::new()
        }
        TaskPlusContexts => {
            if exemplars.len() != 3 {
                return Err(PromptError::ExemplarMismatch(format!(
                    "context condition needs 3 contexts, got {}",
                    exemplars.len()
                )));
            }
            if let Some(bad) = exemplars.iter().find(|e| e.polarity != Polarity::Neutral) {
                return Err(PromptError::ExemplarMismatch(format!(
                    "context condition takes neutral exemplars, got {:?} for item {}",
                    bad.polarity, bad.provenance
                )));
            }
            let refs: Vec<&Exemplar> = exemplars.iter().collect();
            format!(
                "Here are representative input contexts for this task:\n\n{}",
                numbered_contexts(&refs)
            )
        }
        TaskPlusContrastive => {
            // Group by context, preserving first-appearance order.
            let mut contexts: Vec<&str> = Vec::new();
            for e in exemplars {
                if !contexts.contains(&e.context.as_str()) {
                    contexts.push(&e.context);
                }
            }
            if contexts.len() != 3 {
                return Err(PromptError::ExemplarMismatch(format!(
                    "contrastive condition needs 3 contexts, got {}",
                    contexts.len()
                )));
            }
            let mut blocks = Vec::new();
            for (i, ctx) in contexts.iter().enumerate() {
                let pos: Vec<&Exemplar> = exemplars
                    .iter()
                    .filter(|e| e.context == *ctx && e.polarity == Polarity::Positive)
                    .collect();
                let neg: Vec<&Exemplar> = exemplars
                    .iter()
                    .filter(|e| e.context == *ctx && e.polarity == Polarity::Negative)
                    .collect();
                if pos.len() != 1 || neg.len() != 1 {
                    return Err(PromptError::ExemplarMismatch(format!(
                        "context {} needs exactly one positive and one negative output, got {}/{}",
                        i + 1,
                        pos.len(),
                        neg.len()
                    )));
                }
                blocks.push(format!(
                    "Context {}:\n{}\nGood output:\n{}\nBad output:\n{}",
                    i + 1,
                    ctx,
                    pos[0].output,
                    neg[0].output
                ));
            }
            format!(
                "Here are example contexts, each paired with one good and one bad output:\n\n{}",
                blocks.join("\n\n")
            )
        }
    };
    let values = BTreeMap::from([
        ("task_description", task.description.clone()),
        ("samples", samples),
    ]);
    Ok(RenderedPrompt {
        system_text: None,
        user_text: render(&templates.generation, &values)?,
        template_id: TemplateId::Generation,
        condition: *condition,
    })
}

/// Build the scoring-instruction prompt for one rubric.
pub fn build_instruction_prompt(
    rubric: &Rubric,
    templates: &TemplateSet,
    condition: &PromptCondition,
) -> Result<RenderedPrompt, PromptError> {
    let values = BTreeMap::from([
        ("metric", rubric.name.clone()),
        ("description", rubric.description.clone()),
    ]);
    Ok(RenderedPrompt {
        system_text: None,
        user_text: render(&templates.instruction, &values)?,
        template_id: TemplateId::Instruction,
        condition: *condition,
    })
}

fn format_demo_score(rubric: &Rubric, score: f64) -> String {
    match rubric.scale.kind {
        ScaleKind::Categorical => rubric
            .scale
            .nearest_label(score)
            .expect("categorical scale has labels")
            .to_string(),
        ScaleKind::Numeric => {
            let rounded = crate::stats::round_to_grain(score, rubric.scale.granularity());
            if rounded.fract() == 0.0 {
                format!("{}", rounded as i64)
            } else {
                format!("{rounded}")
            }
        }
    }
}

fn candidate_block(candidate: &CandidateOutput) -> String {
    match &candidate.context {
        Some(ctx) if !ctx.trim().is_empty() => {
            format!("Context:\n{}\nOutput:\n{}", ctx, candidate.text)
        }
        _ => candidate.text.clone(),
    }
}

/// Build the scoring prompt for one (rubric, candidate) pair. Few-shot
/// conditions render the demonstrations (output text plus score on the
/// rubric's native scale) into the additional-info slot; zero-shot
/// conditions must pass no demos.
pub fn build_scoring_prompt(
    task: &TaskSpec,
    rubric: &Rubric,
    candidate: &CandidateOutput,
    condition: &PromptCondition,
    demos: &[(CandidateOutput, f64)],
    templates: &TemplateSet,
) -> Result<RenderedPrompt, PromptError> {
    let steps = rubric
        .instruction
        .as_deref()
        .ok_or(PromptError::MissingInstruction)?;
    let additional_info = match condition.scoring_mode {
        ScoringMode::ZeroShot => {
            if !demos.is_empty() {
                return Err(PromptError::DemoMismatch(format!(
                    "zero-shot scoring takes no demonstrations, got {}",
                    demos.len()
                )));
            }
            String::new()
        }
        ScoringMode::FewShot => {
            if demos.is_empty() {
                return Err(PromptError::DemoMismatch(
                    "few-shot scoring needs at least one demonstration".into(),
                ));
            }
            let blocks: Vec<String> = demos
                .iter()
                .map(|(output, score)| {
                    format!(
                        "Output:\n{}\nScore: {}",
                        output.text,
                        format_demo_score(rubric, *score)
                    )
                })
                .collect();
            format!(
                "Here are sample outputs with reference scores:\n\n{}",
                blocks.join("\n\n")
            )
        }
    };
    let criterion = format!(
        "{} (Scale: {}) - {}",
        rubric.name,
        rubric.scale.render(),
        rubric.description
    );
    let values = BTreeMap::from([
        ("task_description", task.description.clone()),
        ("criterion", criterion),
        ("steps", steps.to_string()),
        ("additional_info", additional_info),
        ("sample", candidate_block(candidate)),
        ("criterion_name", rubric.name.clone()),
    ]);
    Ok(RenderedPrompt {
        system_text: None,
        user_text: render(&templates.scoring, &values)?,
        template_id: TemplateId::Scoring,
        condition: *condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GenerationMode, RubricOrigin, RubricSource, Scale};

    fn task() -> TaskSpec {
        TaskSpec::new("t1", "Generate helpful responses to user prompts.", "helpsteer2").unwrap()
    }

    fn condition(gen: GenerationMode, score: ScoringMode) -> PromptCondition {
        PromptCondition::new(gen, score, RubricSource::LlmGenerated)
    }

    fn neutral(ctx: &str, id: &str) -> Exemplar {
        Exemplar {
            context: ctx.into(),
            output: String::new(),
            polarity: Polarity::Neutral,
            provenance: id.into(),
        }
    }

    fn paired(ctx: &str, polarity: Polarity, id: &str) -> Exemplar {
        Exemplar {
            context: ctx.into(),
            output: format!("output-{id}"),
            polarity,
            provenance: id.into(),
        }
    }

    #[test]
    fn task_only_has_task_text_and_no_sample_blocks() {
        let p = build_generation_prompt(
            &task(),
            &condition(GenerationMode::TaskOnly, ScoringMode::ZeroShot),
            &[],
            &TemplateSet::builtin(),
        )
        .unwrap();
        assert!(p.user_text.contains("Generate helpful responses"));
        assert!(!p.user_text.contains("Context 1"));
        assert!(p.user_text.contains("Name, Description, Scale"));
    }

    #[test]
    fn task_only_rejects_exemplars() {
        let err = build_generation_prompt(
            &task(),
            &condition(GenerationMode::TaskOnly, ScoringMode::ZeroShot),
            &[neutral("c", "i1")],
            &TemplateSet::builtin(),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::ExemplarMismatch(_)));
    }

    #[test]
    fn contexts_render_three_blocks_in_input_order() {
        let exemplars = [neutral("first", "i1"), neutral("second", "i2"), neutral("third", "i3")];
        let p = build_generation_prompt(
            &task(),
            &condition(GenerationMode::TaskPlusContexts, ScoringMode::ZeroShot),
            &exemplars,
            &TemplateSet::builtin(),
        )
        .unwrap();
        let pos1 = p.user_text.find("Context 1:\nfirst").unwrap();
        let pos2 = p.user_text.find("Context 2:\nsecond").unwrap();
        let pos3 = p.user_text.find("Context 3:\nthird").unwrap();
        assert!(pos1 < pos2 && pos2 < pos3);
        assert_eq!(p.user_text.matches("Context ").count(), 3);
    }

    #[test]
    fn contexts_require_exactly_three() {
        let err = build_generation_prompt(
            &task(),
            &condition(GenerationMode::TaskPlusContexts, ScoringMode::ZeroShot),
            &[neutral("a", "i1"), neutral("b", "i2")],
            &TemplateSet::builtin(),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::ExemplarMismatch(_)));
    }

    #[test]
    fn contrastive_missing_negative_is_rejected() {
        let exemplars = [
            paired("c1", Polarity::Positive, "i1"),
            paired("c1", Polarity::Negative, "i2"),
            paired("c2", Polarity::Positive, "i3"),
            paired("c2", Polarity::Negative, "i4"),
            paired("c3", Polarity::Positive, "i5"),
        ];
        let err = build_generation_prompt(
            &task(),
            &condition(GenerationMode::TaskPlusContrastive, ScoringMode::ZeroShot),
            &exemplars,
            &TemplateSet::builtin(),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::ExemplarMismatch(_)));
    }

    #[test]
    fn contrastive_renders_good_and_bad_outputs() {
        let exemplars = [
            paired("c1", Polarity::Positive, "i1"),
            paired("c1", Polarity::Negative, "i2"),
            paired("c2", Polarity::Positive, "i3"),
            paired("c2", Polarity::Negative, "i4"),
            paired("c3", Polarity::Positive, "i5"),
            paired("c3", Polarity::Negative, "i6"),
        ];
        let p = build_generation_prompt(
            &task(),
            &condition(GenerationMode::TaskPlusContrastive, ScoringMode::ZeroShot),
            &exemplars,
            &TemplateSet::builtin(),
        )
        .unwrap();
        assert_eq!(p.user_text.matches("Good output:").count(), 3);
        assert_eq!(p.user_text.matches("Bad output:").count(), 3);
        assert!(p.user_text.contains("output-i1"));
    }

    fn creativity() -> Rubric {
        Rubric::new(
            "Creativity",
            "Assesses the originality of the response and whether it introduces novel ideas or perspectives.",
            Scale::one_to_five(),
            RubricOrigin::Model("gpt-4o".into()),
        )
        .unwrap()
    }

    #[test]
    fn instruction_prompt_contains_name_and_description_verbatim() {
        let p = build_instruction_prompt(
            &creativity(),
            &TemplateSet::builtin(),
            &condition(GenerationMode::TaskOnly, ScoringMode::ZeroShot),
        )
        .unwrap();
        assert!(p.user_text.contains("Creativity"));
        assert!(p.user_text.contains("Assesses the originality"));
    }

    #[test]
    fn instruction_prompts_differ_only_in_changed_slot() {
        let c = condition(GenerationMode::TaskOnly, ScoringMode::ZeroShot);
        let a = build_instruction_prompt(&creativity(), &TemplateSet::builtin(), &c).unwrap();
        let mut other = creativity();
        other.description = "Assesses humor instead.".into();
        let b = build_instruction_prompt(&other, &TemplateSet::builtin(), &c).unwrap();
        assert_ne!(a.user_text, b.user_text);
        assert_eq!(
            a.user_text.replace("Assesses the originality of the response and whether it introduces novel ideas or perspectives.", "X"),
            b.user_text.replace("Assesses humor instead.", "X"),
        );
    }

    fn candidate() -> CandidateOutput {
        CandidateOutput {
            item_id: "i1".into(),
            context: None,
            text: "Once upon a time, a mirror learned to dream.".into(),
            human_scores: Default::default(),
        }
    }

    #[test]
    fn zero_shot_with_demos_is_a_contract_violation() {
        let rubric = creativity().with_instruction("Judge novelty. Score 1 to 5.");
        let err = build_scoring_prompt(
            &task(),
            &rubric,
            &candidate(),
            &condition(GenerationMode::TaskOnly, ScoringMode::ZeroShot),
            &[(candidate(), 4.0)],
            &TemplateSet::builtin(),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::DemoMismatch(_)));
    }

    #[test]
    fn few_shot_renders_each_demo_with_its_score() {
        let rubric = creativity().with_instruction("Judge novelty. Score 1 to 5.");
        let demos = vec![
            (
                CandidateOutput {
                    item_id: "d1".into(),
                    context: None,
                    text: "demo one".into(),
                    human_scores: Default::default(),
                },
                5.0,
            ),
            (
                CandidateOutput {
                    item_id: "d2".into(),
                    context: None,
                    text: "demo two".into(),
                    human_scores: Default::default(),
                },
                2.0,
            ),
        ];
        let p = build_scoring_prompt(
            &task(),
            &rubric,
            &candidate(),
            &condition(GenerationMode::TaskOnly, ScoringMode::FewShot),
            &demos,
            &TemplateSet::builtin(),
        )
        .unwrap();
        assert_eq!(p.user_text.matches("Score: ").count(), 2);
        assert!(p.user_text.contains("demo one\nScore: 5"));
        assert!(p.user_text.contains("demo two\nScore: 2"));
    }

    #[test]
    fn few_shot_demo_scores_render_as_labels_on_categorical_scales() {
        let rubric = Rubric::new(
            "Helpfulness",
            "How helpful the answer is.",
            Scale::categorical(["low", "medium", "high"], 1.0, 5.0).unwrap(),
            RubricOrigin::Model("m".into()),
        )
        .unwrap()
        .with_instruction("Rate helpfulness.");
        let p = build_scoring_prompt(
            &task(),
            &rubric,
            &candidate(),
            &condition(GenerationMode::TaskOnly, ScoringMode::FewShot),
            &[(candidate(), 5.0)],
            &TemplateSet::builtin(),
        )
        .unwrap();
        assert!(p.user_text.contains("Score: high"));
    }

    #[test]
    fn missing_instruction_is_rejected() {
        let err = build_scoring_prompt(
            &task(),
            &creativity(),
            &candidate(),
            &condition(GenerationMode::TaskOnly, ScoringMode::ZeroShot),
            &[],
            &TemplateSet::builtin(),
        )
        .unwrap_err();
        assert_eq!(err, PromptError::MissingInstruction);
    }

    #[test]
    fn rendering_is_pure() {
        let rubric = creativity().with_instruction("Judge novelty.");
        let c = condition(GenerationMode::TaskOnly, ScoringMode::ZeroShot);
        let a = build_scoring_prompt(&task(), &rubric, &candidate(), &c, &[], &TemplateSet::builtin())
            .unwrap();
        let b = build_scoring_prompt(&task(), &rubric, &candidate(), &c, &[], &TemplateSet::builtin())
            .unwrap();
        assert_eq!(a.user_text, b.user_text);
    }

    #[test]
    fn no_template_markers_survive_rendering() {
        let rubric = creativity().with_instruction("Judge novelty.");
        let c = condition(GenerationMode::TaskOnly, ScoringMode::ZeroShot);
        let p = build_scoring_prompt(&task(), &rubric, &candidate(), &c, &[], &TemplateSet::builtin())
            .unwrap();
        for marker in ["{task_description}", "{criterion}", "{steps}", "{additional_info}", "{sample}", "{criterion_name}"] {
            assert!(!p.user_text.contains(marker));
        }
    }

    #[test]
    fn braces_in_candidate_text_survive_untouched() {
        let rubric = creativity().with_instruction("Judge novelty.");
        let c = condition(GenerationMode::TaskOnly, ScoringMode::ZeroShot);
        let mut cand = candidate();
        cand.text = "fn main() { println!(\"{x}\"); }".into();
        let p = build_scoring_prompt(&task(), &rubric, &cand, &c, &[], &TemplateSet::builtin()).unwrap();
        assert!(p.user_text.contains("println!(\"{x}\")"));
    }

    #[test]
    fn unknown_placeholder_in_custom_template_errors() {
        let mut templates = TemplateSet::builtin();
        templates.instruction = "Do the thing for {metric} using {nonexistent_slot}.".into();
        let err = build_instruction_prompt(
            &creativity(),
            &templates,
            &condition(GenerationMode::TaskOnly, ScoringMode::ZeroShot),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::UnknownPlaceholder(_)));
    }

    #[test]
    fn template_hashes_pin_content() {
        let a = TemplateSet::builtin().hashes();
        let mut edited = TemplateSet::builtin();
        edited.scoring.push_str("\nextra line");
        let b = edited.hashes();
        assert_eq!(a["generation"], b["generation"]);
        assert_ne!(a["scoring"], b["scoring"]);
    }
}
