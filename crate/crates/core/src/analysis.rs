//! Rubric-quality statistics: Breadth, Unique (embedding-based semantic
//! deduplication), Align% (LLM tagging against the dataset's human
//! rubric), and task-specificity labeling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::HumanRubricSet;
use crate::domain::{normalize_text, Rubric, TaskSpec};
use crate::gateway::{cosine, DecodingParams, Gateway, GatewayError};
use crate::pipeline::parse::extract_json;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no rubrics to analyze")]
    NoRubrics,
}

/// Result of merging semantically duplicate rubrics at cosine > τ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupResult {
    pub unique_rubrics: Vec<Rubric>,
    /// Every input rubric_id maps to its cluster's canonical id;
    /// canonical ids map to themselves.
    pub merge_map: BTreeMap<String, String>,
    pub threshold: f64,
    /// Per-rubric embedding failures (rubric kept unmerged).
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Single-linkage clustering over pairwise cosine similarity: indices
/// land in one cluster whenever a chain of pairs above τ connects them.
/// Returns, for each input, the index of its cluster's earliest member.
/// Entries without a vector stay singletons.
pub fn cluster_by_cosine(vectors: &[Option<Vec<f64>>], tau: f64) -> Vec<usize> {
    let n = vectors.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (Some(a), Some(b)) = (&vectors[i], &vectors[j]) else {
                continue;
            };
            let va = crate::gateway::EmbeddingVector {
                values: a.clone(),
                model_id: String::new(),
            };
            let vb = crate::gateway::EmbeddingVector {
                values: b.clone(),
                model_id: String::new(),
            };
            let Ok(sim) = cosine(&va, &vb) else { continue };
            if sim > tau {
                let (ra, rb) = (find(&mut parent, i), find(&mut parent, j));
                if ra != rb {
                    // Earliest index becomes the root, so canonical
                    // representatives preserve generation order.
                    let (lo, hi) = (ra.min(rb), ra.max(rb));
                    parent[hi] = lo;
                }
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

/// Merge rubrics whose description embeddings exceed cosine τ
/// (single linkage); the canonical representative of each cluster is
/// its first-generated member.
pub fn dedup(
    rubrics: &[Rubric],
    gateway: &Gateway,
    embedding_model: &str,
    tau: f64,
) -> Result<DedupResult, AnalysisError> {
    if rubrics.is_empty() {
        return Err(AnalysisError::NoRubrics);
    }
    let mut vectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(rubrics.len());
    let mut warnings = Vec::new();
    for rubric in rubrics {
        match gateway.embed(embedding_model, std::slice::from_ref(&rubric.description)) {
            Ok(mut v) => vectors.push(Some(v.remove(0).values)),
            Err(e) => {
                warnings.push(format!(
                    "embedding failed for rubric {:?} ({}): {e}; kept unmerged",
                    rubric.name, rubric.rubric_id
                ));
                vectors.push(None);
            }
        }
    }
    let canon = cluster_by_cosine(&vectors, tau);
    let mut merge_map = BTreeMap::new();
    let mut unique_rubrics = Vec::new();
    for (i, rubric) in rubrics.iter().enumerate() {
        let canonical = &rubrics[canon[i]];
        merge_map.insert(rubric.rubric_id.clone(), canonical.rubric_id.clone());
        if canon[i] == i {
            unique_rubrics.push(rubric.clone());
        }
    }
    Ok(DedupResult {
        unique_rubrics,
        merge_map,
        threshold: tau,
        warnings,
    })
}

/// Align% = 100 × (1 − unseen/unique).
pub fn align_pct(unique: usize, unseen: usize) -> f64 {
    debug_assert!(unseen <= unique && unique > 0);
    100.0 * (1.0 - unseen as f64 / unique as f64)
}

/// One generated criterion tagged against the human rubric items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTag {
    pub rubric_id: String,
    pub rubric_name: String,
    /// Human attribute names whose descriptions substantially cover
    /// this criterion; empty iff unseen.
    pub matched: Vec<String>,
    pub unseen: bool,
    /// The tagger's stated reason, kept for human audit.
    pub justification: String,
}

fn tagger_params() -> DecodingParams {
    DecodingParams::new(0.0, 1.0, 256).expect("valid")
}

fn tagger_prompt(task: &TaskSpec, human: &HumanRubricSet, rubric: &Rubric) -> String {
    let mut teacher = String::new();
    for h in &human.rubrics {
        teacher.push_str(&format!("- {}: {}\n", h.name, h.description));
    }
    format!(
        "You are auditing evaluation criteria for the following task.\n\
         Task description: {}\n\n\
         Human rubric items (teacher):\n{}\n\
         Candidate criterion (student):\n{}: {}\n\n\
         Decide which human rubric items, if any, substantially cover the candidate criterion.\n\
         Respond in JSON with the fields \"labels\" (an array of human rubric item names; use [\"other aspect\"] when the criterion is a new aspect not covered by any item) and \"justification\" (one sentence).",
        task.description, teacher, rubric.name, rubric.description
    )
}

fn parse_tagger_reply(text: &str, human_names: &[String]) -> Result<(Vec<String>, String), String> {
    let Some(serde_json::Value::Object(obj)) = extract_json(text) else {
        return Err("no JSON object in tagger reply".into());
    };
    let labels = obj
        .get("labels")
        .and_then(|v| v.as_array())
        .ok_or("tagger reply has no labels array")?;
    let mut matched = Vec::new();
    for label in labels {
        let Some(label) = label.as_str() else { continue };
        let folded = normalize_text(label);
        if folded == "other aspect" || folded == "other" {
            continue;
        }
        if let Some(name) = human_names.iter().find(|n| normalize_text(n) == folded) {
            if !matched.contains(name) {
                matched.push(name.clone());
            }
        }
    }
    let justification = obj
        .get("justification")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    Ok((matched, justification))
}

/// Tag each unique criterion with the human rubric items that
/// substantially cover it, using an LLM tagger at temperature 0.
/// A tagger that fails all attempts leaves the criterion counted as
/// unseen, with a diagnostic justification.
pub fn tag_alignment(
    unique: &[Rubric],
    human: &HumanRubricSet,
    task: &TaskSpec,
    gateway: &Gateway,
    tagger_model: &str,
) -> Result<(Vec<AlignmentTag>, f64), AnalysisError> {
    if unique.is_empty() {
        return Err(AnalysisError::NoRubrics);
    }
    let human_names: Vec<String> = human.rubrics.iter().map(|r| r.name.clone()).collect();
    let mut tags = Vec::new();
    for rubric in unique {
        let prompt = tagger_prompt(task, human, rubric);
        let attempted = crate::pipeline::attempt_with_reprompt(
            gateway,
            tagger_model,
            &prompt,
            &tagger_params(),
            Some("alignment_tags"),
            None,
            "a JSON object with the fields \"labels\" and \"justification\"",
            crate::pipeline::MAX_ATTEMPTS,
            |text| parse_tagger_reply(text, &human_names),
        )?;
        let tag = match attempted.outcome {
            Ok((matched, justification)) => AlignmentTag {
                rubric_id: rubric.rubric_id.clone(),
                rubric_name: rubric.name.clone(),
                unseen: matched.is_empty(),
                matched,
                justification,
            },
            Err(err) => AlignmentTag {
                rubric_id: rubric.rubric_id.clone(),
                rubric_name: rubric.name.clone(),
                matched: Vec::new(),
                unseen: true,
                justification: format!("tagger failed after {} attempts: {err}", attempted.attempts),
            },
        };
        tags.push(tag);
    }
    let unseen = tags.iter().filter(|t| t.unseen).count();
    Ok((tags, align_pct(unique.len(), unseen)))
}

/// A rubric labeled task-specific or generic, with the tagger's reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpecificLabel {
    pub rubric_id: String,
    pub rubric_name: String,
    pub task_specific: bool,
    pub justification: String,
}

fn specificity_prompt(task: &TaskSpec, rubric: &Rubric) -> String {
    format!(
        "Task description: {}\n\n\
         Criterion: {}: {}\n\n\
         Is this criterion task-specific (it only makes sense for this particular task or domain) or generic (it applies to most text generation tasks, like fluency or clarity)?\n\
         Respond in JSON with the fields \"label\" (either \"task_specific\" or \"generic\") and \"justification\" (one sentence).",
        task.description, rubric.name, rubric.description
    )
}

fn parse_specificity_reply(text: &str) -> Result<(bool, String), String> {
    let Some(serde_json::Value::Object(obj)) = extract_json(text) else {
        return Err("no JSON object in reply".into());
    };
    let label = obj
        .get("label")
        .and_then(|v| v.as_str())
        .map(normalize_text)
        .ok_or("reply has no label field")?;
    let task_specific = match label.as_str() {
        "task_specific" | "task-specific" | "task specific" => true,
        "generic" => false,
        other => return Err(format!("unknown label {other:?}")),
    };
    let justification = obj
        .get("justification")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    Ok((task_specific, justification))
}

/// Label each rubric task-specific vs generic with a one-line stored
/// justification. An empty input yields empty labels.
pub fn classify_task_specific(
    unique: &[Rubric],
    task: &TaskSpec,
    gateway: &Gateway,
    tagger_model: &str,
) -> Result<Vec<TaskSpecificLabel>, AnalysisError> {
    let mut labels = Vec::new();
    for rubric in unique {
        let prompt = specificity_prompt(task, rubric);
        let attempted = crate::pipeline::attempt_with_reprompt(
            gateway,
            tagger_model,
            &prompt,
            &tagger_params(),
            Some("task_specificity"),
            None,
            "a JSON object with the fields \"label\" and \"justification\"",
            crate::pipeline::MAX_ATTEMPTS,
            parse_specificity_reply,
        )?;
        let (task_specific, justification) = match attempted.outcome {
            Ok(pair) => pair,
            Err(err) => (
                false,
                format!("tagger failed after {} attempts: {err}", attempted.attempts),
            ),
        };
        labels.push(TaskSpecificLabel {
            rubric_id: rubric.rubric_id.clone(),
            rubric_name: rubric.name.clone(),
            task_specific,
            justification,
        });
    }
    Ok(labels)
}

/// Breadth, Unique, and Align% for one generated rubric set, mirroring
/// the criteria-analysis table layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricQualityReport {
    pub breadth: usize,
    pub unique_count: usize,
    pub unique_pct: f64,
    pub align_pct: f64,
    pub task_specific: Vec<String>,
}

/// Full quality analysis of one rubric set: dedup, alignment tagging,
/// and task-specificity labels.
pub fn quality_report(
    rubrics: &[Rubric],
    human: &HumanRubricSet,
    task: &TaskSpec,
    gateway: &Gateway,
    embedding_model: &str,
    tagger_model: &str,
    tau: f64,
) -> Result<(RubricQualityReport, DedupResult, Vec<AlignmentTag>, Vec<TaskSpecificLabel>), AnalysisError> {
    let dedup_result = dedup(rubrics, gateway, embedding_model, tau)?;
    let (tags, align) = tag_alignment(&dedup_result.unique_rubrics, human, task, gateway, tagger_model)?;
    let labels = classify_task_specific(&dedup_result.unique_rubrics, task, gateway, tagger_model)?;
    let breadth = rubrics.len();
    let unique_count = dedup_result.unique_rubrics.len();
    let report = RubricQualityReport {
        breadth,
        unique_count,
        unique_pct: 100.0 * unique_count as f64 / breadth as f64,
        align_pct: align,
        task_specific: labels
            .iter()
            .filter(|l| l.task_specific)
            .map(|l| l.rubric_name.clone())
            .collect(),
    };
    Ok((report, dedup_result, tags, labels))
}
