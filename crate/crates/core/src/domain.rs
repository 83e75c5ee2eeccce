//! Core domain types: tasks, prompting conditions, rubrics, candidate
//! outputs, and score records, plus the scale-normalization rules every
//! other module depends on.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Errors raised by domain-level validation and score normalization.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DomainError {
    #[error("unparseable score token: {0:?}")]
    UnparseableScore(String),
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("invalid rubric: {0}")]
    InvalidRubric(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

/// A task description `t` extracted from a dataset's source paper.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    pub dataset_id: String,
}

impl TaskSpec {
    pub fn new(
        task_id: impl Into<String>,
        description: impl Into<String>,
        dataset_id: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let spec = Self {
            task_id: task_id.into(),
            description: description.into(),
            dataset_id: dataset_id.into(),
        };
        if spec.description.trim().is_empty() {
            return Err(DomainError::InvalidTask("description is empty".into()));
        }
        Ok(spec)
    }
}

/// How the rubric-generation prompt is grounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    TaskOnly,
    TaskPlusContexts,
    TaskPlusContrastive,
}

impl GenerationMode {
    pub const ALL: [GenerationMode; 3] = [
        GenerationMode::TaskOnly,
        GenerationMode::TaskPlusContexts,
        GenerationMode::TaskPlusContrastive,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            GenerationMode::TaskOnly => "task_only",
            GenerationMode::TaskPlusContexts => "task_plus_contexts",
            GenerationMode::TaskPlusContrastive => "task_plus_contrastive",
        }
    }
}

/// Whether scoring prompts carry demonstrations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    ZeroShot,
    FewShot,
}

impl ScoringMode {
    pub const ALL: [ScoringMode; 2] = [ScoringMode::ZeroShot, ScoringMode::FewShot];

    pub fn slug(self) -> &'static str {
        match self {
            ScoringMode::ZeroShot => "zero_shot",
            ScoringMode::FewShot => "few_shot",
        }
    }
}

/// Where the rubric under evaluation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricSource {
    LlmGenerated,
    HumanDefined,
}

impl RubricSource {
    pub fn slug(self) -> &'static str {
        match self {
            RubricSource::LlmGenerated => "llm",
            RubricSource::HumanDefined => "human",
        }
    }
}

/// The prompting condition π: generation variant, scoring variant, and
/// rubric source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PromptCondition {
    pub generation_mode: GenerationMode,
    pub scoring_mode: ScoringMode,
    pub rubric_source: RubricSource,
}

impl PromptCondition {
    pub fn new(
        generation_mode: GenerationMode,
        scoring_mode: ScoringMode,
        rubric_source: RubricSource,
    ) -> Self {
        Self {
            generation_mode,
            scoring_mode,
            rubric_source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    Numeric,
    Categorical,
}

/// A scoring scale: either a numeric range (default 1–5) or an ordered
/// list of categorical labels mapped onto evenly spaced points of the
/// numeric range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub kind: ScaleKind,
    pub numeric_min: f64,
    pub numeric_max: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl Scale {
    pub fn numeric(min: f64, max: f64) -> Result<Self, DomainError> {
        if !min.is_finite() || !max.is_finite() || min >= max {
            return Err(DomainError::InvalidScale(format!(
                "numeric scale requires min < max, got {min}..{max}"
            )));
        }
        Ok(Self {
            kind: ScaleKind::Numeric,
            numeric_min: min,
            numeric_max: max,
            categories: Vec::new(),
        })
    }

    /// The paper's default 1–5 numeric scale.
    pub fn one_to_five() -> Self {
        Self::numeric(1.0, 5.0).expect("1..5 is valid")
    }

    /// Ordered labels mapped onto evenly spaced points of `[min, max]`,
    /// lowest label first.
    pub fn categorical<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        min: f64,
        max: f64,
    ) -> Result<Self, DomainError> {
        if !min.is_finite() || !max.is_finite() || min >= max {
            return Err(DomainError::InvalidScale(format!(
                "categorical scale requires min < max, got {min}..{max}"
            )));
        }
        let categories: Vec<String> = labels.into_iter().map(Into::into).collect();
        if categories.len() < 2 {
            return Err(DomainError::InvalidScale(
                "categorical scale requires at least 2 labels".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for label in &categories {
            if !seen.insert(normalize_text(label)) {
                return Err(DomainError::InvalidScale(format!(
                    "duplicate label {label:?}"
                )));
            }
        }
        Ok(Self {
            kind: ScaleKind::Categorical,
            numeric_min: min,
            numeric_max: max,
            categories,
        })
    }

    /// Numeric value of the i-th label: evenly spaced on `[min, max]`,
    /// strictly monotone in label order.
    pub fn label_value(&self, index: usize) -> f64 {
        let k = self.categories.len();
        debug_assert!(self.kind == ScaleKind::Categorical && index < k);
        self.numeric_min
            + index as f64 * (self.numeric_max - self.numeric_min) / (k as f64 - 1.0)
    }

    /// Label whose mapped value is closest to `value` (lower index wins ties).
    pub fn nearest_label(&self, value: f64) -> Option<&str> {
        if self.kind != ScaleKind::Categorical {
            return None;
        }
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for i in 0..self.categories.len() {
            let d = (value - self.label_value(i)).abs();
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        Some(&self.categories[best])
    }

    /// Smallest step between adjacent representable scores.
    pub fn granularity(&self) -> f64 {
        match self.kind {
            ScaleKind::Numeric => 1.0,
            ScaleKind::Categorical => {
                (self.numeric_max - self.numeric_min) / (self.categories.len() as f64 - 1.0)
            }
        }
    }

    /// Human-readable form used when rendering prompts, e.g. `1-5` or
    /// `low/medium/high`.
    pub fn render(&self) -> String {
        match self.kind {
            ScaleKind::Numeric => format!("{}-{}", fmt_num(self.numeric_min), fmt_num(self.numeric_max)),
            ScaleKind::Categorical => self.categories.join("/"),
        }
    }

    /// Canonical text used in fingerprints: case-folded, whitespace-collapsed.
    fn canonical(&self) -> String {
        match self.kind {
            ScaleKind::Numeric => format!(
                "numeric:{}..{}",
                fmt_num(self.numeric_min),
                fmt_num(self.numeric_max)
            ),
            ScaleKind::Categorical => format!(
                "categorical:{}..{}:{}",
                fmt_num(self.numeric_min),
                fmt_num(self.numeric_max),
                self.categories
                    .iter()
                    .map(|c| normalize_text(c))
                    .collect::<Vec<_>>()
                    .join("|")
            ),
        }
    }

    /// Lenient parse of a scale as emitted by a judge model: a numeric
    /// range such as `"1-5"`, `"1 to 5"`, or `"1-5 (1 = poor)"`, or a
    /// label list such as `["low", "medium", "high"]` or `"low/medium/high"`.
    pub fn parse_lenient(value: &serde_json::Value) -> Result<Self, DomainError> {
        match value {
            serde_json::Value::String(s) => Self::parse_lenient_str(s),
            serde_json::Value::Array(items) => {
                let labels: Option<Vec<String>> = items
                    .iter()
                    .map(|v| v.as_str().map(|s| s.trim().to_string()))
                    .collect();
                match labels {
                    Some(labels) if labels.len() >= 2 => Self::categorical(labels, 1.0, 5.0),
                    _ => Err(DomainError::InvalidScale(format!(
                        "unrecognized scale array: {value}"
                    ))),
                }
            }
            serde_json::Value::Object(map) => {
                // Tolerate {"min": 1, "max": 5} style objects.
                let min = map.get("min").and_then(|v| v.as_f64());
                let max = map.get("max").and_then(|v| v.as_f64());
                match (min, max) {
                    (Some(min), Some(max)) => Self::numeric(min, max),
                    _ => Err(DomainError::InvalidScale(format!(
                        "unrecognized scale object: {value}"
                    ))),
                }
            }
            _ => Err(DomainError::InvalidScale(format!(
                "unrecognized scale value: {value}"
            ))),
        }
    }

    fn parse_lenient_str(s: &str) -> Result<Self, DomainError> {
        let trimmed = s.trim();
        // Numeric range: "1-5", "1–5", "1 to 5", optionally followed by prose.
        let range = regex::Regex::new(r"^\s*(\d+(?:\.\d+)?)\s*(?:-|–|—|to)\s*(\d+(?:\.\d+)?)")
            .expect("static regex");
        if let Some(caps) = range.captures(trimmed) {
            let min: f64 = caps[1].parse().unwrap();
            let max: f64 = caps[2].parse().unwrap();
            return Self::numeric(min, max);
        }
        // Label list: "low/medium/high" or "low, medium, high".
        for sep in ['/', ','] {
            if trimmed.contains(sep) {
                let labels: Vec<String> = trimmed
                    .split(sep)
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect();
                if labels.len() >= 2 && labels.iter().all(|l| l.parse::<f64>().is_err()) {
                    return Self::categorical(labels, 1.0, 5.0);
                }
            }
        }
        Err(DomainError::InvalidScale(format!(
            "unrecognized scale text: {trimmed:?}"
        )))
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render())
    }
}

/// Provenance of a rubric: generated by a model or taken from a
/// dataset's human annotation guidelines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricOrigin {
    Model(String),
    Human(String),
}

/// One evaluation criterion: name, description, scale, and (once
/// generated) its scoring instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub rubric_id: String,
    pub name: String,
    pub description: String,
    pub scale: Scale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub origin: RubricOrigin,
}

impl Rubric {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        scale: Scale,
        origin: RubricOrigin,
    ) -> Result<Self, DomainError> {
        let name = name.into();
        let description = description.into();
        if name.trim().is_empty() {
            return Err(DomainError::InvalidRubric("name is empty".into()));
        }
        if description.trim().is_empty() {
            return Err(DomainError::InvalidRubric("description is empty".into()));
        }
        let mut rubric = Self {
            rubric_id: String::new(),
            name,
            description,
            scale,
            instruction: None,
            origin,
        };
        rubric.rubric_id = rubric_fingerprint(&rubric);
        Ok(rubric)
    }

    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.instruction = Some(instruction.into());
        self
    }
}

/// Deterministic content hash of a rubric over its case-folded,
/// whitespace-collapsed (name, description, scale). Stable across
/// conditions and transfer runs so rubrics stay joinable.
pub fn rubric_fingerprint(rubric: &Rubric) -> String {
    let mut hasher = Sha256::new();
    hasher.update(normalize_text(&rubric.name));
    hasher.update([0x1f]);
    hasher.update(normalize_text(&rubric.description));
    hasher.update([0x1f]);
    hasher.update(rubric.scale.canonical());
    let digest = hasher.finalize();
    hex::encode(&digest[..8])
}

/// The ordered set M of rubrics generated (or adopted) for one task
/// under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricSet {
    pub rubrics: Vec<Rubric>,
    pub condition: PromptCondition,
    pub task: TaskSpec,
    pub generator_model: String,
}

impl RubricSet {
    pub fn new(
        rubrics: Vec<Rubric>,
        condition: PromptCondition,
        task: TaskSpec,
        generator_model: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let mut seen = std::collections::BTreeSet::new();
        for rubric in &rubrics {
            if !seen.insert(rubric.rubric_id.clone()) {
                return Err(DomainError::InvalidRubric(format!(
                    "duplicate rubric_id {} ({:?})",
                    rubric.rubric_id, rubric.name
                )));
            }
        }
        Ok(Self {
            rubrics,
            condition,
            task,
            generator_model: generator_model.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.rubrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rubrics.is_empty()
    }
}

/// One candidate output y_j with its per-attribute human gold ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutput {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub text: String,
    #[serde(default)]
    pub human_scores: BTreeMap<String, f64>,
}

/// One (rubric, candidate output) judgment: reasoning r and score s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub rubric_id: String,
    pub item_id: String,
    pub reasoning: String,
    /// Score token exactly as emitted by the judge, before normalization.
    pub raw_score: String,
    pub score: f64,
    /// True when the raw numeral fell outside the scale and was clamped.
    #[serde(default)]
    pub clamped: bool,
    pub judge_model: String,
    pub condition: PromptCondition,
    pub attempt_count: u32,
}

/// Result of normalizing a raw score token against a scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedScore {
    pub value: f64,
    /// Set when an out-of-range numeral was clamped to the scale bounds.
    pub clamped: bool,
}

/// Map a parsed score token (numeral or category label) onto the scale's
/// numeric range. Out-of-range numerals are clamped and flagged rather
/// than rejected; tokens matching neither a numeral nor a known label
/// are `UnparseableScore` and the caller re-prompts.
pub fn normalize_score(raw: &str, scale: &Scale) -> Result<NormalizedScore, DomainError> {
    let token = raw.trim().trim_end_matches(['.', ',']);
    if token.is_empty() {
        return Err(DomainError::UnparseableScore(raw.to_string()));
    }
    if let Ok(value) = token.parse::<f64>() {
        if !value.is_finite() {
            return Err(DomainError::UnparseableScore(raw.to_string()));
        }
        let clamped_value = value.clamp(scale.numeric_min, scale.numeric_max);
        return Ok(NormalizedScore {
            value: clamped_value,
            clamped: clamped_value != value,
        });
    }
    if scale.kind == ScaleKind::Categorical {
        let folded = normalize_text(token);
        for (i, label) in scale.categories.iter().enumerate() {
            if normalize_text(label) == folded {
                return Ok(NormalizedScore {
                    value: scale.label_value(i),
                    clamped: false,
                });
            }
        }
    }
    Err(DomainError::UnparseableScore(raw.to_string()))
}

/// Case-fold and collapse all whitespace runs to single spaces.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn low_med_high() -> Scale {
        Scale::categorical(["low", "medium", "high"], 1.0, 5.0).unwrap()
    }

    #[test]
    fn numeral_on_numeric_scale_is_identity() {
        let s = Scale::one_to_five();
        let n = normalize_score("4", &s).unwrap();
        assert_eq!(n.value, 4.0);
        assert!(!n.clamped);
    }

    #[test]
    fn top_category_maps_to_scale_max() {
        let n = normalize_score("high", &low_med_high()).unwrap();
        assert_eq!(n.value, 5.0);
        assert!(!n.clamped);
    }

    #[test]
    fn categorical_labels_evenly_spaced() {
        let s = low_med_high();
        assert_eq!(s.label_value(0), 1.0);
        assert_eq!(s.label_value(1), 3.0);
        assert_eq!(s.label_value(2), 5.0);
    }

    #[test]
    fn out_of_range_numerals_clamp_and_flag() {
        // Exhaustive over single-digit tokens.
        let s = Scale::one_to_five();
        for d in 0..=9 {
            let n = normalize_score(&d.to_string(), &s).unwrap();
            let expected = (d as f64).clamp(1.0, 5.0);
            assert_eq!(n.value, expected, "token {d}");
            assert_eq!(n.clamped, d < 1 || d > 5, "token {d}");
        }
    }

    #[test]
    fn normalize_is_idempotent_on_numerals() {
        let s = Scale::one_to_five();
        for raw in ["1", "2.5", "5", "7"] {
            let once = normalize_score(raw, &s).unwrap();
            let twice = normalize_score(&once.value.to_string(), &s).unwrap();
            assert_eq!(once.value, twice.value);
            assert!(!twice.clamped);
        }
    }

    #[test]
    fn categorical_round_trips_through_numbers() {
        let s = low_med_high();
        for label in &s.categories {
            let n = normalize_score(label, &s).unwrap();
            assert_eq!(s.nearest_label(n.value), Some(label.as_str()));
        }
    }

    #[test]
    fn label_on_numeric_scale_is_unparseable() {
        let s = Scale::one_to_five();
        assert!(matches!(
            normalize_score("excellent", &s),
            Err(DomainError::UnparseableScore(_))
        ));
    }

    #[test]
    fn gibberish_is_unparseable_on_any_scale() {
        assert!(normalize_score("???", &low_med_high()).is_err());
        assert!(normalize_score("", &Scale::one_to_five()).is_err());
    }

    #[test]
    fn fingerprint_identical_inputs_agree() {
        let a = Rubric::new(
            "Creativity",
            "Assesses originality",
            Scale::one_to_five(),
            RubricOrigin::Model("m".into()),
        )
        .unwrap();
        let b = Rubric::new(
            "Creativity",
            "Assesses originality",
            Scale::one_to_five(),
            RubricOrigin::Model("other".into()),
        )
        .unwrap();
        assert_eq!(a.rubric_id, b.rubric_id);
    }

    #[test]
    fn fingerprint_ignores_whitespace_and_case() {
        let a = Rubric::new(
            "  Creativity ",
            "Assesses   originality",
            Scale::one_to_five(),
            RubricOrigin::Model("m".into()),
        )
        .unwrap();
        let b = Rubric::new(
            "creativity",
            "assesses originality",
            Scale::one_to_five(),
            RubricOrigin::Model("m".into()),
        )
        .unwrap();
        assert_eq!(a.rubric_id, b.rubric_id);
    }

    #[test]
    fn fingerprint_sensitive_to_single_character() {
        let a = Rubric::new(
            "Creativity",
            "Assesses originality",
            Scale::one_to_five(),
            RubricOrigin::Model("m".into()),
        )
        .unwrap();
        let b = Rubric::new(
            "Creativitx",
            "Assesses originality",
            Scale::one_to_five(),
            RubricOrigin::Model("m".into()),
        )
        .unwrap();
        assert_ne!(a.rubric_id, b.rubric_id);
    }

    #[test]
    fn fingerprint_sensitive_to_scale() {
        let a = Rubric::new(
            "Tone",
            "desc",
            Scale::one_to_five(),
            RubricOrigin::Model("m".into()),
        )
        .unwrap();
        let b = Rubric::new("Tone", "desc", low_med_high(), RubricOrigin::Model("m".into()))
            .unwrap();
        assert_ne!(a.rubric_id, b.rubric_id);
    }

    #[test]
    fn rubric_set_rejects_duplicate_ids() {
        let task = TaskSpec::new("t", "desc", "d").unwrap();
        let r = Rubric::new(
            "Tone",
            "desc",
            Scale::one_to_five(),
            RubricOrigin::Model("m".into()),
        )
        .unwrap();
        let condition = PromptCondition::new(
            GenerationMode::TaskOnly,
            ScoringMode::ZeroShot,
            RubricSource::LlmGenerated,
        );
        let err = RubricSet::new(vec![r.clone(), r], condition, task, "m");
        assert!(err.is_err());
    }

    #[test]
    fn scale_validation() {
        assert!(Scale::numeric(5.0, 1.0).is_err());
        assert!(Scale::categorical(["only"], 1.0, 5.0).is_err());
        assert!(Scale::categorical(["a", "A "], 1.0, 5.0).is_err());
    }

    #[test]
    fn lenient_scale_parsing() {
        let s = Scale::parse_lenient(&serde_json::json!("1-5")).unwrap();
        assert_eq!((s.numeric_min, s.numeric_max), (1.0, 5.0));
        let s = Scale::parse_lenient(&serde_json::json!("1 to 10")).unwrap();
        assert_eq!((s.numeric_min, s.numeric_max), (1.0, 10.0));
        let s = Scale::parse_lenient(&serde_json::json!("1-5 (1 = not creative, 5 = highly creative)"))
            .unwrap();
        assert_eq!((s.numeric_min, s.numeric_max), (1.0, 5.0));
        let s = Scale::parse_lenient(&serde_json::json!(["low", "medium", "high"])).unwrap();
        assert_eq!(s.kind, ScaleKind::Categorical);
        assert_eq!(s.categories.len(), 3);
        let s = Scale::parse_lenient(&serde_json::json!("high/medium/low")).unwrap();
        assert_eq!(s.categories, vec!["high", "medium", "low"]);
        assert!(Scale::parse_lenient(&serde_json::json!(42)).is_err());
    }

    #[test]
    fn snake_case_serialization() {
        let condition = PromptCondition::new(
            GenerationMode::TaskPlusContrastive,
            ScoringMode::FewShot,
            RubricSource::HumanDefined,
        );
        let json = serde_json::to_value(condition).unwrap();
        assert_eq!(json["generation_mode"], "task_plus_contrastive");
        assert_eq!(json["scoring_mode"], "few_shot");
        assert_eq!(json["rubric_source"], "human_defined");
    }

    #[test]
    fn origin_serialization_shape() {
        let origin = RubricOrigin::Model("gpt-4o".into());
        assert_eq!(
            serde_json::to_value(&origin).unwrap(),
            serde_json::json!({"model": "gpt-4o"})
        );
    }
}
