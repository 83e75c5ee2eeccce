//! Dataset ingestion: JSONL benchmark files mapped through a per-dataset
//! field-mapping config, seeded slice sampling with tercile-based
//! contrastive pairs, and verbatim human rubric assets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{CandidateOutput, Rubric, RubricOrigin, Scale, ScaleKind};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("column {0:?} missing from every row")]
    MissingColumn(String),
    #[error("no valid rows: {0}")]
    EmptyDataset(String),
    #[error("dataset I/O: {0}")]
    Io(String),
    #[error("insufficient spread: {0}")]
    InsufficientSpread(String),
    #[error("sample of {n} exceeds {available} available items")]
    SampleTooLarge { n: usize, available: usize },
}

/// One human-rated attribute and its native scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub scale: Scale,
}

/// Column names in the source file for each canonical field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMap {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub output: String,
    /// attribute name → source column holding its human score.
    pub attributes: BTreeMap<String, String>,
}

/// Field-mapping config for one benchmark, stored as
/// `datasets/<id>/adapter.toml` (or `.json`) next to the data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAdapter {
    pub dataset_id: String,
    pub source_path: String,
    pub field_map: FieldMap,
    pub attribute_schema: Vec<AttributeSpec>,
    /// Attribute used to pick positives and negatives for contrastive
    /// prompts.
    pub quality_signal: String,
    /// Task description t for this dataset, from its source paper.
    pub task_description: String,
}

impl DatasetAdapter {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for attr in &self.attribute_schema {
            if !self.field_map.attributes.contains_key(&attr.name) {
                return Err(DatasetError::SchemaMismatch(format!(
                    "attribute {:?} has no source column in the field map",
                    attr.name
                )));
            }
            if attr.scale.kind == ScaleKind::Categorical && attr.scale.categories.len() < 2 {
                return Err(DatasetError::SchemaMismatch(format!(
                    "attribute {:?} has a categorical scale with <2 labels",
                    attr.name
                )));
            }
        }
        if !self
            .attribute_schema
            .iter()
            .any(|a| a.name == self.quality_signal)
        {
            return Err(DatasetError::SchemaMismatch(format!(
                "quality_signal {:?} is not in the attribute schema",
                self.quality_signal
            )));
        }
        if self.task_description.trim().is_empty() {
            return Err(DatasetError::SchemaMismatch(
                "task_description is empty".into(),
            ));
        }
        Ok(())
    }

    pub fn attribute_scale(&self, name: &str) -> Option<&Scale> {
        self.attribute_schema
            .iter()
            .find(|a| a.name == name)
            .map(|a| &a.scale)
    }

    /// Load `adapter.toml` or `adapter.json` from a dataset directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let toml_path = dir.join("adapter.toml");
        let json_path = dir.join("adapter.json");
        let adapter: DatasetAdapter = if toml_path.exists() {
            let text = std::fs::read_to_string(&toml_path).map_err(|e| DatasetError::Io(e.to_string()))?;
            toml::from_str(&text).map_err(|e| DatasetError::SchemaMismatch(format!("adapter.toml: {e}")))?
        } else if json_path.exists() {
            let text = std::fs::read_to_string(&json_path).map_err(|e| DatasetError::Io(e.to_string()))?;
            serde_json::from_str(&text)
                .map_err(|e| DatasetError::SchemaMismatch(format!("adapter.json: {e}")))?
        } else {
            return Err(DatasetError::Io(format!(
                "no adapter.toml or adapter.json under {}",
                dir.display()
            )));
        };
        adapter.validate()?;
        Ok(adapter)
    }

    /// Resolve the data file relative to the adapter's directory.
    pub fn resolve_source(&self, dir: impl AsRef<Path>) -> PathBuf {
        let p = Path::new(&self.source_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            dir.as_ref().join(p)
        }
    }

    /// Identity adapter for the canonical JSONL dump format.
    pub fn canonical(
        dataset_id: impl Into<String>,
        source_path: impl Into<String>,
        attribute_schema: Vec<AttributeSpec>,
        quality_signal: impl Into<String>,
        task_description: impl Into<String>,
    ) -> Self {
        let attributes = attribute_schema
            .iter()
            .map(|a| (a.name.clone(), a.name.clone()))
            .collect();
        Self {
            dataset_id: dataset_id.into(),
            source_path: source_path.into(),
            field_map: FieldMap {
                item_id: "item_id".into(),
                context: Some("context".into()),
                output: "text".into(),
                attributes,
            },
            attribute_schema,
            quality_signal: quality_signal.into(),
            task_description: task_description.into(),
        }
    }
}

/// One rejected row with its 1-based line number and reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub items: Vec<CandidateOutput>,
    pub rejects: Vec<RowDiagnostic>,
}

fn extract_score(value: &serde_json::Value, scale: &Scale) -> Option<f64> {
    if let Some(n) = value.as_f64() {
        return Some(n);
    }
    if let Some(s) = value.as_str() {
        if let Ok(n) = s.trim().parse::<f64>() {
            return Some(n);
        }
        return crate::domain::normalize_score(s, scale).ok().map(|n| n.value);
    }
    None
}

/// Load every record of a JSONL file through the adapter's field map.
/// Malformed rows are rejected with row-level diagnostics; the load
/// fails outright only when nothing valid remains.
pub fn load(adapter: &DatasetAdapter, source: impl AsRef<Path>) -> Result<LoadReport, DatasetError> {
    adapter.validate()?;
    let text = std::fs::read_to_string(source.as_ref()).map_err(|e| {
        DatasetError::Io(format!("{}: {e}", source.as_ref().display()))
    })?;
    let mut items = Vec::new();
    let mut rejects = Vec::new();
    let mut column_misses: BTreeMap<String, usize> = BTreeMap::new();
    let mut row_count = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        row_count += 1;
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                rejects.push(RowDiagnostic {
                    row,
                    reason: format!("not valid JSON: {e}"),
                });
                continue;
            }
        };
        let Some(obj) = value.as_object() else {
            rejects.push(RowDiagnostic {
                row,
                reason: "row is not a JSON object".into(),
            });
            continue;
        };
        let mut missing = |column: &str| {
            *column_misses.entry(column.to_string()).or_default() += 1;
        };
        let item_id = match obj.get(&adapter.field_map.item_id) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => {
                missing(&adapter.field_map.item_id);
                rejects.push(RowDiagnostic {
                    row,
                    reason: format!("missing item id column {:?}", adapter.field_map.item_id),
                });
                continue;
            }
        };
        let output = match obj.get(&adapter.field_map.output).and_then(|v| v.as_str()) {
            Some(s) if !s.trim().is_empty() => s.to_string(),
            _ => {
                missing(&adapter.field_map.output);
                rejects.push(RowDiagnostic {
                    row,
                    reason: format!("missing or empty output column {:?}", adapter.field_map.output),
                });
                continue;
            }
        };
        let context = adapter
            .field_map
            .context
            .as_ref()
            .and_then(|col| obj.get(col))
            .and_then(|v| v.as_str())
            .map(str::to_string);
        let mut human_scores = BTreeMap::new();
        let mut bad_attr = None;
        for attr in &adapter.attribute_schema {
            let column = &adapter.field_map.attributes[&attr.name];
            // Scores may sit at the top level or nested under a
            // human_scores object (the canonical dump format).
            let cell = obj.get(column).or_else(|| {
                obj.get("human_scores")
                    .and_then(|v| v.as_object())
                    .and_then(|scores| scores.get(column))
            });
            match cell.and_then(|v| extract_score(v, &attr.scale)) {
                Some(score) => {
                    human_scores.insert(attr.name.clone(), score);
                }
                None => {
                    bad_attr = Some(column.clone());
                    break;
                }
            }
        }
        if let Some(column) = bad_attr {
            missing(&column);
            rejects.push(RowDiagnostic {
                row,
                reason: format!("missing or non-numeric score column {column:?}"),
            });
            continue;
        }
        items.push(CandidateOutput {
            item_id,
            context,
            text: output,
            human_scores,
        });
    }
    if items.is_empty() {
        // A column absent from every row is a mapping error, not noise.
        if let Some((column, _)) = column_misses.iter().find(|(_, &count)| count == row_count && row_count > 0) {
            return Err(DatasetError::MissingColumn(column.clone()));
        }
        let hint = rejects
            .first()
            .map(|r| format!("first reject at row {}: {}", r.row, r.reason))
            .unwrap_or_else(|| "file has no data rows".into());
        return Err(DatasetError::EmptyDataset(hint));
    }
    Ok(LoadReport { items, rejects })
}

/// Write items in the canonical JSONL dump format (one JSON object per
/// line with `item_id`, `context`, `text`, `human_scores`).
pub fn save_items(path: impl AsRef<Path>, items: &[CandidateOutput]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| DatasetError::Io(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out).map_err(|e| DatasetError::Io(e.to_string()))
}

/// A context with its tercile-selected positive and negative outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub context: String,
    pub positive: CandidateOutput,
    pub negative: CandidateOutput,
}

/// The frozen material of one run: n sampled items, three contexts,
/// and one contrastive pair per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSlice {
    pub items: Vec<CandidateOutput>,
    pub contexts: Vec<String>,
    pub contrastive_pairs: Vec<ContrastivePair>,
    pub seed: u64,
}

fn signal(item: &CandidateOutput, quality_signal: &str) -> f64 {
    item.human_scores.get(quality_signal).copied().unwrap_or(f64::NAN)
}

/// Deterministically sample n items, three distinct contexts, and one
/// positive/negative pair per context. Positives come from the top
/// tercile and negatives from the bottom tercile of the quality signal
/// within each chosen context's pool.
pub fn sample_slice(
    items: &[CandidateOutput],
    n: usize,
    seed: u64,
    adapter: &DatasetAdapter,
) -> Result<SampleSlice, DatasetError> {
    if n > items.len() {
        return Err(DatasetError::SampleTooLarge {
            n,
            available: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<CandidateOutput> = items.to_vec();
    shuffled.shuffle(&mut rng);
    let sampled: Vec<CandidateOutput> = shuffled.into_iter().take(n).collect();

    // Distinct contexts across the whole pool, first-appearance order.
    let mut contexts: Vec<String> = Vec::new();
    for item in items {
        if let Some(ctx) = &item.context {
            if !ctx.trim().is_empty() && !contexts.iter().any(|c| c == ctx) {
                contexts.push(ctx.clone());
            }
        }
    }
    let (chosen, pairs) = if contexts.is_empty() {
        // Context-free dataset: the slice carries no exemplar material
        // and context-grounded conditions fail at prompt build.
        (Vec::new(), Vec::new())
    } else {
        if contexts.len() < 3 {
            return Err(DatasetError::InsufficientSpread(format!(
                "need 3 distinct contexts, dataset has {}",
                contexts.len()
            )));
        }
        contexts.shuffle(&mut rng);
        let chosen: Vec<String> = contexts.into_iter().take(3).collect();
        let mut pairs = Vec::new();
        for ctx in &chosen {
            let mut pool: Vec<&CandidateOutput> = items
                .iter()
                .filter(|i| i.context.as_deref() == Some(ctx.as_str()))
                .collect();
            pool.sort_by(|a, b| {
                signal(a, &adapter.quality_signal)
                    .partial_cmp(&signal(b, &adapter.quality_signal))
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.item_id.cmp(&b.item_id))
            });
            let tercile = pool.len().div_ceil(3);
            let bottom = &pool[..tercile];
            let top = &pool[pool.len() - tercile..];
            let negative = bottom[rng.random_range(0..bottom.len())].clone();
            let positive = top[rng.random_range(0..top.len())].clone();
            let pos_q = signal(&positive, &adapter.quality_signal);
            let neg_q = signal(&negative, &adapter.quality_signal);
            if pos_q.is_nan() || neg_q.is_nan() || pos_q <= neg_q {
                return Err(DatasetError::InsufficientSpread(format!(
                    "context {ctx:?} has no quality spread on {:?} (top {pos_q} vs bottom {neg_q})",
                    adapter.quality_signal
                )));
            }
            pairs.push(ContrastivePair {
                context: ctx.clone(),
                positive,
                negative,
            });
        }
        (chosen, pairs)
    };
    Ok(SampleSlice {
        items: sampled,
        contexts: chosen,
        contrastive_pairs: pairs,
        seed,
    })
}

/// Per-dataset human rubrics, instructions taken verbatim from the
/// benchmark's published annotation guidelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanRubricSet {
    pub dataset_id: String,
    pub rubrics: Vec<Rubric>,
}

#[derive(Debug, Deserialize)]
struct HumanRubricFile {
    dataset_id: String,
    rubrics: Vec<HumanRubricEntry>,
}

#[derive(Debug, Deserialize)]
struct HumanRubricEntry {
    name: String,
    description: String,
    scale: Scale,
    instruction: String,
}

impl HumanRubricSet {
    /// Load `human_rubrics.json` from a dataset directory and check the
    /// rubric names against the adapter's attribute schema.
    pub fn load_dir(dir: impl AsRef<Path>, adapter: &DatasetAdapter) -> Result<Self, DatasetError> {
        let path = dir.as_ref().join("human_rubrics.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| DatasetError::Io(format!("{}: {e}", path.display())))?;
        let file: HumanRubricFile = serde_json::from_str(&text)
            .map_err(|e| DatasetError::SchemaMismatch(format!("human_rubrics.json: {e}")))?;
        let mut rubrics = Vec::new();
        for entry in file.rubrics {
            if !adapter.attribute_schema.iter().any(|a| a.name == entry.name) {
                return Err(DatasetError::SchemaMismatch(format!(
                    "human rubric {:?} does not match any attribute of {}",
                    entry.name, adapter.dataset_id
                )));
            }
            let rubric = Rubric::new(
                entry.name,
                entry.description,
                entry.scale,
                RubricOrigin::Human(file.dataset_id.clone()),
            )
            .map_err(|e| DatasetError::SchemaMismatch(e.to_string()))?
            .with_instruction(entry.instruction);
            rubrics.push(rubric);
        }
        if rubrics.is_empty() {
            return Err(DatasetError::EmptyDataset("human_rubrics.json has no rubrics".into()));
        }
        Ok(Self {
            dataset_id: file.dataset_id,
            rubrics,
        })
    }
}
