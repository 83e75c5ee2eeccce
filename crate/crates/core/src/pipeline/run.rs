//! Run orchestration: freeze a manifest, sample the slice, walk the
//! full condition matrix (generation × scoring × rubric source), and
//! persist every artifact under `runs/<run_id>/`. Completed cells are
//! skipped on re-invocation, so a finished run is a fixed point.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dataset::{self, DatasetAdapter, HumanRubricSet, SampleSlice};
use crate::domain::{
    CandidateOutput, GenerationMode, PromptCondition, Rubric, RubricSet, RubricSource, ScoringMode,
    TaskSpec,
};
use crate::gateway::{DecodingParams, Gateway};
use crate::prompts::TemplateSet;
use crate::stats::ScoreMatrix;

use super::{
    exemplars_for, select_demos, GenerationRecord, MissingRecord, Pipeline, PipelineError,
    RecordedScore, ScoreLine,
};

/// Decoding parameters per pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    #[serde(default = "DecodingParams::sampling")]
    pub generation: DecodingParams,
    #[serde(default = "DecodingParams::sampling")]
    pub instruction: DecodingParams,
    #[serde(default = "DecodingParams::greedy")]
    pub scoring: DecodingParams,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            generation: DecodingParams::sampling(),
            instruction: DecodingParams::sampling(),
            scoring: DecodingParams::greedy(),
        }
    }
}

fn default_generation_modes() -> Vec<GenerationMode> {
    GenerationMode::ALL.to_vec()
}

fn default_scoring_modes() -> Vec<ScoringMode> {
    ScoringMode::ALL.to_vec()
}

fn default_rubric_sources() -> Vec<RubricSource> {
    vec![RubricSource::LlmGenerated, RubricSource::HumanDefined]
}

fn default_sample_size() -> usize {
    50
}

/// Frozen configuration and provenance of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub dataset_id: String,
    /// Dataset directory as written in the manifest file; resolved
    /// relative to the manifest's location at load time.
    pub dataset_dir: String,
    pub judge_models: Vec<String>,
    /// When unset, each judge generates (and applies) its own rubrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_model: Option<String>,
    #[serde(default = "default_generation_modes")]
    pub generation_modes: Vec<GenerationMode>,
    #[serde(default = "default_scoring_modes")]
    pub scoring_modes: Vec<ScoringMode>,
    #[serde(default = "default_rubric_sources")]
    pub rubric_sources: Vec<RubricSource>,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub decoding: DecodingConfig,
    /// Filled from the template set when the run starts.
    #[serde(default)]
    pub template_hashes: BTreeMap<String, String>,
    /// Pin this in the manifest file for byte-reproducible run
    /// directories; defaults to the wall clock at run start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    /// Expanded condition matrix, computed when the manifest freezes.
    #[serde(default)]
    pub conditions: Vec<PromptCondition>,
}

impl RunManifest {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(PipelineError::Manifest(format!(
                "run_id {:?} must be non-empty and filesystem-safe",
                self.run_id
            )));
        }
        if self.judge_models.is_empty() {
            return Err(PipelineError::Manifest("judge_models is empty".into()));
        }
        if self.generation_modes.is_empty()
            || self.scoring_modes.is_empty()
            || self.rubric_sources.is_empty()
        {
            return Err(PipelineError::Manifest("condition matrix is empty".into()));
        }
        if self.sample_size == 0 {
            return Err(PipelineError::Manifest("sample_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Load a TOML manifest; the returned path is the dataset directory
    /// resolved against the manifest file's parent.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf), PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        let manifest: RunManifest = toml::from_str(&text)
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let dataset_dir = {
            let p = Path::new(&manifest.dataset_dir);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        Ok((manifest, dataset_dir))
    }

    /// The full condition matrix: generation × scoring for LLM rubrics
    /// plus scoring-only cells for human rubrics.
    pub fn expand_conditions(&self) -> Vec<PromptCondition> {
        let mut out = Vec::new();
        for source in &self.rubric_sources {
            match source {
                RubricSource::LlmGenerated => {
                    for gen in &self.generation_modes {
                        for scoring in &self.scoring_modes {
                            out.push(PromptCondition::new(*gen, *scoring, *source));
                        }
                    }
                }
                RubricSource::HumanDefined => {
                    for scoring in &self.scoring_modes {
                        out.push(PromptCondition::new(GenerationMode::TaskOnly, *scoring, *source));
                    }
                }
            }
        }
        out
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// Stable cell identifier for score files.
pub fn cell_name(judge: &str, condition: &PromptCondition) -> String {
    match condition.rubric_source {
        RubricSource::LlmGenerated => format!(
            "{}__llm__{}__{}",
            sanitize(judge),
            condition.generation_mode.slug(),
            condition.scoring_mode.slug()
        ),
        RubricSource::HumanDefined => format!(
            "{}__human__{}",
            sanitize(judge),
            condition.scoring_mode.slug()
        ),
    }
}

fn generation_cell(generator: &str, mode: GenerationMode) -> String {
    format!("{}__llm__{}", sanitize(generator), mode.slug())
}

pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::Io(e.to_string()))?;
    bytes.push(b'\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, &bytes).map_err(|e| PipelineError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes =
        fs::read(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

fn write_score_lines(path: &Path, records: &[RecordedScore], missing: &[MissingRecord]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for r in records {
        let line = ScoreLine::Scored(r.record.clone());
        let mut value = serde_json::to_value(&line).map_err(|e| PipelineError::Io(e.to_string()))?;
        value["transcript_key"] = serde_json::Value::String(r.transcript_key.clone());
        out.push_str(&serde_json::to_string(&value).map_err(|e| PipelineError::Io(e.to_string()))?);
        out.push('\n');
    }
    for m in missing {
        let line = ScoreLine::Missing(m.clone());
        out.push_str(&serde_json::to_string(&line).map_err(|e| PipelineError::Io(e.to_string()))?);
        out.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, &out).map_err(|e| PipelineError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Parse one score file back into scored and missing lines.
pub fn read_score_lines(path: &Path) -> Result<(Vec<RecordedScore>, Vec<MissingRecord>), PipelineError> {
    let text =
        fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| PipelineError::Io(format!("{} line {}: {e}", path.display(), i + 1)))?;
        let parsed: ScoreLine = serde_json::from_value(value.clone())
            .map_err(|e| PipelineError::Io(format!("{} line {}: {e}", path.display(), i + 1)))?;
        match parsed {
            ScoreLine::Scored(record) => {
                let transcript_key = value["transcript_key"].as_str().unwrap_or_default().to_string();
                records.push(RecordedScore {
                    record,
                    transcript_key,
                });
            }
            ScoreLine::Missing(m) => missing.push(m),
        }
    }
    Ok((records, missing))
}

/// Per-cell outcome in the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: String,
    pub status: String,
    pub rubrics: usize,
    pub items: usize,
    pub records: usize,
    pub missing: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Summary persisted as `report.json`; a pure function of the run's
/// persisted data (no wall-clock, no call counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub cells: Vec<CellReport>,
    pub total_records: usize,
    pub total_missing: usize,
    pub failed_cells: usize,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub report: RunReport,
    /// Backend calls this invocation actually made (zero on resume).
    pub new_backend_calls: u64,
}

struct RunDirs {
    root: PathBuf,
    rubrics: PathBuf,
    scores: PathBuf,
    transcripts: PathBuf,
    dataset: PathBuf,
}

impl RunDirs {
    fn create(root: PathBuf) -> Result<Self, PipelineError> {
        let dirs = Self {
            rubrics: root.join("rubrics"),
            scores: root.join("scores"),
            transcripts: root.join("transcripts"),
            dataset: root.join("dataset"),
            root,
        };
        for d in [&dirs.root, &dirs.rubrics, &dirs.scores, &dirs.transcripts, &dirs.dataset] {
            fs::create_dir_all(d).map_err(|e| PipelineError::Io(format!("{}: {e}", d.display())))?;
        }
        Ok(dirs)
    }
}

fn freeze_manifest(
    manifest: &RunManifest,
    templates: &TemplateSet,
    dirs: &RunDirs,
) -> Result<RunManifest, PipelineError> {
    let manifest_path = dirs.root.join("manifest.json");
    if manifest_path.exists() {
        let frozen: RunManifest = read_json(&manifest_path)?;
        if frozen.run_id != manifest.run_id
            || frozen.dataset_id != manifest.dataset_id
            || frozen.seed != manifest.seed
            || frozen.sample_size != manifest.sample_size
            || frozen.judge_models != manifest.judge_models
        {
            return Err(PipelineError::Manifest(format!(
                "run directory {} was created from a different manifest",
                dirs.root.display()
            )));
        }
        return Ok(frozen);
    }
    let mut frozen = manifest.clone();
    if frozen.template_hashes.is_empty() {
        frozen.template_hashes = templates.hashes();
    }
    if frozen.timestamp.is_none() {
        frozen.timestamp = Some(chrono::Utc::now().to_rfc3339());
    }
    frozen.conditions = frozen.expand_conditions();
    write_json_atomic(&manifest_path, &frozen)?;
    Ok(frozen)
}

fn load_or_create_slice(
    dirs: &RunDirs,
    items: &[CandidateOutput],
    manifest: &RunManifest,
    adapter: &DatasetAdapter,
) -> Result<SampleSlice, PipelineError> {
    let path = dirs.root.join("slice.json");
    if path.exists() {
        return read_json(&path);
    }
    let slice = dataset::sample_slice(items, manifest.sample_size, manifest.seed, adapter)?;
    write_json_atomic(&path, &slice)?;
    Ok(slice)
}

fn demos_for(
    condition: &PromptCondition,
    slice: &SampleSlice,
    adapter: &DatasetAdapter,
) -> Vec<(CandidateOutput, f64)> {
    if condition.scoring_mode != ScoringMode::FewShot {
        return Vec::new();
    }
    let range = adapter
        .attribute_scale(&adapter.quality_signal)
        .map(|s| (s.numeric_min, s.numeric_max))
        .unwrap_or((1.0, 5.0));
    select_demos(slice, &adapter.quality_signal, range)
}

/// Execute the full matrix named by the manifest, persisting every
/// artifact; cells already on disk are skipped. Per-cell failures are
/// surfaced in the report, never as a panic or an aborted run.
pub fn run_experiment(
    manifest: &RunManifest,
    dataset_dir: &Path,
    runs_root: &Path,
    gateway: &Gateway,
    templates: &TemplateSet,
) -> Result<RunOutcome, PipelineError> {
    manifest.validate()?;
    let calls_before = gateway.stats().backend_calls;

    let adapter = DatasetAdapter::load_dir(dataset_dir)?;
    let source = adapter.resolve_source(dataset_dir);
    let loaded = dataset::load(&adapter, &source)?;
    let human_rubrics = if manifest.rubric_sources.contains(&RubricSource::HumanDefined) {
        Some(HumanRubricSet::load_dir(dataset_dir, &adapter)?)
    } else {
        None
    };

    let dirs = RunDirs::create(runs_root.join(&manifest.run_id))?;
    let frozen = freeze_manifest(manifest, templates, &dirs)?;
    let slice = load_or_create_slice(&dirs, &loaded.items, &frozen, &adapter)?;
    let adapter_copy = dirs.dataset.join("adapter.json");
    if !adapter_copy.exists() {
        write_json_atomic(&adapter_copy, &adapter)?;
    }
    if let Some(human) = &human_rubrics {
        let human_copy = dirs.dataset.join("human_rubrics.json");
        if !human_copy.exists() {
            write_json_atomic(&human_copy, human)?;
        }
    }

    gateway.set_mirror(Some(&dirs.transcripts))?;
    let result = run_cells(&frozen, &adapter, &slice, human_rubrics.as_ref(), &dirs, gateway, templates);
    gateway.set_mirror(None)?;
    let report = result?;

    write_json_atomic(&dirs.root.join("report.json"), &report)?;
    Ok(RunOutcome {
        run_dir: dirs.root,
        report,
        new_backend_calls: gateway.stats().backend_calls - calls_before,
    })
}

fn run_cells(
    manifest: &RunManifest,
    adapter: &DatasetAdapter,
    slice: &SampleSlice,
    human_rubrics: Option<&HumanRubricSet>,
    dirs: &RunDirs,
    gateway: &Gateway,
    templates: &TemplateSet,
) -> Result<RunReport, PipelineError> {
    let task = TaskSpec::new(
        adapter.dataset_id.clone(),
        adapter.task_description.clone(),
        adapter.dataset_id.clone(),
    )?;
    let pipeline = Pipeline {
        gateway,
        templates,
        run_scope: Some(manifest.run_id.clone()),
        generation_params: manifest.decoding.generation.clone(),
        instruction_params: manifest.decoding.instruction.clone(),
        scoring_params: manifest.decoding.scoring.clone(),
        max_attempts: super::MAX_ATTEMPTS,
    };

    let mut cells = Vec::new();
    for judge in &manifest.judge_models {
        for condition in manifest.expand_conditions() {
            let cell = cell_name(judge, &condition);
            let score_path = dirs.scores.join(format!("{cell}.jsonl"));
            let rubric_set = match condition.rubric_source {
                RubricSource::HumanDefined => {
                    let human = human_rubrics.ok_or_else(|| {
                        PipelineError::MissingArtifact("human rubrics required but not loaded".into())
                    })?;
                    let record_path = dirs.rubrics.join("human.json");
                    if !record_path.exists() {
                        let set = RubricSet::new(
                            human.rubrics.clone(),
                            condition,
                            task.clone(),
                            "human",
                        )?;
                        let record = GenerationRecord {
                            cell: "human".into(),
                            rubric_set: Some(set),
                            raw_completion: String::new(),
                            attempts: 0,
                            discarded: false,
                            diagnostic: None,
                            instruction_attempts: BTreeMap::new(),
                            instruction_failures: BTreeMap::new(),
                        };
                        write_json_atomic(&record_path, &record)?;
                    }
                    let record: GenerationRecord = read_json(&record_path)?;
                    Ok(record.rubric_set.expect("human record always parsed"))
                }
                RubricSource::LlmGenerated => {
                    let generator = manifest.generator_model.as_deref().unwrap_or(judge);
                    ensure_generated(
                        &pipeline,
                        &task,
                        &condition,
                        slice,
                        generator,
                        dirs,
                    )
                }
            };
            let rubric_set = match rubric_set {
                Ok(set) => set,
                Err(CellFailure::Persistent(msg)) => {
                    cells.push(CellReport {
                        cell,
                        status: "failed".into(),
                        rubrics: 0,
                        items: slice.items.len(),
                        records: 0,
                        missing: 0,
                        error: Some(msg),
                    });
                    continue;
                }
                Err(CellFailure::Fatal(e)) => return Err(e),
            };

            if score_path.exists() {
                let (records, missing) = read_score_lines(&score_path)?;
                cells.push(CellReport {
                    cell,
                    status: "ok".into(),
                    rubrics: rubric_set.len(),
                    items: slice.items.len(),
                    records: records.len(),
                    missing: missing.len(),
                    error: None,
                });
                continue;
            }
            let demos = demos_for(&condition, slice, adapter);
            match pipeline.score_outputs(&rubric_set, &slice.items, &condition, judge, &demos) {
                Ok((records, missing)) => {
                    write_score_lines(&score_path, &records, &missing)?;
                    cells.push(CellReport {
                        cell,
                        status: "ok".into(),
                        rubrics: rubric_set.len(),
                        items: slice.items.len(),
                        records: records.len(),
                        missing: missing.len(),
                        error: None,
                    });
                }
                Err(e) => {
                    cells.push(CellReport {
                        cell,
                        status: "failed".into(),
                        rubrics: rubric_set.len(),
                        items: slice.items.len(),
                        records: 0,
                        missing: 0,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }
    let total_records = cells.iter().map(|c| c.records).sum();
    let total_missing = cells.iter().map(|c| c.missing).sum();
    let failed_cells = cells.iter().filter(|c| c.status == "failed").count();
    Ok(RunReport {
        run_id: manifest.run_id.clone(),
        cells,
        total_records,
        total_missing,
        failed_cells,
    })
}

enum CellFailure {
    /// Recorded on disk (a discard); resume keeps the verdict.
    Persistent(String),
    /// Environment-level error; the run aborts.
    Fatal(PipelineError),
}

fn ensure_generated(
    pipeline: &Pipeline,
    task: &TaskSpec,
    condition: &PromptCondition,
    slice: &SampleSlice,
    generator: &str,
    dirs: &RunDirs,
) -> Result<RubricSet, CellFailure> {
    let gen_cell = generation_cell(generator, condition.generation_mode);
    let record_path = dirs.rubrics.join(format!("{gen_cell}.json"));
    if record_path.exists() {
        let record: GenerationRecord = read_json(&record_path).map_err(CellFailure::Fatal)?;
        return match record.rubric_set {
            Some(set) => Ok(set),
            None => Err(CellFailure::Persistent(format!(
                "rubric generation discarded: {}",
                record.diagnostic.unwrap_or_default()
            ))),
        };
    }
    let exemplars = match exemplars_for(slice, condition.generation_mode) {
        Ok(e) => e,
        Err(e) => return Err(CellFailure::Persistent(e.to_string())),
    };
    match pipeline.generate_rubrics(task, condition, &exemplars, generator) {
        Ok((mut set, attempts, raw)) => {
            let (instruction_attempts, instruction_failures) = pipeline
                .generate_instructions(&mut set, condition, generator)
                .map_err(CellFailure::Fatal)?;
            let record = GenerationRecord {
                cell: gen_cell,
                rubric_set: Some(set.clone()),
                raw_completion: raw,
                attempts,
                discarded: false,
                diagnostic: None,
                instruction_attempts,
                instruction_failures,
            };
            write_json_atomic(&record_path, &record).map_err(CellFailure::Fatal)?;
            Ok(set)
        }
        Err(PipelineError::GenerationDiscarded { attempts, last_error }) => {
            let record = GenerationRecord {
                cell: gen_cell,
                rubric_set: None,
                raw_completion: String::new(),
                attempts,
                discarded: true,
                diagnostic: Some(last_error.clone()),
                instruction_attempts: BTreeMap::new(),
                instruction_failures: BTreeMap::new(),
            };
            write_json_atomic(&record_path, &record).map_err(CellFailure::Fatal)?;
            Err(CellFailure::Persistent(format!(
                "rubric generation discarded after {attempts} attempts: {last_error}"
            )))
        }
        Err(other) => Err(CellFailure::Fatal(other)),
    }
}

/// Manifest persisted for a transfer run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferManifest {
    pub run_id: String,
    pub source_run: String,
    pub generator: String,
    pub judge_models: Vec<String>,
    pub generation_mode: GenerationMode,
    pub scoring_mode: ScoringMode,
}

#[derive(Debug)]
pub struct TransferOutcome {
    pub run_dir: PathBuf,
    pub matrices: Vec<(Rubric, ScoreMatrix)>,
    pub report: RunReport,
    pub new_backend_calls: u64,
}

/// Apply one run's persisted rubric set across several judge models,
/// scoring the same slice, and emit an items × judges matrix per rubric.
#[allow(clippy::too_many_arguments)]
pub fn run_transfer(
    source_run_dir: &Path,
    judges: &[String],
    generation_mode: GenerationMode,
    scoring_mode: ScoringMode,
    source_generator: Option<&str>,
    runs_root: &Path,
    gateway: &Gateway,
    templates: &TemplateSet,
) -> Result<TransferOutcome, PipelineError> {
    if judges.is_empty() {
        return Err(PipelineError::Manifest("transfer needs at least one judge".into()));
    }
    let calls_before = gateway.stats().backend_calls;
    let source_manifest: RunManifest = read_json(&source_run_dir.join("manifest.json"))?;
    let slice: SampleSlice = read_json(&source_run_dir.join("slice.json"))?;
    let adapter: DatasetAdapter = read_json(&source_run_dir.join("dataset").join("adapter.json"))?;

    let generator = match source_generator {
        Some(g) => g.to_string(),
        None => {
            if let Some(g) = &source_manifest.generator_model {
                g.clone()
            } else if source_manifest.judge_models.len() == 1 {
                source_manifest.judge_models[0].clone()
            } else {
                return Err(PipelineError::Manifest(
                    "source run has several judges; pass the rubric source model explicitly".into(),
                ));
            }
        }
    };
    let gen_cell = generation_cell(&generator, generation_mode);
    let record_path = source_run_dir.join("rubrics").join(format!("{gen_cell}.json"));
    if !record_path.exists() {
        return Err(PipelineError::MissingArtifact(format!(
            "source run has no rubric set {}",
            record_path.display()
        )));
    }
    let record: GenerationRecord = read_json(&record_path)?;
    let rubric_set = record.rubric_set.ok_or_else(|| {
        PipelineError::MissingArtifact(format!("rubric set {gen_cell} was discarded"))
    })?;

    let run_id = sanitize(&format!(
        "{}-xfer-{}-{}-{}",
        source_manifest.run_id,
        generator,
        generation_mode.slug(),
        scoring_mode.slug()
    ));
    let dirs = RunDirs::create(runs_root.join(&run_id))?;
    let manifest_path = dirs.root.join("manifest.json");
    if !manifest_path.exists() {
        write_json_atomic(
            &manifest_path,
            &TransferManifest {
                run_id: run_id.clone(),
                source_run: source_manifest.run_id.clone(),
                generator: generator.clone(),
                judge_models: judges.to_vec(),
                generation_mode,
                scoring_mode,
            },
        )?;
    }
    let slice_copy = dirs.root.join("slice.json");
    if !slice_copy.exists() {
        write_json_atomic(&slice_copy, &slice)?;
    }
    let adapter_copy = dirs.dataset.join("adapter.json");
    if !adapter_copy.exists() {
        write_json_atomic(&adapter_copy, &adapter)?;
    }
    let rubric_copy = dirs.rubrics.join(format!("{gen_cell}.json"));
    if !rubric_copy.exists() {
        write_json_atomic(
            &rubric_copy,
            &GenerationRecord {
                cell: gen_cell.clone(),
                rubric_set: Some(rubric_set.clone()),
                raw_completion: String::new(),
                attempts: 0,
                discarded: false,
                diagnostic: Some(format!("transferred from run {}", source_manifest.run_id)),
                instruction_attempts: BTreeMap::new(),
                instruction_failures: BTreeMap::new(),
            },
        )?;
    }

    gateway.set_mirror(Some(&dirs.transcripts))?;
    let pipeline = Pipeline {
        gateway,
        templates,
        run_scope: Some(run_id.clone()),
        generation_params: source_manifest.decoding.generation.clone(),
        instruction_params: source_manifest.decoding.instruction.clone(),
        scoring_params: source_manifest.decoding.scoring.clone(),
        max_attempts: super::MAX_ATTEMPTS,
    };
    let condition = PromptCondition::new(generation_mode, scoring_mode, RubricSource::LlmGenerated);
    let mut cells = Vec::new();
    let mut per_judge: BTreeMap<String, Vec<RecordedScore>> = BTreeMap::new();
    let mut scoring_result: Result<(), PipelineError> = Ok(());
    for judge in judges {
        let cell = format!("{}__transfer__{}", sanitize(judge), scoring_mode.slug());
        let score_path = dirs.scores.join(format!("{cell}.jsonl"));
        let (records, missing) = if score_path.exists() {
            read_score_lines(&score_path)?
        } else {
            let demos = demos_for(&condition, &slice, &adapter);
            match pipeline.score_outputs(&rubric_set, &slice.items, &condition, judge, &demos) {
                Ok(pair) => {
                    write_score_lines(&score_path, &pair.0, &pair.1)?;
                    pair
                }
                Err(e) => {
                    scoring_result = Err(e);
                    break;
                }
            }
        };
        cells.push(CellReport {
            cell,
            status: "ok".into(),
            rubrics: rubric_set.len(),
            items: slice.items.len(),
            records: records.len(),
            missing: missing.len(),
            error: None,
        });
        per_judge.insert(judge.clone(), records);
    }
    gateway.set_mirror(None)?;
    scoring_result?;

    let matrices_dir = dirs.root.join("matrices");
    fs::create_dir_all(&matrices_dir).map_err(|e| PipelineError::Io(e.to_string()))?;
    let mut matrices = Vec::new();
    for (idx, rubric) in rubric_set.rubrics.iter().enumerate() {
        let items: Vec<String> = slice.items.iter().map(|i| i.item_id.clone()).collect();
        let values: Vec<Vec<Option<f64>>> = slice
            .items
            .iter()
            .map(|item| {
                judges
                    .iter()
                    .map(|judge| {
                        per_judge.get(judge).and_then(|records| {
                            records
                                .iter()
                                .find(|r| {
                                    r.record.rubric_id == rubric.rubric_id
                                        && r.record.item_id == item.item_id
                                })
                                .map(|r| r.record.score)
                        })
                    })
                    .collect()
            })
            .collect();
        let matrix = ScoreMatrix::new(items, judges.to_vec(), values, rubric.scale.granularity())
            .map_err(|e| PipelineError::Io(e.to_string()))?;
        let csv_path = matrices_dir.join(format!("{:02}_{}.csv", idx, sanitize(&rubric.name)));
        let mut buf = Vec::new();
        matrix.to_csv(&mut buf).map_err(|e| PipelineError::Io(e.to_string()))?;
        let tmp = csv_path.with_extension("csv.tmp");
        fs::write(&tmp, &buf).map_err(|e| PipelineError::Io(e.to_string()))?;
        fs::rename(&tmp, &csv_path).map_err(|e| PipelineError::Io(e.to_string()))?;
        matrices.push((rubric.clone(), matrix));
    }

    let total_records = cells.iter().map(|c| c.records).sum();
    let total_missing = cells.iter().map(|c| c.missing).sum();
    let report = RunReport {
        run_id: run_id.clone(),
        cells,
        total_records,
        total_missing,
        failed_cells: 0,
    };
    write_json_atomic(&dirs.root.join("report.json"), &report)?;
    Ok(TransferOutcome {
        run_dir: dirs.root,
        matrices,
        report,
        new_backend_calls: gateway.stats().backend_calls - calls_before,
    })
}
