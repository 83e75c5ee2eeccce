//! Report emission: criteria-analysis, stability, human-correlation,
//! and reliability tables as CSV (with markdown mirrors), plus figure
//! data (judge × judge correlation heatmaps, per-model score
//! distributions) as CSV + SVG.
//!
//! Reports are pure functions of persisted run data. The LLM-backed
//! analysis artifacts (dedup, alignment tags, specificity labels) are
//! computed once per run, stored under `analysis/`, and reused by
//! every later invocation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{self, AlignmentTag, AnalysisError, DedupResult, RubricQualityReport, TaskSpecificLabel};
use crate::dataset::{DatasetAdapter, SampleSlice};
use crate::domain::{PromptCondition, RubricSet, RubricSource, Scale, ScoringMode, TaskSpec};
use crate::gateway::Gateway;
use crate::pipeline::{
    cell_name, read_score_lines, GenerationRecord, PipelineError, RecordedScore, RunManifest,
};
use crate::stats::{self, ScoreMatrix, StatError};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error("report I/O: {0}")]
    Io(String),
    #[error("incomplete run: missing {0}")]
    IncompleteRun(String),
    #[error("unknown figure kind {0:?} (expected heatmap or distribution)")]
    UnknownFigureKind(String),
    #[error("{0}")]
    BadRequest(String),
}

/// Models and threshold used by the analysis stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub embedding_model: String,
    pub tagger_model: String,
    pub tau: f64,
    /// Also emit an ICC(2,k) average-measures table next to the
    /// default ICC(2,1) one.
    #[serde(default)]
    pub include_icc2k: bool,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            embedding_model: "jinaai/jina-embeddings-v3".into(),
            tagger_model: "gpt-4o".into(),
            tau: 0.82,
            include_icc2k: false,
        }
    }
}

/// Persisted per-rubric-set analysis artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityArtifact {
    pub cell: String,
    pub generator: String,
    pub generation_mode: String,
    pub report: RubricQualityReport,
    pub dedup: DedupResult,
    pub tags: Vec<AlignmentTag>,
    pub labels: Vec<TaskSpecificLabel>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ReportError> {
    let bytes = fs::read(path).map_err(|e| ReportError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| ReportError::Io(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| ReportError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| ReportError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Write a CSV file plus a markdown table mirror next to it.
fn write_table(dir: &Path, stem: &str, header: &[&str], rows: &[Vec<String>]) -> Result<Vec<PathBuf>, ReportError> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(|e| ReportError::Io(e.to_string()))?;
        for row in rows {
            w.write_record(row).map_err(|e| ReportError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| ReportError::Io(e.to_string()))?;
    }
    write_bytes(&csv_path, &buf)?;

    let mut md = String::new();
    writeln!(md, "| {} |", header.join(" | ")).ok();
    writeln!(md, "|{}|", header.iter().map(|_| " --- ").collect::<Vec<_>>().join("|")).ok();
    for row in rows {
        writeln!(md, "| {} |", row.join(" | ")).ok();
    }
    let md_path = dir.join(format!("{stem}.md"));
    write_bytes(&md_path, md.as_bytes())?;
    Ok(vec![csv_path, md_path])
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt_pct(x: f64) -> String {
    format!("{x:.1}")
}

/// Everything analyze needs from a standard run directory.
struct RunData {
    manifest: RunManifest,
    adapter: DatasetAdapter,
    slice: SampleSlice,
    task: TaskSpec,
    human_rubrics: Option<crate::dataset::HumanRubricSet>,
}

fn load_run(run_dir: &Path) -> Result<RunData, ReportError> {
    let manifest: RunManifest = read_json(&run_dir.join("manifest.json"))?;
    let adapter: DatasetAdapter = read_json(&run_dir.join("dataset").join("adapter.json"))?;
    let slice: SampleSlice = read_json(&run_dir.join("slice.json"))?;
    let human_path = run_dir.join("dataset").join("human_rubrics.json");
    let human_rubrics = if human_path.exists() {
        Some(read_json(&human_path)?)
    } else {
        None
    };
    let task = TaskSpec::new(
        adapter.dataset_id.clone(),
        adapter.task_description.clone(),
        adapter.dataset_id.clone(),
    )
    .map_err(|e| ReportError::Io(e.to_string()))?;
    Ok(RunData {
        manifest,
        adapter,
        slice,
        task,
        human_rubrics,
    })
}

fn generation_record(run_dir: &Path, generator: &str, mode_slug: &str) -> Result<Option<GenerationRecord>, ReportError> {
    let path = run_dir
        .join("rubrics")
        .join(format!("{generator}__llm__{mode_slug}.json"));
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(read_json(&path)?))
}

type CellLines = (Vec<RecordedScore>, Vec<crate::pipeline::MissingRecord>);

fn cell_records(
    run_dir: &Path,
    judge: &str,
    condition: &PromptCondition,
) -> Result<Option<CellLines>, ReportError> {
    let path = run_dir
        .join("scores")
        .join(format!("{}.jsonl", cell_name(judge, condition)));
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(read_score_lines(&path)?))
}

/// Compute (or reload) the quality artifact for one generated rubric set.
fn ensure_quality(
    run_dir: &Path,
    data: &RunData,
    generator: &str,
    mode: crate::domain::GenerationMode,
    gateway: &Gateway,
    config: &AnalyzeConfig,
) -> Result<Option<QualityArtifact>, ReportError> {
    let analysis_dir = run_dir.join("analysis");
    fs::create_dir_all(&analysis_dir).map_err(|e| ReportError::Io(e.to_string()))?;
    let gen_cell = format!("{generator}__llm__{}", mode.slug());
    let artifact_path = analysis_dir.join(format!("quality__{gen_cell}.json"));
    if artifact_path.exists() {
        return Ok(Some(read_json(&artifact_path)?));
    }
    let Some(record) = generation_record(run_dir, generator, mode.slug())? else {
        return Err(ReportError::IncompleteRun(format!("rubrics/{gen_cell}.json")));
    };
    let Some(set) = record.rubric_set else {
        return Ok(None); // discarded cell, nothing to analyze
    };
    let Some(human) = &data.human_rubrics else {
        return Err(ReportError::IncompleteRun(
            "dataset/human_rubrics.json (needed for alignment tagging)".into(),
        ));
    };
    let (report, dedup, tags, labels) = analysis::quality_report(
        &set.rubrics,
        human,
        &data.task,
        gateway,
        &config.embedding_model,
        &config.tagger_model,
        config.tau,
    )?;
    let artifact = QualityArtifact {
        cell: gen_cell,
        generator: generator.to_string(),
        generation_mode: mode.slug().to_string(),
        report,
        dedup,
        tags,
        labels,
    };
    let bytes = serde_json::to_vec_pretty(&artifact).map_err(|e| ReportError::Io(e.to_string()))?;
    write_bytes(&artifact_path, &bytes)?;
    Ok(Some(artifact))
}

fn paired_scores(
    zero: &[RecordedScore],
    few: &[RecordedScore],
) -> (Vec<Option<f64>>, Vec<Option<f64>>, Vec<String>) {
    let few_by_key: BTreeMap<(String, String), f64> = few
        .iter()
        .map(|r| ((r.record.rubric_id.clone(), r.record.item_id.clone()), r.record.score))
        .collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut rubric_ids = Vec::new();
    for r in zero {
        let key = (r.record.rubric_id.clone(), r.record.item_id.clone());
        if let Some(&f) = few_by_key.get(&key) {
            a.push(Some(r.record.score));
            b.push(Some(f));
            rubric_ids.push(r.record.rubric_id.clone());
        }
    }
    (a, b, rubric_ids)
}

/// Pooled exact-match agreement where each pair is rounded at its own
/// rubric's granularity; Wilson CI over the pooled proportion.
fn pooled_agreement(
    a: &[Option<f64>],
    b: &[Option<f64>],
    rubric_ids: &[String],
    grains: &BTreeMap<String, f64>,
) -> Option<(f64, f64, f64, usize)> {
    let mut matches = 0usize;
    let mut total = 0usize;
    for ((x, y), rid) in a.iter().zip(b).zip(rubric_ids) {
        let (Some(x), Some(y)) = (x, y) else { continue };
        let g = grains.get(rid).copied().unwrap_or(1.0);
        total += 1;
        if (stats::round_to_grain(*x, g) - stats::round_to_grain(*y, g)).abs() <= g * 1e-6 {
            matches += 1;
        }
    }
    if total == 0 {
        return None;
    }
    let hits: Vec<Option<f64>> = (0..total)
        .map(|i| Some(if i < matches { 1.0 } else { 0.0 }))
        .collect();
    let ones: Vec<Option<f64>> = vec![Some(1.0); total];
    let r = stats::agreement_pct(&hits, &ones, 1.0).ok()?;
    let value = 100.0 * matches as f64 / total as f64;
    let (lo, hi) = r.ci95.unwrap_or((value, value));
    Some((value, lo, hi, total))
}

/// Run the rubric-quality analysis and emit every report table for one
/// run directory. Returns the files written.
pub fn analyze_run(
    run_dir: &Path,
    gateway: &Gateway,
    config: &AnalyzeConfig,
) -> Result<Vec<PathBuf>, ReportError> {
    let manifest_value: serde_json::Value = read_json(&run_dir.join("manifest.json"))?;
    if manifest_value.get("source_run").is_some() {
        return analyze_transfer_run(run_dir, config);
    }
    check_completeness(run_dir)?;
    let data = load_run(run_dir)?;
    let reports_dir = run_dir.join("reports");
    fs::create_dir_all(&reports_dir).map_err(|e| ReportError::Io(e.to_string()))?;
    gateway
        .set_mirror(Some(&run_dir.join("transcripts")))
        .map_err(AnalysisError::Gateway)?;
    let result = analyze_run_inner(run_dir, &data, gateway, config, &reports_dir);
    gateway.set_mirror(None).map_err(AnalysisError::Gateway)?;
    result
}

/// Every cell the run report recorded as ok must still have its score
/// file; anything else is an incomplete run, named cell by cell.
fn check_completeness(run_dir: &Path) -> Result<(), ReportError> {
    let report_path = run_dir.join("report.json");
    if !report_path.exists() {
        return Err(ReportError::IncompleteRun("report.json (run never finished)".into()));
    }
    let report: crate::pipeline::RunReport = read_json(&report_path)?;
    let missing: Vec<String> = report
        .cells
        .iter()
        .filter(|c| c.status == "ok")
        .filter(|c| !run_dir.join("scores").join(format!("{}.jsonl", c.cell)).exists())
        .map(|c| c.cell.clone())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(ReportError::IncompleteRun(format!("score files for cells: {}", missing.join(", "))))
    }
}

fn analyze_run_inner(
    run_dir: &Path,
    data: &RunData,
    gateway: &Gateway,
    config: &AnalyzeConfig,
    reports_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let manifest = &data.manifest;
    let mut files = Vec::new();

    // --- criteria analysis (Breadth / Unique / Align per rubric set) ---
    let mut criteria_rows = Vec::new();
    let mut quality_by_cell: BTreeMap<String, QualityArtifact> = BTreeMap::new();
    if manifest.rubric_sources.contains(&RubricSource::LlmGenerated) {
        let mut generators: Vec<String> = Vec::new();
        match &manifest.generator_model {
            Some(g) => generators.push(g.clone()),
            None => generators.extend(manifest.judge_models.iter().cloned()),
        }
        for generator in &generators {
            for mode in &manifest.generation_modes {
                if let Some(artifact) =
                    ensure_quality(run_dir, data, generator, *mode, gateway, config)?
                {
                    criteria_rows.push(vec![
                        manifest.dataset_id.clone(),
                        generator.clone(),
                        mode.slug().to_string(),
                        artifact.report.breadth.to_string(),
                        fmt_pct(artifact.report.unique_pct),
                        fmt_pct(artifact.report.align_pct),
                    ]);
                    quality_by_cell.insert(artifact.cell.clone(), artifact);
                }
            }
        }
    }
    files.extend(write_table(
        reports_dir,
        "criteria_analysis",
        &["Dataset", "Model", "Shot", "Breadth", "Unique", "Align"],
        &criteria_rows,
    )?);

    // --- task-specific labels (figure data) ---
    let mut specificity_rows = Vec::new();
    for artifact in quality_by_cell.values() {
        for label in &artifact.labels {
            specificity_rows.push(vec![
                manifest.dataset_id.clone(),
                artifact.generator.clone(),
                artifact.generation_mode.clone(),
                label.rubric_name.clone(),
                if label.task_specific { "task_specific" } else { "generic" }.to_string(),
                label.justification.clone(),
            ]);
        }
    }
    files.extend(write_table(
        reports_dir,
        "task_specificity",
        &["Dataset", "Model", "Shot", "Rubric", "Label", "Justification"],
        &specificity_rows,
    )?);

    // --- zero-vs-few-shot stability ---
    let mut stability_rows = Vec::new();
    let has_both_shots = manifest.scoring_modes.contains(&ScoringMode::ZeroShot)
        && manifest.scoring_modes.contains(&ScoringMode::FewShot);
    if has_both_shots {
        for judge in &manifest.judge_models {
            for source in &manifest.rubric_sources {
                let gen_modes: Vec<crate::domain::GenerationMode> = match source {
                    RubricSource::LlmGenerated => manifest.generation_modes.clone(),
                    RubricSource::HumanDefined => vec![crate::domain::GenerationMode::TaskOnly],
                };
                for gen in gen_modes {
                    let zero_cond = PromptCondition::new(gen, ScoringMode::ZeroShot, *source);
                    let few_cond = PromptCondition::new(gen, ScoringMode::FewShot, *source);
                    let (Some((zero, _)), Some((few, _))) = (
                        cell_records(run_dir, judge, &zero_cond)?,
                        cell_records(run_dir, judge, &few_cond)?,
                    ) else {
                        continue;
                    };
                    let grains = rubric_grains(run_dir, data, judge, *source, gen)?;
                    let (a, b, rubric_ids) = paired_scores(&zero, &few);
                    let Some((agree, lo, hi, n)) = pooled_agreement(&a, &b, &rubric_ids, &grains) else {
                        continue;
                    };
                    let pearson = stats::pearson(&a, &b).ok().map(|r| r.value);
                    let spearman = stats::spearman(&a, &b).ok().map(|r| r.value);
                    stability_rows.push(vec![
                        manifest.dataset_id.clone(),
                        judge.clone(),
                        source.slug().to_string(),
                        gen.slug().to_string(),
                        fmt_pct(agree),
                        fmt_pct(lo),
                        fmt_pct(hi),
                        pearson.map(fmt4).unwrap_or_else(|| "undefined".into()),
                        spearman.map(fmt4).unwrap_or_else(|| "undefined".into()),
                        n.to_string(),
                    ]);
                }
            }
        }
    }
    files.extend(write_table(
        reports_dir,
        "stability",
        &[
            "Dataset", "Model", "Source", "Generation", "Agreement", "AgreementLo", "AgreementHi",
            "Pearson", "Spearman", "N",
        ],
        &stability_rows,
    )?);

    // --- correlation with human gold scores ---
    let mut human_rows = Vec::new();
    let attr_scales: BTreeMap<String, Scale> = data
        .adapter
        .attribute_schema
        .iter()
        .map(|a| (a.name.clone(), a.scale.clone()))
        .collect();
    for judge in &manifest.judge_models {
        for condition in manifest.expand_conditions() {
            let Some((records, _missing)) = cell_records(run_dir, judge, &condition)? else {
                continue;
            };
            let Some(set) = rubric_set_for(run_dir, data, judge, &condition)? else {
                continue;
            };
            let mapping = match condition.rubric_source {
                RubricSource::HumanDefined => set
                    .rubrics
                    .iter()
                    .map(|r| (r.rubric_id.clone(), r.name.clone()))
                    .collect::<BTreeMap<_, _>>(),
                RubricSource::LlmGenerated => {
                    let generator = manifest.generator_model.as_deref().unwrap_or(judge);
                    let gen_cell = format!("{generator}__llm__{}", condition.generation_mode.slug());
                    let Some(artifact) = quality_by_cell.get(&gen_cell) else {
                        continue;
                    };
                    let tag_by_id: BTreeMap<&str, &AlignmentTag> = artifact
                        .tags
                        .iter()
                        .map(|t| (t.rubric_id.as_str(), t))
                        .collect();
                    set.rubrics
                        .iter()
                        .filter_map(|r| {
                            let canonical = artifact.dedup.merge_map.get(&r.rubric_id)?;
                            let tag = tag_by_id.get(canonical.as_str())?;
                            let attribute = tag.matched.first()?;
                            Some((r.rubric_id.clone(), attribute.clone()))
                        })
                        .collect()
                }
            };
            if mapping.is_empty() {
                continue;
            }
            let plain: Vec<crate::domain::ScoreRecord> =
                records.iter().map(|r| r.record.clone()).collect();
            let report = match stats::correlate_with_human(
                &plain,
                &set.rubrics,
                &data.slice.items,
                &attr_scales,
                &mapping,
            ) {
                Ok(r) => r,
                Err(StatError::NoMappedRubrics) => continue,
                Err(e) => return Err(e.into()),
            };
            let shot = condition.scoring_mode.slug().to_string();
            let gen = condition.generation_mode.slug().to_string();
            for stat in &report.per_rubric {
                human_rows.push(vec![
                    manifest.dataset_id.clone(),
                    judge.clone(),
                    condition.rubric_source.slug().to_string(),
                    gen.clone(),
                    shot.clone(),
                    stat.rubric_name.clone(),
                    stat.attribute.clone(),
                    stat.spearman.map(fmt4).unwrap_or_else(|| "undefined".into()),
                    stat.agreement_pct
                        .map(|(v, _, _)| fmt_pct(v))
                        .unwrap_or_else(|| "undefined".into()),
                    stat.n.to_string(),
                ]);
            }
            human_rows.push(vec![
                manifest.dataset_id.clone(),
                judge.clone(),
                condition.rubric_source.slug().to_string(),
                gen,
                shot,
                "(pooled)".into(),
                "".into(),
                report.pooled_spearman.map(fmt4).unwrap_or_else(|| "undefined".into()),
                report
                    .pooled_agreement_pct
                    .map(|(v, _, _)| fmt_pct(v))
                    .unwrap_or_else(|| "undefined".into()),
                report.pooled_n.to_string(),
            ]);
        }
    }
    files.extend(write_table(
        reports_dir,
        "human_correlation",
        &[
            "Dataset", "Model", "Source", "Generation", "Shot", "Rubric", "Attribute", "Spearman",
            "Agreement", "N",
        ],
        &human_rows,
    )?);

    // --- inter-judge reliability (shared rubric sets only) ---
    let mut reliability_rows = Vec::new();
    let mut icc2k_rows = Vec::new();
    if manifest.judge_models.len() >= 2 {
        for condition in manifest.expand_conditions() {
            let shared = match condition.rubric_source {
                RubricSource::HumanDefined => true,
                RubricSource::LlmGenerated => manifest.generator_model.is_some(),
            };
            if !shared {
                continue;
            }
            let Some(set) = rubric_set_for(run_dir, data, &manifest.judge_models[0], &condition)?
            else {
                continue;
            };
            let mut per_judge = Vec::new();
            for judge in &manifest.judge_models {
                match cell_records(run_dir, judge, &condition)? {
                    Some((records, _)) => per_judge.push((judge.clone(), records)),
                    None => continue,
                }
            }
            if per_judge.len() < 2 {
                continue;
            }
            for rubric in &set.rubrics {
                let matrix = matrix_for_rubric(&data.slice, &per_judge, &rubric.rubric_id, rubric.scale.granularity());
                let icc = stats::icc2(&matrix).ok().map(|r| r.value);
                let alpha = stats::krippendorff_alpha(&matrix, stats::AlphaMetric::Ordinal)
                    .ok()
                    .map(|r| r.value);
                let kappa = stats::fleiss_kappa(&matrix).ok().map(|r| r.value);
                let key = vec![
                    manifest.dataset_id.clone(),
                    condition.rubric_source.slug().to_string(),
                    condition.generation_mode.slug().to_string(),
                    condition.scoring_mode.slug().to_string(),
                    rubric.name.clone(),
                ];
                let mut row = key.clone();
                row.extend([
                    icc.map(fmt4).unwrap_or_else(|| "undefined".into()),
                    alpha.map(fmt4).unwrap_or_else(|| "undefined".into()),
                    kappa.map(fmt4).unwrap_or_else(|| "undefined".into()),
                    matrix.items.len().to_string(),
                ]);
                reliability_rows.push(row);
                if config.include_icc2k {
                    let icc_avg = stats::icc2k(&matrix).ok().map(|r| r.value);
                    let mut row = key;
                    row.extend([
                        icc_avg.map(fmt4).unwrap_or_else(|| "undefined".into()),
                        matrix.items.len().to_string(),
                    ]);
                    icc2k_rows.push(row);
                }
            }
        }
    }
    files.extend(write_table(
        reports_dir,
        "reliability",
        &["Dataset", "Source", "Generation", "Shot", "Rubric", "ICC", "Alpha", "FleissKappa", "Items"],
        &reliability_rows,
    )?);
    if config.include_icc2k {
        files.extend(write_table(
            reports_dir,
            "reliability_icc2k",
            &["Dataset", "Source", "Generation", "Shot", "Rubric", "ICC2k", "Items"],
            &icc2k_rows,
        )?);
    }

    Ok(files)
}

fn rubric_grains(
    run_dir: &Path,
    data: &RunData,
    judge: &str,
    source: RubricSource,
    gen: crate::domain::GenerationMode,
) -> Result<BTreeMap<String, f64>, ReportError> {
    let condition = PromptCondition::new(gen, ScoringMode::ZeroShot, source);
    let set = rubric_set_for(run_dir, data, judge, &condition)?;
    Ok(set
        .map(|s| {
            s.rubrics
                .iter()
                .map(|r| (r.rubric_id.clone(), r.scale.granularity()))
                .collect()
        })
        .unwrap_or_default())
}

fn rubric_set_for(
    run_dir: &Path,
    data: &RunData,
    judge: &str,
    condition: &PromptCondition,
) -> Result<Option<RubricSet>, ReportError> {
    match condition.rubric_source {
        RubricSource::HumanDefined => {
            let path = run_dir.join("rubrics").join("human.json");
            if !path.exists() {
                return Ok(None);
            }
            let record: GenerationRecord = read_json(&path)?;
            Ok(record.rubric_set)
        }
        RubricSource::LlmGenerated => {
            let generator = data.manifest.generator_model.as_deref().unwrap_or(judge);
            Ok(generation_record(run_dir, generator, condition.generation_mode.slug())?
                .and_then(|r| r.rubric_set))
        }
    }
}

fn matrix_for_rubric(
    slice: &SampleSlice,
    per_judge: &[(String, Vec<RecordedScore>)],
    rubric_id: &str,
    granularity: f64,
) -> ScoreMatrix {
    let items: Vec<String> = slice.items.iter().map(|i| i.item_id.clone()).collect();
    let raters: Vec<String> = per_judge.iter().map(|(j, _)| j.clone()).collect();
    let values = slice
        .items
        .iter()
        .map(|item| {
            per_judge
                .iter()
                .map(|(_, records)| {
                    records
                        .iter()
                        .find(|r| r.record.rubric_id == rubric_id && r.record.item_id == item.item_id)
                        .map(|r| r.record.score)
                })
                .collect()
        })
        .collect();
    ScoreMatrix::new(items, raters, values, granularity).expect("shape by construction")
}

/// Transfer-run analysis: the per-rubric reliability table (ICC, α, κ
/// across the transfer judges).
fn analyze_transfer_run(run_dir: &Path, config: &AnalyzeConfig) -> Result<Vec<PathBuf>, ReportError> {
    let manifest: crate::pipeline::TransferManifest = read_json(&run_dir.join("manifest.json"))?;
    let slice: SampleSlice = read_json(&run_dir.join("slice.json"))?;
    let gen_cell = format!(
        "{}__llm__{}",
        manifest.generator,
        manifest.generation_mode.slug()
    );
    let record: GenerationRecord = read_json(&run_dir.join("rubrics").join(format!("{gen_cell}.json")))?;
    let set = record
        .rubric_set
        .ok_or_else(|| ReportError::IncompleteRun(format!("rubric set {gen_cell}")))?;
    let mut per_judge = Vec::new();
    for judge in &manifest.judge_models {
        let path = run_dir.join("scores").join(format!(
            "{}__transfer__{}.jsonl",
            judge,
            manifest.scoring_mode.slug()
        ));
        if !path.exists() {
            return Err(ReportError::IncompleteRun(path.display().to_string()));
        }
        let (records, _) = read_score_lines(&path)?;
        per_judge.push((judge.clone(), records));
    }
    let reports_dir = run_dir.join("reports");
    fs::create_dir_all(&reports_dir).map_err(|e| ReportError::Io(e.to_string()))?;
    let mut rows = Vec::new();
    let mut icc2k_rows = Vec::new();
    for rubric in &set.rubrics {
        let matrix = matrix_for_rubric(&slice, &per_judge, &rubric.rubric_id, rubric.scale.granularity());
        let icc = stats::icc2(&matrix).ok().map(|r| r.value);
        let alpha = stats::krippendorff_alpha(&matrix, stats::AlphaMetric::Ordinal)
            .ok()
            .map(|r| r.value);
        let kappa = stats::fleiss_kappa(&matrix).ok().map(|r| r.value);
        rows.push(vec![
            rubric.name.clone(),
            icc.map(fmt4).unwrap_or_else(|| "undefined".into()),
            alpha.map(fmt4).unwrap_or_else(|| "undefined".into()),
            kappa.map(fmt4).unwrap_or_else(|| "undefined".into()),
            matrix.items.len().to_string(),
        ]);
        if config.include_icc2k {
            let icc_avg = stats::icc2k(&matrix).ok().map(|r| r.value);
            icc2k_rows.push(vec![
                rubric.name.clone(),
                icc_avg.map(fmt4).unwrap_or_else(|| "undefined".into()),
                matrix.items.len().to_string(),
            ]);
        }
    }
    let mut files = write_table(
        &reports_dir,
        &format!("reliability__{}", manifest.generator),
        &["Rubric", "ICC", "Alpha", "FleissKappa", "Items"],
        &rows,
    )?;
    if config.include_icc2k {
        files.extend(write_table(
            &reports_dir,
            &format!("reliability_icc2k__{}", manifest.generator),
            &["Rubric", "ICC2k", "Items"],
            &icc2k_rows,
        )?);
    }
    Ok(files)
}

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    Heatmap,
    Distribution,
}

impl FigureKind {
    pub fn parse(s: &str) -> Result<Self, ReportError> {
        match s {
            "heatmap" => Ok(Self::Heatmap),
            "distribution" => Ok(Self::Distribution),
            other => Err(ReportError::UnknownFigureKind(other.to_string())),
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn heat_color(v: f64) -> String {
    if !v.is_finite() {
        return "#cccccc".into();
    }
    // Diverging blue → white → red over [-1, 1].
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        let u = t;
        (255.0, 255.0 - 155.0 * u, 255.0 - 195.0 * u)
    } else {
        let u = -t;
        (255.0 - 195.0 * u, 255.0 - 155.0 * u, 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

/// Render a square correlation matrix as an SVG 1.1 heatmap.
pub fn svg_heatmap(labels: &[String], matrix: &[Vec<f64>]) -> String {
    let n = labels.len();
    let cell = 64;
    let margin = 140;
    let width = margin + n * cell + 20;
    let height = margin + n * cell + 20;
    let mut svg = String::new();
    write!(
        svg,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    )
    .ok();
    svg.push_str("<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    for (i, row) in matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let x = margin + j * cell;
            let y = margin + i * cell;
            writeln!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" stroke=\"#888888\" stroke-width=\"1\"/>",
                heat_color(*v)
            )
            .ok();
            let text = if v.is_finite() { format!("{v:.2}") } else { "n/a".into() };
            writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
                x + cell / 2,
                y + cell / 2 + 4,
                text
            )
            .ok();
        }
    }
    for (i, label) in labels.iter().enumerate() {
        let y = margin + i * cell + cell / 2 + 4;
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"end\">{}</text>",
            margin - 8,
            xml_escape(label)
        )
        .ok();
        let x = margin + i * cell + cell / 2;
        writeln!(
            svg,
            "<text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"end\" transform=\"rotate(-45 {x} {})\">{}</text>",
            margin - 8,
            margin - 8,
            xml_escape(label)
        )
        .ok();
    }
    svg.push_str("</svg>\n");
    svg
}

/// Render per-model five-number summaries as an SVG 1.1 box plot.
pub fn svg_distribution(title: &str, rows: &[(String, [f64; 5])]) -> String {
    let cell = 70;
    let margin_left = 140;
    let margin_top = 50;
    let plot_width = 420;
    let width = margin_left + plot_width + 30;
    let height = margin_top + rows.len() * cell + 40;
    let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, q)| {
        (lo.min(q[0]), hi.max(q[4]))
    });
    let span = if (hi - lo).abs() < 1e-9 { 1.0 } else { hi - lo };
    let sx = |v: f64| margin_left as f64 + (v - lo) / span * plot_width as f64;
    let mut svg = String::new();
    write!(
        svg,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    )
    .ok();
    svg.push_str("<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        width / 2,
        xml_escape(title)
    )
    .ok();
    for (i, (label, q)) in rows.iter().enumerate() {
        let cy = margin_top + i * cell + cell / 2;
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"end\">{}</text>",
            margin_left - 10,
            cy + 4,
            xml_escape(label)
        )
        .ok();
        // whiskers
        writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{cy}\" x2=\"{:.1}\" y2=\"{cy}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            sx(q[0]),
            sx(q[4])
        )
        .ok();
        for v in [q[0], q[4]] {
            writeln!(
                svg,
                "<line x1=\"{:.1}\" y1=\"{}\" x2=\"{:.1}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>",
                sx(v),
                cy - 10,
                sx(v),
                cy + 10
            )
            .ok();
        }
        // box
        writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{}\" width=\"{:.1}\" height=\"28\" fill=\"#9ecae1\" stroke=\"#333333\" stroke-width=\"1\"/>",
            sx(q[1]),
            cy - 14,
            (sx(q[3]) - sx(q[1])).max(1.0)
        )
        .ok();
        // median
        writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{}\" x2=\"{:.1}\" y2=\"{}\" stroke=\"#08306b\" stroke-width=\"2\"/>",
            sx(q[2]),
            cy - 14,
            sx(q[2]),
            cy + 14
        )
        .ok();
    }
    svg.push_str("</svg>\n");
    svg
}

fn quantiles(sorted: &[f64]) -> [f64; 5] {
    let q = |p: f64| -> f64 {
        let idx = p * (sorted.len() as f64 - 1.0);
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        if lo == hi {
            sorted[lo]
        } else {
            sorted[lo] + (idx - lo as f64) * (sorted[hi] - sorted[lo])
        }
    };
    [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)]
}

/// Judge ids with their pooled score vectors, aligned on (rubric, item) keys.
type JudgeVectors = (Vec<String>, Vec<Vec<Option<f64>>>);

fn transfer_vectors(run_dir: &Path) -> Result<JudgeVectors, ReportError> {
    let manifest: crate::pipeline::TransferManifest = read_json(&run_dir.join("manifest.json"))?;
    let mut keys: Vec<(String, String)> = Vec::new();
    let mut per_judge: Vec<BTreeMap<(String, String), f64>> = Vec::new();
    for judge in &manifest.judge_models {
        let path = run_dir.join("scores").join(format!(
            "{}__transfer__{}.jsonl",
            judge,
            manifest.scoring_mode.slug()
        ));
        if !path.exists() {
            return Err(ReportError::IncompleteRun(path.display().to_string()));
        }
        let (records, _) = read_score_lines(&path)?;
        let map: BTreeMap<(String, String), f64> = records
            .iter()
            .map(|r| ((r.record.rubric_id.clone(), r.record.item_id.clone()), r.record.score))
            .collect();
        for key in map.keys() {
            if !keys.contains(key) {
                keys.push(key.clone());
            }
        }
        per_judge.push(map);
    }
    keys.sort();
    let vectors = per_judge
        .into_iter()
        .map(|map| keys.iter().map(|k| map.get(k).copied()).collect())
        .collect();
    Ok((manifest.judge_models, vectors))
}

/// Emit figure data (CSV) and a rendered SVG for one run.
pub fn plot_run(
    run_dir: &Path,
    kind: FigureKind,
    rubric_name: Option<&str>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|e| ReportError::Io(e.to_string()))?;
    match kind {
        FigureKind::Heatmap => {
            let (judges, vectors) = transfer_vectors(run_dir)?;
            let n = judges.len();
            let mut matrix = vec![vec![f64::NAN; n]; n];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        matrix[i][j] = 1.0;
                    } else {
                        matrix[i][j] = stats::spearman(&vectors[i], &vectors[j])
                            .map(|r| r.value)
                            .unwrap_or(f64::NAN);
                    }
                }
            }
            let mut rows = Vec::new();
            for (i, judge) in judges.iter().enumerate() {
                let mut row = vec![judge.clone()];
                row.extend(matrix[i].iter().map(|v| {
                    if v.is_finite() {
                        fmt4(*v)
                    } else {
                        "undefined".to_string()
                    }
                }));
                rows.push(row);
            }
            let mut header = vec!["judge"];
            let judge_refs: Vec<&str> = judges.iter().map(String::as_str).collect();
            header.extend(judge_refs);
            let mut files = write_table(out_dir, "fig_heatmap", &header, &rows)?;
            let svg = svg_heatmap(&judges, &matrix);
            let svg_path = out_dir.join("fig_heatmap.svg");
            write_bytes(&svg_path, svg.as_bytes())?;
            files.push(svg_path);
            Ok(files)
        }
        FigureKind::Distribution => {
            let name = rubric_name.ok_or_else(|| {
                ReportError::BadRequest("distribution figures need a rubric name (--rubric)".into())
            })?;
            let folded = crate::domain::normalize_text(name);
            let scores_dir = run_dir.join("scores");
            let rubrics_dir = run_dir.join("rubrics");
            // rubric ids whose name matches, across every persisted set
            let mut matching_ids = Vec::new();
            for entry in list_sorted(&rubrics_dir)? {
                let record: GenerationRecord = read_json(&entry)?;
                if let Some(set) = record.rubric_set {
                    for r in set.rubrics {
                        if crate::domain::normalize_text(&r.name) == folded
                            && !matching_ids.contains(&r.rubric_id)
                        {
                            matching_ids.push(r.rubric_id.clone());
                        }
                    }
                }
            }
            if matching_ids.is_empty() {
                return Err(ReportError::BadRequest(format!(
                    "no rubric named {name:?} in this run"
                )));
            }
            let mut per_model: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for entry in list_sorted(&scores_dir)? {
                let (records, _) = read_score_lines(&entry)?;
                for r in records {
                    if matching_ids.contains(&r.record.rubric_id) {
                        per_model
                            .entry(r.record.judge_model.clone())
                            .or_default()
                            .push(r.record.score);
                    }
                }
            }
            let mut rows = Vec::new();
            let mut quantile_rows = Vec::new();
            for (model, mut scores) in per_model {
                scores.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                let q = quantiles(&scores);
                rows.push(vec![
                    model.clone(),
                    fmt4(q[0]),
                    fmt4(q[1]),
                    fmt4(q[2]),
                    fmt4(q[3]),
                    fmt4(q[4]),
                    scores.len().to_string(),
                ]);
                quantile_rows.push((model, q));
            }
            let mut files = write_table(
                out_dir,
                "fig_distribution",
                &["Model", "Min", "Q1", "Median", "Q3", "Max", "N"],
                &rows,
            )?;
            let svg = svg_distribution(&format!("Score distribution: {name}"), &quantile_rows);
            let svg_path = out_dir.join("fig_distribution.svg");
            write_bytes(&svg_path, svg.as_bytes())?;
            files.push(svg_path);
            Ok(files)
        }
    }
}

fn list_sorted(dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ReportError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    Ok(entries)
}
