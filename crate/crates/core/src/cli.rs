//! The `ger` command line: `run`, `transfer`, `analyze`, and `plot`,
//! with a config file for endpoint/model settings and a `--mock`
//! script for fully offline operation.
//!
//! Exit codes: 0 ok, 1 partial (some cells failed), 2 fatal.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::domain::{GenerationMode, ScoringMode};
use crate::gateway::{Gateway, HttpBackend, MockBackend, MockScript, RetryPolicy};
use crate::pipeline::{self, RunManifest};
use crate::prompts::TemplateSet;
use crate::report::{self, AnalyzeConfig, FigureKind};

#[derive(Debug, Parser)]
#[command(name = "ger", version, about = "Rubric generation and scoring harness for LLM judges")]
pub struct Cli {
    /// TOML config with endpoint, models, limiter, and cache settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Transcript cache directory (overrides the config file).
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Scripted mock backend: run fully offline from this script file.
    #[arg(long, global = true)]
    pub mock: Option<PathBuf>,
    /// Override the manifest's sampling seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory that holds run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub runs_root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute the full experiment matrix described by a manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// One judge × task-only × zero-shot with sanity bounds only.
        #[arg(long)]
        live_smoke: bool,
    },
    /// Apply a source run's rubrics across several judge models.
    Transfer {
        /// Source run id (under the runs root) or run directory path.
        #[arg(long = "from")]
        from: String,
        #[arg(long, value_delimiter = ',')]
        judges: Vec<String>,
        #[arg(long, default_value = "task_only")]
        gen_mode: String,
        #[arg(long, default_value = "zero_shot")]
        scoring_mode: String,
        /// Model whose rubric set to transfer (defaults to the source
        /// run's single judge).
        #[arg(long)]
        source_judge: Option<String>,
    },
    /// Emit criteria / stability / human-correlation / reliability tables.
    Analyze {
        /// Run ids or directories.
        runs: Vec<String>,
        /// Also emit ICC(2,k) average-measures reliability tables.
        #[arg(long)]
        icc2k: bool,
    },
    /// Emit figure data (CSV) plus a rendered SVG.
    Plot {
        run: String,
        #[arg(long)]
        kind: String,
        /// Rubric name, required for distribution figures.
        #[arg(long)]
        rubric: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn default_api_key_env() -> String {
    "GER_API_KEY".into()
}

fn default_in_flight() -> usize {
    4
}

fn default_retry_attempts() -> u32 {
    3
}

fn default_retry_delay() -> u64 {
    250
}

fn default_cache_dir() -> String {
    ".ger-cache".into()
}

/// Settings from `--config`; every field has a workable default.
#[derive(Debug, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub base_url: Option<String>,
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub retry_max_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub embedding_model: String,
    pub tagger_model: String,
    pub dedup_tau: f64,
    pub cache_dir: String,
    pub template_dir: Option<String>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let analyze = AnalyzeConfig::default();
        Self {
            base_url: None,
            api_key_env: default_api_key_env(),
            max_in_flight: default_in_flight(),
            retry_max_attempts: default_retry_attempts(),
            retry_base_delay_ms: default_retry_delay(),
            embedding_model: analyze.embedding_model,
            tagger_model: analyze.tagger_model,
            dedup_tau: analyze.tau,
            cache_dir: default_cache_dir(),
            template_dir: None,
        }
    }
}

impl HarnessConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    fn analyze_config(&self) -> AnalyzeConfig {
        AnalyzeConfig {
            embedding_model: self.embedding_model.clone(),
            tagger_model: self.tagger_model.clone(),
            tau: self.dedup_tau,
            include_icc2k: false,
        }
    }
}

fn build_gateway(cli: &Cli, config: &HarnessConfig) -> anyhow::Result<Gateway> {
    let backend: Box<dyn crate::gateway::ChatBackend> = match &cli.mock {
        Some(script_path) => {
            let script = MockScript::from_file(script_path)
                .with_context(|| format!("loading mock script {}", script_path.display()))?;
            Box::new(MockBackend::new(script)?)
        }
        None => {
            let base_url = config.base_url.as_deref().ok_or_else(|| {
                anyhow::anyhow!(
                    "no endpoint configured: set base_url in the config file or pass --mock <script>"
                )
            })?;
            Box::new(HttpBackend::from_env(base_url, &config.api_key_env))
        }
    };
    let cache_dir = cli
        .cache_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.cache_dir));
    let gateway = Gateway::new(backend)
        .with_cache_dir(&cache_dir)
        .with_context(|| format!("opening cache {}", cache_dir.display()))?
        .with_limiter(config.max_in_flight)
        .with_retry(RetryPolicy {
            max_attempts: config.retry_max_attempts,
            base_delay_ms: config.retry_base_delay_ms,
        });
    Ok(gateway)
}

fn templates_from(config: &HarnessConfig) -> anyhow::Result<TemplateSet> {
    match &config.template_dir {
        Some(dir) => TemplateSet::from_dir(dir).map_err(|e| anyhow::anyhow!(e.to_string())),
        None => Ok(TemplateSet::builtin()),
    }
}

fn parse_gen_mode(s: &str) -> anyhow::Result<GenerationMode> {
    GenerationMode::ALL
        .into_iter()
        .find(|m| m.slug() == s)
        .ok_or_else(|| anyhow::anyhow!("unknown generation mode {s:?} (task_only, task_plus_contexts, task_plus_contrastive)"))
}

fn parse_scoring_mode(s: &str) -> anyhow::Result<ScoringMode> {
    ScoringMode::ALL
        .into_iter()
        .find(|m| m.slug() == s)
        .ok_or_else(|| anyhow::anyhow!("unknown scoring mode {s:?} (zero_shot, few_shot)"))
}

fn resolve_run_dir(runs_root: &Path, run: &str) -> anyhow::Result<PathBuf> {
    let direct = PathBuf::from(run);
    if direct.join("manifest.json").exists() {
        return Ok(direct);
    }
    let nested = runs_root.join(run);
    if nested.join("manifest.json").exists() {
        return Ok(nested);
    }
    bail!(
        "run {run:?} not found (looked for {}/manifest.json and {}/manifest.json)",
        direct.display(),
        nested.display()
    )
}

/// Run the CLI; the returned code is the process exit status.
pub fn execute(cli: Cli) -> anyhow::Result<i32> {
    let config = HarnessConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Run { manifest, live_smoke } => {
            let (mut manifest_data, dataset_dir) = RunManifest::load(manifest)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            if let Some(seed) = cli.seed {
                manifest_data.seed = seed;
            }
            if *live_smoke {
                manifest_data.judge_models.truncate(1);
                manifest_data.generation_modes = vec![GenerationMode::TaskOnly];
                manifest_data.scoring_modes = vec![ScoringMode::ZeroShot];
                manifest_data.rubric_sources = vec![crate::domain::RubricSource::LlmGenerated];
                manifest_data.run_id = format!("{}-smoke", manifest_data.run_id);
            }
            let gateway = build_gateway(&cli, &config)?;
            let templates = templates_from(&config)?;
            let outcome = pipeline::run_experiment(
                &manifest_data,
                &dataset_dir,
                &cli.runs_root,
                &gateway,
                &templates,
            )
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            for cell in &outcome.report.cells {
                match &cell.error {
                    None => println!(
                        "cell {}: {} ({} records, {} missing, {} rubrics x {} items)",
                        cell.cell, cell.status, cell.records, cell.missing, cell.rubrics, cell.items
                    ),
                    Some(err) => println!("cell {}: {} ({err})", cell.cell, cell.status),
                }
            }
            println!(
                "run {} complete: {} cells ({} failed), {} records, {} missing, {} new backend calls",
                outcome.report.run_id,
                outcome.report.cells.len(),
                outcome.report.failed_cells,
                outcome.report.total_records,
                outcome.report.total_missing,
                outcome.new_backend_calls
            );
            if *live_smoke {
                let failures = smoke_check(&outcome.run_dir)?;
                if failures.is_empty() {
                    println!("live-smoke: all sanity bounds hold");
                } else {
                    for f in &failures {
                        println!("live-smoke FAIL: {f}");
                    }
                    return Ok(1);
                }
            }
            let all_failed = !outcome.report.cells.is_empty()
                && outcome.report.failed_cells == outcome.report.cells.len();
            if all_failed {
                Ok(2)
            } else if outcome.report.failed_cells > 0 {
                Ok(1)
            } else {
                Ok(0)
            }
        }
        Command::Transfer {
            from,
            judges,
            gen_mode,
            scoring_mode,
            source_judge,
        } => {
            if judges.is_empty() {
                bail!("--judges requires at least one model id");
            }
            let source_dir = resolve_run_dir(&cli.runs_root, from)?;
            let gateway = build_gateway(&cli, &config)?;
            let templates = templates_from(&config)?;
            let outcome = pipeline::run_transfer(
                &source_dir,
                judges,
                parse_gen_mode(gen_mode)?,
                parse_scoring_mode(scoring_mode)?,
                source_judge.as_deref(),
                &cli.runs_root,
                &gateway,
                &templates,
            )
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            println!(
                "transfer {} complete: {} judges, {} rubrics, {} records, {} missing, {} new backend calls",
                outcome.report.run_id,
                judges.len(),
                outcome.matrices.len(),
                outcome.report.total_records,
                outcome.report.total_missing,
                outcome.new_backend_calls
            );
            println!("matrices under {}", outcome.run_dir.join("matrices").display());
            Ok(0)
        }
        Command::Analyze { runs, icc2k } => {
            if runs.is_empty() {
                bail!("analyze needs at least one run id");
            }
            let gateway = build_gateway(&cli, &config)?;
            let mut analyze_config = config.analyze_config();
            analyze_config.include_icc2k = *icc2k;
            for run in runs {
                let run_dir = resolve_run_dir(&cli.runs_root, run)?;
                let files = report::analyze_run(&run_dir, &gateway, &analyze_config)
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                for f in files {
                    println!("wrote {}", f.display());
                }
            }
            Ok(0)
        }
        Command::Plot { run, kind, rubric, out } => {
            let run_dir = resolve_run_dir(&cli.runs_root, run)?;
            let kind = FigureKind::parse(kind).map_err(|e| anyhow::anyhow!("{e}"))?;
            let out_dir = out.clone().unwrap_or_else(|| run_dir.join("reports"));
            let files = report::plot_run(&run_dir, kind, rubric.as_deref(), &out_dir)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
    }
}

/// Sanity bounds for `--live-smoke`: plausible breadth, non-empty cells
/// with exact record conservation, and every score inside its scale.
fn smoke_check(run_dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut failures = Vec::new();
    let rubrics_dir = run_dir.join("rubrics");
    let mut sets = Vec::new();
    for entry in std::fs::read_dir(&rubrics_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let record: pipeline::GenerationRecord =
            serde_json::from_slice(&std::fs::read(&path)?)?;
        match record.rubric_set {
            Some(set) => {
                let breadth = set.len();
                if !(3..=10).contains(&breadth) {
                    failures.push(format!(
                        "breadth {breadth} outside [3, 10] for {}",
                        record.cell
                    ));
                }
                sets.push(set);
            }
            None => failures.push(format!("rubric set {} was discarded", record.cell)),
        }
    }
    if sets.is_empty() {
        failures.push("no rubric sets were generated".into());
    }
    let scales: std::collections::BTreeMap<String, crate::domain::Scale> = sets
        .iter()
        .flat_map(|s| s.rubrics.iter())
        .map(|r| (r.rubric_id.clone(), r.scale.clone()))
        .collect();
    for entry in std::fs::read_dir(run_dir.join("scores"))? {
        let path = entry?.path();
        let (records, missing) = pipeline::read_score_lines(&path)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        if records.is_empty() {
            failures.push(format!("cell {} has no scored records", path.display()));
        }
        let rubric_count = sets.first().map(|s| s.len()).unwrap_or(0);
        let per_rubric: std::collections::BTreeSet<&str> = records
            .iter()
            .map(|r| r.record.item_id.as_str())
            .chain(missing.iter().map(|m| m.item_id.as_str()))
            .collect();
        if rubric_count > 0 && (records.len() + missing.len()) % per_rubric.len().max(1) != 0 {
            failures.push(format!(
                "cell {}: records + missing is not a multiple of the item count",
                path.display()
            ));
        }
        for r in &records {
            if let Some(scale) = scales.get(&r.record.rubric_id) {
                if r.record.score < scale.numeric_min - 1e-9
                    || r.record.score > scale.numeric_max + 1e-9
                {
                    failures.push(format!(
                        "score {} outside scale for rubric {}",
                        r.record.score, r.record.rubric_id
                    ));
                }
            }
        }
    }
    Ok(failures)
}
