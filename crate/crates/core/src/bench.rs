//! Benchmark harness: load a suite of task manifests, run sessions across
//! modes and prompt variants, score results against ground truth, and render
//! report tables.
//!
//! A task directory holds a manifest, two prompts of differing verbosity, a
//! reference script, a ground-truth image, and optional data files staged
//! into the work dir. Cells (mode x variant) run sequentially to keep
//! gateway usage predictable; tasks inside a cell may run on a small worker
//! pool. Session failures become failed tasks, never suite aborts.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embed::TextEmbedder;
use crate::executor::ExecConfig;
use crate::gateway::{Gateway, GatewayError, ReplayMode, RequestProfile, Transcript};
use crate::generator::RetrievalConfig;
use crate::metrics::{self, AggregateScores, ImageBuffer, MetricError, TaskScore};
use crate::orchestrator::{self, Mode, SessionConfig, SessionStatus};
use crate::templates::TemplateSet;
use crate::vecindex::VectorIndex;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("suite directory not found: {0}")]
    SuiteDirMissing(PathBuf),
    #[error("task {task}: invalid manifest field {field}")]
    ManifestInvalid { task: String, field: String },
    #[error("missing asset: {0}")]
    MissingAsset(PathBuf),
    #[error("rag mode requested but no index/corpus was provided")]
    RagRequiresIndex,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskCategory {
    Canonical,
    Regression,
    Science,
}

/// Which of the two prompt verbosities to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Quick,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::Quick => write!(f, "quick"),
        }
    }
}

/// One benchmark task, all asset paths resolved against its directory.
#[derive(Debug, Clone)]
pub struct BenchmarkTask {
    pub id: String,
    pub category: TaskCategory,
    pub full_prompt: PathBuf,
    pub quick_prompt: PathBuf,
    pub reference_script: PathBuf,
    pub ground_truth_image: PathBuf,
    /// File the generated script must produce in its work dir.
    pub expected_output: String,
    /// Files copied into the work dir before the session runs.
    pub data_files: Vec<PathBuf>,
}

impl BenchmarkTask {
    pub fn prompt_path(&self, variant: Variant) -> &Path {
        match variant {
            Variant::Full => &self.full_prompt,
            Variant::Quick => &self.quick_prompt,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ManifestWire {
    id: Option<String>,
    category: Option<String>,
    full_prompt: Option<String>,
    quick_prompt: Option<String>,
    reference_script: Option<String>,
    ground_truth: Option<String>,
    expected_output: Option<String>,
    #[serde(default)]
    data: Vec<String>,
}

/// Tasks plus non-fatal findings.
#[derive(Debug)]
pub struct SuiteLoad {
    pub tasks: Vec<BenchmarkTask>,
    pub warnings: Vec<String>,
}

impl SuiteLoad {
    /// Task counts per category, in declaration order of the enum.
    pub fn category_counts(&self) -> [(TaskCategory, usize); 3] {
        let count = |cat| self.tasks.iter().filter(|t| t.category == cat).count();
        [
            (TaskCategory::Canonical, count(TaskCategory::Canonical)),
            (TaskCategory::Regression, count(TaskCategory::Regression)),
            (TaskCategory::Science, count(TaskCategory::Science)),
        ]
    }
}

/// Load and validate every task under `dir`. Tasks come back sorted by id.
pub fn load_suite(dir: &Path) -> Result<SuiteLoad, BenchError> {
    if !dir.is_dir() {
        return Err(BenchError::SuiteDirMissing(dir.to_path_buf()));
    }
    let mut tasks = Vec::new();
    let mut warnings = Vec::new();
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();

    for task_dir in subdirs {
        let dir_name = task_dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let manifest_path = ["manifest.toml", "manifest"]
            .iter()
            .map(|name| task_dir.join(name))
            .find(|p| p.is_file());
        let Some(manifest_path) = manifest_path else {
            warnings.push(format!("{dir_name}: no manifest, skipped"));
            continue;
        };
        let raw = std::fs::read_to_string(&manifest_path)?;
        let wire: ManifestWire = toml::from_str(&raw).map_err(|e| BenchError::ManifestInvalid {
            task: dir_name.clone(),
            field: e.to_string(),
        })?;
        let task = validate_manifest(&task_dir, &dir_name, wire, &mut warnings)?;
        if tasks.iter().any(|t: &BenchmarkTask| t.id == task.id) {
            return Err(BenchError::ManifestInvalid { task: task.id, field: "id (duplicate)".into() });
        }
        tasks.push(task);
    }
    if tasks.is_empty() {
        warnings.push(format!("suite {} contains no tasks", dir.display()));
    }
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(SuiteLoad { tasks, warnings })
}

fn validate_manifest(
    task_dir: &Path,
    dir_name: &str,
    wire: ManifestWire,
    warnings: &mut Vec<String>,
) -> Result<BenchmarkTask, BenchError> {
    let field = |name: &str, value: Option<String>| -> Result<String, BenchError> {
        value.filter(|v| !v.is_empty()).ok_or_else(|| BenchError::ManifestInvalid {
            task: dir_name.to_string(),
            field: name.to_string(),
        })
    };
    let id = field("id", wire.id)?;
    if id != dir_name {
        warnings.push(format!("task {id}: directory is named {dir_name}"));
    }
    let category = match field("category", wire.category)?.as_str() {
        "canonical" => TaskCategory::Canonical,
        "regression" => TaskCategory::Regression,
        "science" => TaskCategory::Science,
        _ => {
            return Err(BenchError::ManifestInvalid { task: id, field: "category".into() });
        }
    };

    let asset = |rel: &str| -> Result<PathBuf, BenchError> {
        let path = task_dir.join(rel);
        if !path.is_file() {
            return Err(BenchError::MissingAsset(path));
        }
        Ok(path)
    };
    let full_prompt = asset(&field("full_prompt", wire.full_prompt)?)?;
    let quick_prompt = asset(&field("quick_prompt", wire.quick_prompt)?)?;
    for (name, path) in [("full_prompt", &full_prompt), ("quick_prompt", &quick_prompt)] {
        if std::fs::read_to_string(path)?.trim().is_empty() {
            return Err(BenchError::ManifestInvalid { task: id, field: format!("{name} (empty)") });
        }
    }
    let reference_script = asset(&field("reference_script", wire.reference_script)?)?;
    let ground_truth_image = asset(&field("ground_truth", wire.ground_truth)?)?;
    ImageBuffer::from_png(&ground_truth_image).map_err(|_| BenchError::ManifestInvalid {
        task: id.clone(),
        field: "ground_truth (not a decodable PNG)".into(),
    })?;
    let expected_output = field("expected_output", wire.expected_output)?;
    let data_files =
        wire.data.iter().map(|rel| asset(rel)).collect::<Result<Vec<_>, _>>()?;

    Ok(BenchmarkTask {
        id,
        category,
        full_prompt,
        quick_prompt,
        reference_script,
        ground_truth_image,
        expected_output,
        data_files,
    })
}

/// Which modes and prompt variants to run.
#[derive(Debug, Clone)]
pub struct RunMatrix {
    pub modes: Vec<Mode>,
    pub variants: Vec<Variant>,
}

/// Where sessions get their gateway.
pub enum GatewaySource {
    /// One live gateway shared by every session.
    Shared(Arc<Gateway>),
    /// Per-session replay transcripts named `<task>.<mode>.<variant>.jsonl`.
    ReplayDir { dir: PathBuf, mode: ReplayMode },
}

impl GatewaySource {
    fn for_session(&self, task: &str, mode: Mode, variant: Variant) -> Result<Arc<Gateway>, GatewayError> {
        match self {
            GatewaySource::Shared(gateway) => Ok(Arc::clone(gateway)),
            GatewaySource::ReplayDir { dir, mode: replay_mode } => {
                let path = dir.join(format!("{task}.{mode}.{variant}.jsonl"));
                let transcript = Transcript::load(&path)?;
                Ok(Arc::new(Gateway::replay(transcript, *replay_mode)))
            }
        }
    }
}

/// Retrieval backends shared by every RAG session in the run.
pub struct BenchRetrieval {
    pub index: VectorIndex,
    pub corpus: Corpus,
    pub embedder: Box<dyn TextEmbedder>,
}

pub struct BenchServices {
    pub gateway: GatewaySource,
    pub retrieval: Option<BenchRetrieval>,
    pub templates: TemplateSet,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Interpreter argv; each session appends its script path.
    pub interpreter_cmd: Vec<String>,
    pub timeout: std::time::Duration,
    pub max_iterations: usize,
    pub retrieval: RetrievalConfig,
    pub profile: RequestProfile,
    /// LPIPS scorer command template with {A} {B} placeholders.
    pub lpips_plugin: Option<String>,
    /// Downscale mismatched images to the common size before scoring.
    pub resize: bool,
    /// Worker threads per cell.
    pub jobs: usize,
    /// Session work dirs and report files land here.
    pub out_dir: PathBuf,
}

/// Scores for one (mode, variant) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub mode: Mode,
    pub variant: Variant,
    pub scores: Vec<TaskScore>,
    pub aggregate: AggregateScores,
}

/// The whole run: config summary, per-cell scores, wall-clock bounds.
/// Timestamps appear only in the JSON rendering; CSV and markdown are
/// deterministic under replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub run_config: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub cells: Vec<CellReport>,
    pub warnings: Vec<String>,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Run every (task, mode, variant) combination and aggregate per cell.
pub fn run_suite(
    tasks: &[BenchmarkTask],
    matrix: &RunMatrix,
    services: &BenchServices,
    config: &BenchConfig,
) -> Result<BenchReport, BenchError> {
    if matrix.modes.contains(&Mode::Rag) && services.retrieval.is_none() {
        return Err(BenchError::RagRequiresIndex);
    }
    let started_unix = unix_now();
    let mut cells = Vec::new();
    let mut warnings = Vec::new();

    // Canonical cell order, independent of flag order.
    let mut modes = matrix.modes.clone();
    modes.sort_by_key(|m| m.to_string());
    modes.dedup();
    let mut variants = matrix.variants.clone();
    variants.sort_by_key(|v| v.to_string());
    variants.dedup();

    for &mode in &modes {
        for &variant in &variants {
            let (cell, mut cell_warnings) = run_cell(tasks, mode, variant, services, config)?;
            warnings.append(&mut cell_warnings);
            if let Some(cell) = cell {
                cells.push(cell);
            }
        }
    }
    if tasks.is_empty() {
        warnings.push("no tasks to run".into());
    }

    Ok(BenchReport {
        run_config: config_summary(&modes, &variants, config),
        started_unix,
        finished_unix: unix_now(),
        cells,
        warnings,
    })
}

fn config_summary(modes: &[Mode], variants: &[Variant], config: &BenchConfig) -> String {
    let modes: Vec<String> = modes.iter().map(Mode::to_string).collect();
    let variants: Vec<String> = variants.iter().map(Variant::to_string).collect();
    format!(
        "modes={} variants={} interpreter={} max_iterations={} k={} budget_chars={} jobs={}",
        modes.join("+"),
        variants.join("+"),
        config.interpreter_cmd.join(" "),
        config.max_iterations,
        config.retrieval.k,
        config.retrieval.budget_chars,
        config.jobs.max(1),
    )
}

type TaskOutcome = (TaskScore, Vec<String>);

fn run_cell(
    tasks: &[BenchmarkTask],
    mode: Mode,
    variant: Variant,
    services: &BenchServices,
    config: &BenchConfig,
) -> Result<(Option<CellReport>, Vec<String>), BenchError> {
    if tasks.is_empty() {
        return Ok((None, Vec::new()));
    }
    let results: Mutex<Vec<Option<TaskOutcome>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    let workers = config.jobs.max(1).min(tasks.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let outcome = run_task(&tasks[i], mode, variant, services, config);
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut scores = Vec::with_capacity(tasks.len());
    let mut warnings = Vec::new();
    for slot in results.into_inner().unwrap() {
        let (score, mut task_warnings) = slot.expect("every task ran");
        scores.push(score);
        warnings.append(&mut task_warnings);
    }
    let aggregate = metrics::aggregate(&scores)?;
    Ok((Some(CellReport { mode, variant, scores, aggregate }), warnings))
}

/// One session plus scoring. Never panics the suite: failures come back as
/// a failed TaskScore with a warning.
fn run_task(
    task: &BenchmarkTask,
    mode: Mode,
    variant: Variant,
    services: &BenchServices,
    config: &BenchConfig,
) -> (TaskScore, Vec<String>) {
    let mut warnings = Vec::new();
    let failed = |warnings: Vec<String>| {
        (
            TaskScore { task_id: task.id.clone(), passed: false, ssim: None, psnr: None, lpips: None },
            warnings,
        )
    };
    let label = format!("{}/{}/{}", mode, variant, task.id);

    let work_dir = config.out_dir.join(mode.to_string()).join(variant.to_string()).join(&task.id);
    if let Err(e) = std::fs::create_dir_all(&work_dir) {
        warnings.push(format!("{label}: cannot create work dir: {e}"));
        return failed(warnings);
    }
    for data in &task.data_files {
        let dest = work_dir.join(data.file_name().unwrap_or_default());
        if let Err(e) = std::fs::copy(data, &dest) {
            warnings.push(format!("{label}: cannot stage {}: {e}", data.display()));
            return failed(warnings);
        }
    }
    let prompt = match std::fs::read_to_string(task.prompt_path(variant)) {
        Ok(p) => p,
        Err(e) => {
            warnings.push(format!("{label}: cannot read prompt: {e}"));
            return failed(warnings);
        }
    };

    let gateway = match services.gateway.for_session(&task.id, mode, variant) {
        Ok(g) => g,
        Err(e) => {
            warnings.push(format!("{label}: gateway unavailable: {e}"));
            return failed(warnings);
        }
    };
    let session_config = SessionConfig {
        mode,
        max_iterations: config.max_iterations,
        exec: ExecConfig {
            interpreter_cmd: config.interpreter_cmd.clone(),
            work_dir: work_dir.clone(),
            timeout: config.timeout,
            expected_artifact: Some(task.expected_output.clone()),
        },
        retrieval: config.retrieval.clone(),
        profile: config.profile.clone(),
    };
    let session_services = orchestrator::Services {
        gateway: &gateway,
        retrieval: services.retrieval.as_ref().map(|r| orchestrator::Retrieval {
            index: &r.index,
            corpus: &r.corpus,
            embedder: r.embedder.as_ref(),
        }),
        templates: &services.templates,
    };

    let session = match orchestrator::run_session(prompt.trim_end(), &session_config, &session_services)
    {
        Ok(s) => s,
        Err(e) => {
            warnings.push(format!("{label}: session setup failed: {e}"));
            return failed(warnings);
        }
    };
    if let Err(e) = session.save(&work_dir) {
        warnings.push(format!("{label}: could not write session.json: {e}"));
    }
    if session.status != SessionStatus::Success {
        if let Some(reason) = &session.failure_reason {
            warnings.push(format!("{label}: gateway failure: {reason}"));
        }
        return failed(warnings);
    }

    let candidate = work_dir.join(&task.expected_output);
    let mut score = TaskScore {
        task_id: task.id.clone(),
        passed: true,
        ssim: None,
        psnr: None,
        lpips: None,
    };
    match score_pair(&candidate, &task.ground_truth_image, config) {
        Ok((ssim, psnr)) => {
            score.ssim = Some(ssim);
            score.psnr = Some(psnr);
        }
        Err(e) => warnings.push(format!("{label}: scoring failed: {e}")),
    }
    if let Some(template) = &config.lpips_plugin {
        match metrics::lpips(&candidate, &task.ground_truth_image, template) {
            Ok(v) => score.lpips = Some(v),
            Err(e) => warnings.push(format!("{label}: lpips unavailable: {e}")),
        }
    }
    (score, warnings)
}

fn score_pair(
    candidate: &Path,
    ground_truth: &Path,
    config: &BenchConfig,
) -> Result<(f64, f64), MetricError> {
    let mut a = ImageBuffer::from_png(candidate)?;
    let mut b = ImageBuffer::from_png(ground_truth)?;
    if config.resize && (a.width, a.height) != (b.width, b.height) && a.channels == b.channels {
        let w = a.width.min(b.width);
        let h = a.height.min(b.height);
        if (a.width, a.height) != (w, h) {
            a = metrics::resize_nearest(&a, w, h);
        }
        if (b.width, b.height) != (w, h) {
            b = metrics::resize_nearest(&b, w, h);
        }
    }
    Ok((metrics::ssim(&a, &b)?, metrics::psnr(&a, &b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

fn fmt_opt(value: Option<f64>, decimals: usize) -> String {
    match value {
        None => "n/a".to_string(),
        Some(v) if v.is_infinite() => "inf".to_string(),
        Some(v) => format!("{v:.decimals$}"),
    }
}

/// Render a report. Markdown mirrors the aggregate table layout
/// (pass@1/SSIM/PSNR/LPIPS per cell); CSV is one wide deterministic table;
/// JSON is a lossless dump.
pub fn render_report(report: &BenchReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_csv(report: &BenchReport) -> String {
    let mut out = String::from(
        "kind,mode,variant,task_id,passed,ssim,psnr,lpips,pass_at_1,mean_ssim,mean_psnr,mean_lpips,scaled_ssim,scaled_psnr,scaled_lpips\n",
    );
    for cell in &report.cells {
        for score in &cell.scores {
            out.push_str(&format!(
                "task,{},{},{},{},{},{},{},,,,,,,\n",
                cell.mode,
                cell.variant,
                score.task_id,
                score.passed,
                fmt_opt(score.ssim, 4),
                fmt_opt(score.psnr, 4),
                fmt_opt(score.lpips, 4),
            ));
        }
        let a = &cell.aggregate;
        out.push_str(&format!(
            "aggregate,{},{},,,,,,{:.4},{},{},{},{},{},{}\n",
            cell.mode,
            cell.variant,
            a.pass_at_1,
            fmt_opt(a.mean_ssim, 4),
            fmt_opt(a.mean_psnr, 4),
            fmt_opt(a.mean_lpips, 4),
            fmt_opt(a.scaled_ssim, 4),
            fmt_opt(a.scaled_psnr, 4),
            fmt_opt(a.scaled_lpips, 4),
        ));
    }
    out
}

fn render_markdown(report: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str("# Benchmark report\n\n");
    out.push_str(&format!("Run config: `{}`\n\n", report.run_config));

    out.push_str("## Aggregates\n\n");
    out.push_str("| mode | variant | pass@1 ↑ | SSIM ↑ | PSNR ↑ | LPIPS ↓ |\n");
    out.push_str("|------|---------|----------|--------|--------|---------|\n");
    for cell in &report.cells {
        let a = &cell.aggregate;
        out.push_str(&format!(
            "| {} | {} | {:.1} | {} | {} | {} |\n",
            cell.mode,
            cell.variant,
            a.pass_at_1,
            fmt_opt(a.mean_ssim, 2),
            fmt_opt(a.mean_psnr, 1),
            fmt_opt(a.mean_lpips, 2),
        ));
    }

    out.push_str("\n## Pass@1-scaled aggregates\n\n");
    out.push_str("| mode | variant | SSIM ↑ | PSNR ↑ | LPIPS ↓ |\n");
    out.push_str("|------|---------|--------|--------|---------|\n");
    for cell in &report.cells {
        let a = &cell.aggregate;
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            cell.mode,
            cell.variant,
            fmt_opt(a.scaled_ssim, 2),
            fmt_opt(a.scaled_psnr, 1),
            fmt_opt(a.scaled_lpips, 2),
        ));
    }

    out.push_str("\n## Per-task results\n");
    for cell in &report.cells {
        out.push_str(&format!("\n### {} / {}\n\n", cell.mode, cell.variant));
        out.push_str("| task | passed | SSIM | PSNR | LPIPS |\n");
        out.push_str("|------|--------|------|------|-------|\n");
        for score in &cell.scores {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                score.task_id,
                score.passed,
                fmt_opt(score.ssim, 2),
                fmt_opt(score.psnr, 1),
                fmt_opt(score.lpips, 2),
            ));
        }
    }
    if !report.warnings.is_empty() {
        out.push_str("\n## Warnings\n\n");
        for warning in &report.warnings {
            out.push_str(&format!("- {warning}\n"));
        }
    }
    out
}

/// Write `report.md`, `report.csv`, and `report.json` into `out_dir`.
pub fn write_reports(report: &BenchReport, out_dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.md"), render_report(report, ReportFormat::Markdown))?;
    std::fs::write(out_dir.join("report.csv"), render_report(report, ReportFormat::Csv))?;
    std::fs::write(out_dir.join("report.json"), render_report(report, ReportFormat::Json))?;
    Ok(())
}
