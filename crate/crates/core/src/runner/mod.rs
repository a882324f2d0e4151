//! Experiment orchestration: full pipeline runs, mode comparisons and the
//! data-scaling study, with per-cell isolation and report rendering.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! cache/                      response cache (resumes interrupted runs)
//! gold/{train,test}.jsonl     sampled mock gold data, if any
//! reference.model             gold-trained reference model, if trained
//! cells/<mode>/seed-<s>/      synthetic.jsonl, synthesis_manifest.json
//!     size-<n>/               model.bin, metrics.json
//! report.{json,md,csv}
//! scaling_<mode>.csv          scaling runs only
//! ```

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use thiserror::Error;

pub use config::{BackendChoice, ExperimentConfig, MockGold};
pub use report::{
    aggregate, mean_std, render_csv, render_report, Aggregate, Cell, CellStatus, EnvironmentManifest, ReportFormat, RunReport,
};

use crate::exec::{self, Parallelism};
use crate::gateway::{Backend, CachedBackend, GatewayError, MockBackend, MockProfile, RemoteBackend, ResponseCache};
use crate::hashing::{derive_seed, hex_digest};
use crate::metrics::{self, MetricReport, SelfBleuConfig, TokenProfile, TokenScheme};
use crate::synth::{synthesize_all_with, SynthesisMode};
use crate::task::{load_dataset, save_dataset, stratified_subsample, Dataset, TaskError, TaskSpec};
use crate::trainer::{self, LinearModel, TrainError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} of {total} cells failed")]
    PartialRun { failed: usize, total: usize },
}

impl RunnerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Gateway(_) => 2,
            RunnerError::PartialRun { .. } => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Pipeline,
    Scaling,
}

impl RunKind {
    fn as_str(self) -> &'static str {
        match self {
            RunKind::Pipeline => "pipeline",
            RunKind::Scaling => "scaling",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// Completions requested from the backend (cache misses).
    pub backend_calls: u64,
    pub cache_hits: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, body: &str) -> Result<(), RunnerError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, body).map_err(io_err(path))
}

/// Digest of the sample sequence, ignoring provenance.
pub fn dataset_digest(dataset: &Dataset) -> String {
    let mut buf = Vec::new();
    for s in &dataset.samples {
        buf.extend_from_slice(s.text1.as_bytes());
        buf.push(0x1f);
        if let Some(t2) = &s.text2 {
            buf.extend_from_slice(t2.as_bytes());
        }
        buf.push(0x1f);
        buf.extend_from_slice(s.label_id.to_string().as_bytes());
        buf.push(0x1e);
    }
    hex_digest(&buf)
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunOutcome, RunnerError> {
    run(cfg, RunKind::Pipeline, None)
}

pub fn run_scaling(cfg: &ExperimentConfig) -> Result<RunOutcome, RunnerError> {
    run(cfg, RunKind::Scaling, None)
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    task: TaskSpec,
    backend: &'a dyn Backend,
    gold_test: Dataset,
    gold_profile: Option<TokenProfile>,
    reference: Option<LinearModel>,
    scheme: TokenScheme,
    sizes: Vec<usize>,
    created_at: DateTime<Utc>,
    par: Parallelism,
}

/// Runs an experiment. `backend` replaces the configured backend (the mock
/// profile is still used for mock gold data); responses are always cached
/// under `output_dir/cache`.
pub fn run(cfg: &ExperimentConfig, kind: RunKind, backend: Option<Arc<dyn Backend>>) -> Result<RunOutcome, RunnerError> {
    let task = TaskSpec::load(&cfg.task)?;
    cfg.validate(&task, kind == RunKind::Scaling)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let profile = match &cfg.backend {
        BackendChoice::Mock { planted } => Some(MockProfile::planted(&task, planted)),
        BackendChoice::Remote { .. } => None,
    };
    let inner: Arc<dyn Backend> = match (backend, &cfg.backend) {
        (Some(b), _) => b,
        (None, BackendChoice::Mock { .. }) => Arc::new(MockBackend::new(profile.clone().expect("mock profile"))?),
        (None, BackendChoice::Remote { remote }) => Arc::new(RemoteBackend::from_env(remote.clone())?),
    };
    let cache = Arc::new(ResponseCache::on_disk(out.join("cache"))?);
    let cached = CachedBackend::new(inner, cache);

    // Gold data: files win; otherwise sample from a noise-free profile.
    let clean = profile.map(|mut p| {
        p.noise_rate = 0.0;
        p
    });
    let mock_gold = |per_class: usize, seed: u64, name: &str| -> Result<Dataset, RunnerError> {
        let p = clean.as_ref().ok_or_else(|| RunnerError::Config("mock gold needs the mock backend".into()))?;
        let d = p.sample_dataset(&task, per_class, seed);
        let dir = out.join("gold");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        save_dataset(&d, &task, dir.join(name))?;
        Ok(d)
    };
    let gold_test = match (&cfg.gold_test, &cfg.mock_gold) {
        (Some(p), _) => load_dataset(p, &task)?,
        (None, Some(g)) => mock_gold(g.test_per_class, derive_seed(g.seed, &[1]), "test.jsonl")?,
        (None, None) => unreachable!("validated"),
    };
    let gold_train = match (&cfg.gold_train, &cfg.mock_gold) {
        (Some(p), _) => Some(load_dataset(p, &task)?),
        (None, Some(g)) if g.train_per_class > 0 => Some(mock_gold(g.train_per_class, derive_seed(g.seed, &[0]), "train.jsonl")?),
        _ => None,
    };

    let (reference, reference_desc) = match (&cfg.reference_model, &gold_train) {
        (Some(p), _) => {
            let m = LinearModel::load(p)?;
            m.check_compatible(&task)?;
            (Some(m), Some(format!("file:{}", p.file_name().unwrap_or_default().to_string_lossy())))
        }
        (None, Some(g)) if cfg.train_reference => {
            let m = trainer::train(g, &task, &cfg.train)?;
            m.save(out.join("reference.model"))?;
            (Some(m), Some("trained_on_gold_train".to_string()))
        }
        _ => (None, None),
    };

    let scheme = TokenScheme::default_for(task.is_unsegmented_language());
    let gold_profile = gold_train.as_ref().map(|g| {
        let sub = stratified_subsample(g, &task, cfg.jaccard_per_class, 0);
        metrics::token_profile(&sub.analysis_texts(), scheme)
    });
    let sizes = match kind {
        RunKind::Pipeline => vec![cfg.per_class],
        RunKind::Scaling => cfg.scaling_sizes.clone(),
    };
    let par = Parallelism::default();
    let shared = Shared {
        cfg,
        task: task.clone(),
        backend: &cached,
        gold_test,
        gold_profile,
        reference,
        scheme,
        sizes,
        created_at: Utc::now(),
        par,
    };

    let jobs: Vec<(SynthesisMode, u64)> = cfg.modes.iter().flat_map(|m| cfg.seeds.iter().map(move |s| (*m, *s))).collect();
    let per_job = exec::with_workers(par, cfg.workers, || exec::map(par, &jobs, |&(mode, seed)| run_job(&shared, mode, seed)));
    let cells: Vec<Cell> = per_job.into_iter().flatten().collect();

    let mut digest_cfg = cfg.clone();
    digest_cfg.output_dir = PathBuf::new();
    let environment = EnvironmentManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        backend: cached.name(),
        model_name: cfg.generation.model_name.clone(),
        task_id: task.task_id.clone(),
        task_digest: hex_digest(task.to_json().as_bytes()),
        config_digest: hex_digest(serde_json::to_string(&digest_cfg).expect("config serializes").as_bytes()),
        generation_digest: cfg.generation.digest(),
        train_digest: hex_digest(serde_json::to_string(&cfg.train).expect("train config serializes").as_bytes()),
        parallel: par.is_parallel(),
        workers: cfg.workers,
        reference_model: reference_desc,
        generated_at: Some(shared.created_at),
    };
    let report = RunReport {
        kind: kind.as_str().to_string(),
        aggregates: aggregate(&cells),
        cells,
        environment,
    };

    write_file(&out.join("report.json"), &report.to_json())?;
    write_file(&out.join("report.md"), &render_report(&report, ReportFormat::Markdown))?;
    write_file(&out.join("report.csv"), &render_report(&report, ReportFormat::Csv))?;
    if kind == RunKind::Scaling {
        for mode in &cfg.modes {
            write_file(&out.join(format!("scaling_{mode}.csv")), &render_csv(&report, Some(*mode)))?;
        }
    }
    Ok(RunOutcome {
        report,
        backend_calls: cached.backend_calls(),
        cache_hits: cached.cache_hits(),
    })
}

fn failed(mode: SynthesisMode, size: usize, seed: u64, error: String, digest: Option<String>) -> Cell {
    Cell {
        mode,
        size,
        seed,
        status: CellStatus::Failed,
        metrics: None,
        error: Some(error),
        dataset_digest: digest,
    }
}

/// Synthesizes one pool for `(mode, seed)`, analyzes it, then trains and
/// evaluates one model per size on nested stratified prefixes.
fn run_job(sh: &Shared<'_>, mode: SynthesisMode, seed: u64) -> Vec<Cell> {
    let cfg = sh.cfg;
    let dir = cfg.output_dir.join("cells").join(mode.as_str()).join(format!("seed-{seed}"));
    let mut plan = cfg.plan(&sh.task, mode, cfg.per_class, seed);
    plan.created_at = Some(sh.created_at);
    let output = match synthesize_all_with(&plan, sh.backend, sh.par) {
        Ok(o) => o,
        Err(e) => return sh.sizes.iter().map(|&n| failed(mode, n, seed, e.to_string(), None)).collect(),
    };
    let dataset = output.dataset;
    let digest = dataset_digest(&dataset);
    let saved = fs::create_dir_all(&dir)
        .map_err(|e| format!("{}: {e}", dir.display()))
        .and_then(|_| save_dataset(&dataset, &sh.task, dir.join("synthetic.jsonl")).map_err(|e| e.to_string()))
        .and_then(|_| {
            let body = serde_json::to_string_pretty(&output.manifest).expect("manifest serializes");
            write_file(&dir.join("synthesis_manifest.json"), &body).map_err(|e| e.to_string())
        });
    if let Err(e) = saved {
        return sh.sizes.iter().map(|&n| failed(mode, n, seed, e.clone(), Some(digest.clone()))).collect();
    }

    let analysis = analyze(sh, &dataset, seed);
    let mut cells = Vec::with_capacity(sh.sizes.len());
    for &size in &sh.sizes {
        let result = train_and_eval(sh, &dataset, size, seed, &dir.join(format!("size-{size}")), &analysis);
        cells.push(match result {
            Ok(metrics) => Cell {
                mode,
                size,
                seed,
                status: CellStatus::Ok,
                metrics: Some(metrics),
                error: None,
                dataset_digest: Some(digest.clone()),
            },
            Err(e) => failed(mode, size, seed, e.to_string(), Some(digest.clone())),
        });
    }
    cells
}

fn analyze(sh: &Shared<'_>, dataset: &Dataset, seed: u64) -> MetricReport {
    let mut report = MetricReport { token_scheme: Some(sh.scheme), ..Default::default() };
    let texts = dataset.analysis_texts();
    let bleu_cfg = SelfBleuConfig {
        sample_cap: sh.cfg.self_bleu_cap,
        seed,
        scheme: sh.scheme,
        ..Default::default()
    };
    match metrics::self_bleu_with(&texts, &bleu_cfg, sh.par) {
        Ok(v) => report.self_bleu = Some(v),
        Err(e) => {
            report.unavailable.insert("self_bleu".into(), e.to_string());
        }
    }
    if let Some(gold) = &sh.gold_profile {
        let sub = stratified_subsample(dataset, &sh.task, sh.cfg.jaccard_per_class, seed);
        let synth = metrics::token_profile(&sub.analysis_texts(), sh.scheme);
        match metrics::weighted_jaccard(&synth, gold) {
            Ok(v) => report.weighted_jaccard = Some(v),
            Err(e) => {
                report.unavailable.insert("weighted_jaccard".into(), e.to_string());
            }
        }
    }
    if let Some(reference) = &sh.reference {
        match metrics::label_correctness_with(dataset, reference, &sh.task, sh.par) {
            Ok(v) => report.label_correctness = Some(v),
            Err(e) => {
                report.unavailable.insert("label_correctness".into(), e.to_string());
            }
        }
    }
    report.sample_sizes.insert("synthetic".into(), dataset.len());
    report.seeds.insert("synthesis".into(), seed);
    report
}

fn train_and_eval(
    sh: &Shared<'_>,
    pool: &Dataset,
    size: usize,
    seed: u64,
    dir: &Path,
    analysis: &MetricReport,
) -> Result<MetricReport, RunnerError> {
    let subset = if size >= sh.cfg.per_class {
        pool.clone()
    } else {
        stratified_subsample(pool, &sh.task, size, seed)
    };
    let train_cfg = trainer::TrainConfig {
        seed: derive_seed(sh.cfg.train.seed, &[seed]),
        ..sh.cfg.train.clone()
    };
    let model = trainer::train(&subset, &sh.task, &train_cfg)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    model.save(dir.join("model.bin"))?;
    let eval = trainer::evaluate_with(&model, &sh.gold_test, &sh.task, Parallelism::Sequential)?;
    let mut metrics = analysis.clone();
    metrics.downstream = eval.downstream;
    metrics.unavailable.extend(eval.unavailable);
    metrics.sample_sizes.insert("train".into(), subset.len());
    metrics.sample_sizes.extend(eval.sample_sizes.into_iter().filter(|(k, _)| k != "train"));
    metrics.seeds.insert("train".into(), train_cfg.seed);
    metrics.notes.extend(eval.notes);
    write_file(&dir.join("metrics.json"), &serde_json::to_string_pretty(&metrics).expect("metrics serialize"))?;
    Ok(metrics)
}

/// Loads a previously written report from a run directory (or a report
/// file path).
pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport, RunnerError> {
    let path = path.as_ref();
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(io_err(&file))?;
    RunReport::from_json(&text).map_err(|e| RunnerError::Config(format!("{}: {e}", file.display())))
}
