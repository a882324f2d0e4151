//! `synthgen` command-line entry point.
//!
//! Exit codes: 0 success, 1 validation or configuration error, 2 backend
//! failure, 3 partial run (some cells or labels failed).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use synthgen_core::gateway::{
    Backend, CachedBackend, MockBackend, MockProfile, PlantedOptions, RemoteBackend, RemoteConfig, ResponseCache,
    API_KEY_ENV, BASE_URL_ENV,
};
use synthgen_core::metrics::{self, MetricReport, SelfBleuConfig, TokenScheme};
use synthgen_core::runner::{self, BackendChoice, ExperimentConfig, ReportFormat, RunKind, RunnerError};
use synthgen_core::synth::{synthesize_all, SynthesisMode, SynthesisPlan};
use synthgen_core::task::{load_dataset, save_dataset, stratified_subsample};
use synthgen_core::trainer::{self, LinearModel, TrainConfig};
use synthgen_core::{Error, TaskSpec};

#[derive(Parser)]
#[command(name = "synthgen", version, about = "Synthetic training data generation, analysis and downstream evaluation")]
struct Cli {
    /// Chat-completions endpoint root for the remote backend.
    #[arg(long = "base-url", env = BASE_URL_ENV, global = true)]
    base_url: Option<String>,
    /// Credential for the remote backend.
    #[arg(long = "api-key", env = API_KEY_ENV, global = true, hide_env_values = true)]
    api_key: Option<String>,
    #[command(subcommand)]
    command: Command,
}

/// Endpoint and credential overrides shared by every subcommand.
struct Remote {
    base_url: Option<String>,
    api_key: Option<String>,
}

impl Remote {
    fn backend(&self, mut cfg: RemoteConfig) -> Result<RemoteBackend, Error> {
        if let Some(url) = &self.base_url {
            cfg.base_url = url.clone();
        }
        Ok(RemoteBackend::new(cfg, self.api_key.clone())?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a balanced dataset for a task.
    Generate {
        #[arg(long)]
        task: PathBuf,
        /// zero, kadg or fewshot
        #[arg(long, default_value = "zero")]
        mode: SynthesisMode,
        #[arg(long = "per-class")]
        per_class: usize,
        #[arg(long, value_enum, default_value = "mock")]
        backend: BackendKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        model: Option<String>,
        #[arg(long = "items-per-call")]
        items_per_call: Option<usize>,
        /// JSON file with mock planted-vocabulary options.
        #[arg(long = "mock-profile")]
        mock_profile: Option<PathBuf>,
    },
    /// Diversity, distribution similarity and label correctness of a dataset.
    Analyze {
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        task: PathBuf,
        #[arg(long = "reference-model")]
        reference_model: Option<PathBuf>,
        /// Write the token distribution comparison as CSV.
        #[arg(long = "distribution-csv")]
        distribution_csv: Option<PathBuf>,
        #[arg(long = "self-bleu-cap", default_value_t = 1000)]
        self_bleu_cap: usize,
        #[arg(long = "jaccard-per-class", default_value_t = 1000)]
        jaccard_per_class: usize,
        /// Token scheme override, e.g. whitespace, char_unigram, char_ngram(2).
        #[arg(long)]
        tokenizer: Option<TokenScheme>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Train the downstream model on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long = "learning-rate")]
        learning_rate: Option<f64>,
    },
    /// Evaluate a trained model on gold data.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Data-scaling study from an experiment config.
    Scale {
        #[arg(long)]
        config: PathBuf,
    },
    /// Full pipeline runs from an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a run report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// md, json or csv
        #[arg(long, default_value = "md")]
        format: ReportFormat,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let remote = Remote { base_url: cli.base_url, api_key: cli.api_key };
    match execute(cli.command, &remote) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| RunnerError::Io { path: path.to_path_buf(), source }.into()
}

fn write(path: &Path, body: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, body).map_err(io(path))
}

fn print_metrics(report: &MetricReport, format: Format) {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(report).expect("report serializes")),
        Format::Table => print!("{}", report.render_table()),
    }
}

fn execute(command: Command, remote: &Remote) -> Result<u8, Error> {
    match command {
        Command::Generate { task, mode, per_class, backend, out, seed, model, items_per_call, mock_profile } => {
            let task = TaskSpec::load(&task)?;
            let mut plan = SynthesisPlan::new(task.clone(), mode, per_class, seed);
            if let Some(m) = model {
                plan.config.model_name = m;
            }
            if let Some(n) = items_per_call {
                plan.config.items_per_call = n;
            }
            plan.validate()?;
            let inner: Arc<dyn Backend> = match backend {
                BackendKind::Mock => {
                    let opts: PlantedOptions = match &mock_profile {
                        Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(io(p))?)
                            .map_err(|e| RunnerError::Config(format!("{}: {e}", p.display())))?,
                        None => PlantedOptions::default(),
                    };
                    Arc::new(MockBackend::new(MockProfile::planted(&task, &opts))?)
                }
                BackendKind::Remote => Arc::new(remote.backend(RemoteConfig::default())?),
            };
            fs::create_dir_all(&out).map_err(io(&out))?;
            let cached = CachedBackend::new(inner, Arc::new(ResponseCache::on_disk(out.join("cache"))?));
            let output = synthesize_all(&plan, &cached)?;
            save_dataset(&output.dataset, &task, out.join("synthetic.jsonl"))?;
            write(&out.join("manifest.json"), &serde_json::to_string_pretty(&output.manifest).expect("manifest serializes"))?;
            eprintln!(
                "wrote {} samples to {} ({} backend calls, {} cache hits)",
                output.dataset.len(),
                out.join("synthetic.jsonl").display(),
                cached.backend_calls(),
                cached.cache_hits()
            );
            Ok(0)
        }
        Command::Analyze {
            synthetic,
            gold,
            task,
            reference_model,
            distribution_csv,
            self_bleu_cap,
            jaccard_per_class,
            tokenizer,
            seed,
            format,
        } => {
            let task = TaskSpec::load(&task)?;
            let synth = load_dataset(&synthetic, &task)?;
            let scheme = tokenizer.unwrap_or_else(|| TokenScheme::default_for(task.is_unsegmented_language()));
            let mut report = MetricReport { token_scheme: Some(scheme), ..Default::default() };
            let cfg = SelfBleuConfig { sample_cap: self_bleu_cap, seed, scheme, ..Default::default() };
            match metrics::self_bleu(&synth.analysis_texts(), &cfg) {
                Ok(v) => report.self_bleu = Some(v),
                Err(e) => {
                    report.unavailable.insert("self_bleu".into(), e.to_string());
                }
            }
            if let Some(gold) = gold {
                let gold = load_dataset(&gold, &task)?;
                let gp = metrics::token_profile(&stratified_subsample(&gold, &task, jaccard_per_class, seed).analysis_texts(), scheme);
                let sp = metrics::token_profile(&stratified_subsample(&synth, &task, jaccard_per_class, seed).analysis_texts(), scheme);
                report.weighted_jaccard = Some(metrics::weighted_jaccard(&sp, &gp)?);
                report.sample_sizes.insert("gold".into(), gold.len());
                if let Some(path) = distribution_csv {
                    write(&path, &metrics::distribution_csv(&gp, &sp))?;
                }
            }
            if let Some(path) = reference_model {
                let model = LinearModel::load(&path)?;
                report.label_correctness = Some(metrics::label_correctness(&synth, &model, &task)?);
            }
            report.sample_sizes.insert("synthetic".into(), synth.len());
            report.seeds.insert("analysis".into(), seed);
            print_metrics(&report, format);
            Ok(0)
        }
        Command::Train { data, task, out, seed, epochs, learning_rate } => {
            let task = TaskSpec::load(&task)?;
            let dataset = load_dataset(&data, &task)?;
            let mut cfg = TrainConfig { seed, ..Default::default() };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.learning_rate = lr;
            }
            let model = trainer::train(&dataset, &task, &cfg)?;
            model.save(&out)?;
            eprintln!(
                "trained on {} samples, final loss {:.4}; model written to {}",
                dataset.len(),
                model.manifest.epoch_losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
            Ok(0)
        }
        Command::Eval { model, gold, format } => {
            let model = LinearModel::load(&model)?;
            let gold = load_dataset(&gold, &model.task)?;
            print_metrics(&trainer::evaluate(&model, &gold, &model.task)?, format);
            Ok(0)
        }
        Command::Scale { config } => run_config(&config, RunKind::Scaling, remote),
        Command::Run { config } => run_config(&config, RunKind::Pipeline, remote),
        Command::Report { input, format } => {
            let report = runner::load_report(&input)?;
            print!("{}", runner::render_report(&report, format));
            Ok(if report.failed_cells() > 0 { 3 } else { 0 })
        }
    }
}

fn run_config(path: &Path, kind: RunKind, overrides: &Remote) -> Result<u8, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    let backend: Option<Arc<dyn Backend>> = match &mut cfg.backend {
        BackendChoice::Remote { remote } => {
            let b = overrides.backend(remote.clone())?;
            *remote = b.config().clone();
            Some(Arc::new(b))
        }
        BackendChoice::Mock { .. } => None,
    };
    let outcome = runner::run(&cfg, kind, backend)?;
    print!("{}", runner::render_report(&outcome.report, ReportFormat::Markdown));
    eprintln!(
        "report written to {} ({} backend calls, {} cache hits)",
        cfg.output_dir.join("report.json").display(),
        outcome.backend_calls,
        outcome.cache_hits
    );
    let failed = outcome.report.failed_cells();
    if failed > 0 {
        return Err(RunnerError::PartialRun { failed, total: outcome.report.cells.len() }.into());
    }
    Ok(0)
}

