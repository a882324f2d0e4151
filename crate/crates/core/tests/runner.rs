use std::path::Path;
use std::sync::Arc;

use synthgen_core::gateway::{Backend, CompletionResult, GatewayError, GenerationConfig, MockBackend, MockProfile, PlantedOptions};
use synthgen_core::prompt::PromptText;
use synthgen_core::runner::{self, CellStatus, ExperimentConfig, MockGold, RunKind, RunnerError};
use synthgen_core::synth::SynthesisMode;
use synthgen_core::TaskSpec;

const TASK: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sentiment/task.json");

fn config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(TASK, out);
    cfg.mock_gold = Some(MockGold { train_per_class: 40, test_per_class: 40, seed: 7 });
    cfg.modes = vec![SynthesisMode::ZeroShot, SynthesisMode::Kadg];
    cfg.seeds = vec![0, 1];
    cfg.per_class = 30;
    cfg.self_bleu_cap = 100;
    cfg.train.epochs = 2;
    cfg
}

/// Mock that refuses word-augmented prompts.
struct NoKadg(MockBackend);

impl Backend for NoKadg {
    fn name(&self) -> String {
        "no-kadg".into()
    }

    fn complete(&self, prompt: &PromptText, config: &GenerationConfig, seed: u64) -> Result<CompletionResult, GatewayError> {
        if prompt.metadata.kadg_word.is_some() {
            return Err(GatewayError::Status { status: 500, attempts: 1, body: "down".into() });
        }
        self.0.complete(prompt, config, seed)
    }
}

#[test]
fn pipeline_has_one_cell_per_mode_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = runner::run_pipeline(&cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.cells.len(), 4);
    assert_eq!(r.failed_cells(), 0);
    assert!(r.cells.iter().all(|c| c.size == 30 && c.metrics.is_some()));
    let acc: Vec<_> = r.aggregates.iter().filter(|a| a.metric == "accuracy").collect();
    assert_eq!(acc.len(), 2);
    assert!(acc.iter().all(|a| a.n == 2 && a.mean.is_some() && a.std.is_some()));
    for f in ["report.json", "report.md", "report.csv", "reference.model", "gold/test.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(runner::load_report(dir.path()).unwrap().canonical_json(), r.canonical_json());
}

#[test]
fn rerun_is_served_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.modes = vec![SynthesisMode::ZeroShot];
    cfg.seeds = vec![3];
    let first = runner::run_pipeline(&cfg).unwrap();
    let second = runner::run_pipeline(&cfg).unwrap();
    assert!(first.backend_calls > 0);
    assert_eq!(second.backend_calls, 0);
    assert_eq!(first.report.canonical_json(), second.report.canonical_json());
}

#[test]
fn failing_mode_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let task = TaskSpec::load(TASK).unwrap();
    let mock = MockBackend::new(MockProfile::planted(&task, &PlantedOptions::default())).unwrap();
    let out = runner::run(&cfg, RunKind::Pipeline, Some(Arc::new(NoKadg(mock)))).unwrap();
    let r = &out.report;
    assert_eq!(r.failed_cells(), 2);
    for c in &r.cells {
        let ok = c.status == CellStatus::Ok;
        assert_eq!(ok, c.mode == SynthesisMode::ZeroShot, "{c:?}");
        assert_eq!(c.error.is_some(), !ok);
    }
    for a in &r.aggregates {
        assert_eq!(a.mean.is_none(), a.mode == SynthesisMode::Kadg, "{a:?}");
    }
    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.contains("—[^"), "{md}");
}

#[test]
fn scaling_sizes_nest_and_export_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.seeds = vec![0];
    cfg.scaling_sizes = vec![5, 15, 30];
    let r = runner::run_scaling(&cfg).unwrap().report;
    assert_eq!(r.cells.len(), 2 * 3);
    for mode in ["zero_shot", "kadg"] {
        let csv = std::fs::read_to_string(dir.path().join(format!("scaling_{mode}.csv"))).unwrap();
        assert!(csv.starts_with("mode,size,seed,metric,value"));
        assert!(csv.lines().skip(1).all(|l| l.starts_with(mode)));
    }
    // every size trains on the same pool
    let digests: Vec<_> = r.cells.iter().filter(|c| c.mode == SynthesisMode::ZeroShot).map(|c| c.dataset_digest.clone()).collect();
    assert!(digests.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.mock_gold = None;
    assert!(matches!(runner::run_pipeline(&cfg), Err(RunnerError::Config(_))));

    let mut cfg = config(dir.path());
    cfg.scaling_sizes = vec![10, 5];
    assert!(matches!(runner::run_scaling(&cfg), Err(RunnerError::Config(_))));

    let mut cfg = config(dir.path());
    cfg.seeds = vec![1, 1];
    assert!(matches!(runner::run_pipeline(&cfg), Err(RunnerError::Config(_))));
}
