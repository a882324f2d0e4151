mod common;

use synthgen_core::gateway::{Backend, CompletionResult, GatewayError, GenerationConfig, MockBackend, MockProfile, PlantedOptions};
use synthgen_core::prompt::PromptText;
use synthgen_core::runner::dataset_digest;
use synthgen_core::synth::{synthesize_all, synthesize_all_with, SynthError, SynthesisMode, SynthesisPlan};
use synthgen_core::task::class_counts;
use synthgen_core::{Parallelism, TaskSpec};

/// Returns the same completion for every call.
struct Fixed(&'static str);

impl Backend for Fixed {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn complete(&self, _: &PromptText, _: &GenerationConfig, _: u64) -> Result<CompletionResult, GatewayError> {
        Ok(CompletionResult { raw_text: self.0.into(), backend_name: self.name(), latency_ms: 0, attempt_count: 1 })
    }
}

/// Mock that fails every call for one label.
struct FailLabel {
    inner: MockBackend,
    label_id: u32,
}

impl Backend for FailLabel {
    fn name(&self) -> String {
        "fail-label".into()
    }

    fn complete(&self, prompt: &PromptText, config: &GenerationConfig, seed: u64) -> Result<CompletionResult, GatewayError> {
        if prompt.metadata.label_id == Some(self.label_id) {
            return Err(GatewayError::Network { attempts: 3, message: "connection refused".into() });
        }
        self.inner.complete(prompt, config, seed)
    }
}

fn mock(task: &TaskSpec) -> MockBackend {
    MockBackend::new(MockProfile::planted(task, &PlantedOptions::default())).unwrap()
}

#[test]
fn balanced_output_with_provenance() {
    let task = common::single_task("t", 3, &["rain", "sun", "snow"]);
    for mode in [SynthesisMode::ZeroShot, SynthesisMode::Kadg, SynthesisMode::FewShot] {
        let plan = SynthesisPlan::new(task.clone(), mode, 23, 5);
        let out = synthesize_all(&plan, &mock(&task)).unwrap();
        assert!(class_counts(&out.dataset, &task).values().all(|&n| n == 23), "{mode}");
        assert!(out.dataset.samples.iter().all(|s| s.provenance.as_ref().is_some_and(|p| !p.prompt_digest.is_empty())));
        if mode == SynthesisMode::Kadg {
            assert!(out.dataset.samples.iter().all(|s| s.provenance.as_ref().unwrap().kadg_word.is_some()));
        }
        assert_eq!(out.manifest.exemplar_ids.is_empty(), mode != SynthesisMode::FewShot);
    }
}

#[test]
fn duplicate_completions_exhaust_the_budget() {
    let task = common::single_task("t", 2, &["w"]);
    let plan = SynthesisPlan::new(task, SynthesisMode::ZeroShot, 10, 0);
    let err = synthesize_all(&plan, &Fixed("1. same text\n2. other text")).unwrap_err();
    let SynthError::Partial { completed, failures } = err else { panic!("expected partial failure") };
    assert!(completed.is_empty());
    assert_eq!(failures.len(), 2);
    for (_, e) in &failures {
        assert!(matches!(**e, SynthError::BudgetExhausted { produced: 2, required: 10, .. }), "{e}");
    }
}

#[test]
fn one_failing_label_keeps_the_others() {
    let task = common::single_task("t", 3, &["w"]);
    let plan = SynthesisPlan::new(task.clone(), SynthesisMode::ZeroShot, 5, 0);
    let backend = FailLabel { inner: mock(&task), label_id: 1 };
    let err = synthesize_all(&plan, &backend).unwrap_err();
    assert!(err.is_backend_failure());
    let SynthError::Partial { completed, failures } = err else { panic!("expected partial failure") };
    assert_eq!(completed, vec!["class0".to_string(), "class2".to_string()]);
    assert_eq!(failures[0].0, "class1");
}

#[test]
fn sequential_and_parallel_runs_are_identical() {
    let task = common::single_task("t", 4, &["w"]);
    let plan = SynthesisPlan::new(task.clone(), SynthesisMode::Kadg, 17, 9);
    let a = synthesize_all_with(&plan, &mock(&task), Parallelism::Sequential).unwrap();
    let b = synthesize_all_with(&plan, &mock(&task), Parallelism::Rayon).unwrap();
    assert_eq!(dataset_digest(&a.dataset), dataset_digest(&b.dataset));
}

#[test]
fn pair_tasks_get_both_sentences() {
    let task = common::regression_task();
    let plan = SynthesisPlan::new(task.clone(), SynthesisMode::ZeroShot, 8, 1);
    let out = synthesize_all(&plan, &mock(&task)).unwrap();
    assert_eq!(out.dataset.len(), 6 * 8);
    assert!(out.dataset.samples.iter().all(|s| s.text2.as_deref().is_some_and(|t| !t.is_empty())));

    let kadg = SynthesisPlan::new(task, SynthesisMode::Kadg, 8, 1);
    assert!(kadg.validate().is_err());
}

#[test]
fn seeds_change_the_data() {
    let task = common::single_task("t", 2, &["w"]);
    let run = |seed| {
        let out = synthesize_all(&SynthesisPlan::new(task.clone(), SynthesisMode::ZeroShot, 10, seed), &mock(&task)).unwrap();
        dataset_digest(&out.dataset)
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}
