use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::gateway::{GenerationConfig, PlantedOptions, RemoteConfig};
use crate::synth::{SynthesisMode, SynthesisPlan};
use crate::task::TaskSpec;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    Mock {
        #[serde(default)]
        planted: PlantedOptions,
    },
    Remote {
        #[serde(default)]
        remote: RemoteConfig,
    },
}

impl Default for BackendChoice {
    fn default() -> Self {
        BackendChoice::Mock { planted: PlantedOptions::default() }
    }
}

/// Gold data sampled from the mock profile (without noise) when no gold
/// files are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockGold {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for MockGold {
    fn default() -> Self {
        Self { train_per_class: 100, test_per_class: 100, seed: 7 }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_modes() -> Vec<SynthesisMode> {
    vec![SynthesisMode::ZeroShot]
}

fn default_per_class() -> usize {
    100
}

fn default_self_bleu_cap() -> usize {
    1000
}

fn default_jaccard_per_class() -> usize {
    1000
}

fn default_topup() -> f64 {
    3.0
}

fn default_true() -> bool {
    true
}

/// Experiment definition. Relative paths resolve against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_gold: Option<MockGold>,
    #[serde(default = "default_modes")]
    pub modes: Vec<SynthesisMode>,
    /// Synthetic samples per class for each mode.
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    /// Per-class training sizes for the scaling study.
    #[serde(default)]
    pub scaling_sizes: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub backend: BackendChoice,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    /// Concurrent cells; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_self_bleu_cap")]
    pub self_bleu_cap: usize,
    #[serde(default = "default_jaccard_per_class")]
    pub jaccard_per_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_model: Option<PathBuf>,
    /// Train a reference model on gold train data when none is given.
    #[serde(default = "default_true")]
    pub train_reference: bool,
    #[serde(default = "default_topup")]
    pub topup_factor: f64,
    #[serde(default = "default_true")]
    pub dedup: bool,
}

impl ExperimentConfig {
    /// A mock-backend config with defaults for everything else.
    pub fn new(task: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            task: task.into(),
            gold_train: None,
            gold_test: None,
            mock_gold: None,
            modes: default_modes(),
            per_class: default_per_class(),
            scaling_sizes: Vec::new(),
            seeds: default_seeds(),
            backend: BackendChoice::default(),
            generation: GenerationConfig::default(),
            train: TrainConfig::default(),
            output_dir: output_dir.into(),
            workers: 0,
            self_bleu_cap: default_self_bleu_cap(),
            jaccard_per_class: default_jaccard_per_class(),
            reference_model: None,
            train_reference: true,
            topup_factor: default_topup(),
            dedup: true,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| RunnerError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or_else(|| Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.task);
        fix(&mut self.output_dir);
        for p in [&mut self.gold_train, &mut self.gold_test, &mut self.reference_model].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn plan(&self, task: &TaskSpec, mode: SynthesisMode, per_class: usize, seed: u64) -> SynthesisPlan {
        let mut plan = SynthesisPlan::new(task.clone(), mode, per_class, seed);
        plan.config = self.generation.clone();
        plan.dedup = self.dedup;
        plan.topup_factor = self.topup_factor;
        plan
    }

    /// Checks everything that can be checked before any generation call.
    pub fn validate(&self, task: &TaskSpec, scaling: bool) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        if !self.seeds.iter().all(|s| seen.insert(*s)) {
            return bad("seeds must be distinct".into());
        }
        if self.modes.is_empty() {
            return bad("at least one mode is required".into());
        }
        if self.per_class == 0 {
            return bad("per_class must be >= 1".into());
        }
        if scaling {
            if self.scaling_sizes.is_empty() {
                return bad("scaling_sizes is empty".into());
            }
            if self.scaling_sizes[0] == 0 || self.scaling_sizes.windows(2).any(|w| w[0] >= w[1]) {
                return bad("scaling_sizes must be positive and strictly increasing".into());
            }
            if *self.scaling_sizes.last().unwrap() > self.per_class {
                return bad(format!(
                    "largest scaling size {} exceeds per_class {}",
                    self.scaling_sizes.last().unwrap(),
                    self.per_class
                ));
            }
        }
        for mode in &self.modes {
            self.plan(task, *mode, self.per_class, self.seeds[0])
                .validate()
                .map_err(|e| RunnerError::Config(format!("mode {mode}: {e}")))?;
        }
        match (&self.gold_test, &self.mock_gold, &self.backend) {
            (Some(p), _, _) if !p.is_file() => return bad(format!("gold test file {} not found", p.display())),
            (Some(_), _, _) => {}
            (None, Some(_), BackendChoice::Mock { .. }) => {}
            (None, Some(_), _) => return bad("mock_gold requires the mock backend".into()),
            (None, None, _) => return bad("gold_test (or mock_gold with the mock backend) is required".into()),
        }
        if let Some(p) = &self.gold_train {
            if !p.is_file() {
                return bad(format!("gold train file {} not found", p.display()));
            }
        }
        if let Some(p) = &self.reference_model {
            if !p.is_file() {
                return bad(format!("reference model {} not found", p.display()));
            }
        }
        self.train.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        Ok(())
    }
}
