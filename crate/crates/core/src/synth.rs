//! Balanced dataset synthesis.
//!
//! For every label the synthesizer repeatedly prompts the backend, parses
//! the numbered completions and keeps samples until the label has exactly
//! `samples_per_class` of them. Sentence-pair tasks run two stages per
//! sample: a label-free first sentence, then a second sentence conditioned
//! on the first one and the label.

use std::collections::{HashSet, VecDeque};

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Parallelism};
use crate::gateway::{Backend, GatewayError, GenerationConfig};
use crate::hashing::derive_seed;
use crate::prompt::{
    build_kadg_prompt, build_pair_first_prompt, build_pair_second_prompt, build_single_prompt, inject_few_shot_with,
    PromptError, PromptText,
};
use crate::task::{normalize_text, Dataset, LabelSpec, LabeledSample, Provenance, SampleSource, TaskSpec};

const STAGE_SINGLE: u64 = 1;
const STAGE_KADG_WORD: u64 = 2;
const STAGE_PAIR_FIRST: u64 = 3;
const STAGE_PAIR_SECOND: u64 = 4;
const STAGE_EXEMPLARS: u64 = 5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("label {label}: backend failure: {source}")]
    Backend {
        label: String,
        #[source]
        source: GatewayError,
    },
    #[error("malformed completion (no parseable items): {raw:?}")]
    MalformedCompletion { raw: String },
    #[error("label {label}: call budget of {calls} exhausted with {produced} of {required} samples")]
    BudgetExhausted {
        label: String,
        produced: usize,
        required: usize,
        calls: usize,
    },
    #[error("synthesis failed for {} label(s); completed: {completed:?}", failures.len())]
    Partial {
        completed: Vec<String>,
        failures: Vec<(String, Box<SynthError>)>,
    },
}

impl SynthError {
    /// True if the failure traces back to the generation backend.
    pub fn is_backend_failure(&self) -> bool {
        match self {
            SynthError::Backend { .. } => true,
            SynthError::Partial { failures, .. } => failures.iter().any(|(_, e)| e.is_backend_failure()),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    ZeroShot,
    Kadg,
    FewShot,
}

impl SynthesisMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthesisMode::ZeroShot => "zero_shot",
            SynthesisMode::Kadg => "kadg",
            SynthesisMode::FewShot => "few_shot",
        }
    }
}

impl std::str::FromStr for SynthesisMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" | "zero_shot" | "zeroshot" => Ok(SynthesisMode::ZeroShot),
            "kadg" => Ok(SynthesisMode::Kadg),
            "fewshot" | "few_shot" | "few" => Ok(SynthesisMode::FewShot),
            other => Err(format!("unknown mode {other:?} (expected zero, kadg or fewshot)")),
        }
    }
}

impl std::fmt::Display for SynthesisMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisPlan {
    pub task: TaskSpec,
    pub mode: SynthesisMode,
    pub samples_per_class: usize,
    pub config: GenerationConfig,
    /// Drop exact duplicates (after NFC + trim) within a label.
    pub dedup: bool,
    pub seed: u64,
    /// Call budget as a multiple of the minimum number of calls.
    pub topup_factor: f64,
    /// Timestamp stamped on every sample; defaults to the run start.
    pub created_at: Option<DateTime<Utc>>,
}

impl SynthesisPlan {
    pub fn new(task: TaskSpec, mode: SynthesisMode, samples_per_class: usize, seed: u64) -> Self {
        Self {
            task,
            mode,
            samples_per_class,
            config: GenerationConfig::default(),
            dedup: true,
            seed,
            topup_factor: 3.0,
            created_at: None,
        }
    }

    /// Checks mode requirements and renders one prompt per stage, so
    /// template problems surface before any backend call.
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidPlan(m));
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be >= 1".into());
        }
        if !(self.topup_factor >= 1.0) {
            return bad(format!("topup_factor must be >= 1, got {}", self.topup_factor));
        }
        self.config.validate().map_err(|e| SynthError::InvalidPlan(e.to_string()))?;
        self.task.validate().map_err(|e| SynthError::InvalidPlan(e.to_string()))?;
        let label = &self.task.labels[0];
        match self.mode {
            SynthesisMode::Kadg if self.task.kind.is_pair() => {
                return bad("word-augmented generation is only defined for single-sentence tasks".into())
            }
            SynthesisMode::Kadg => {
                build_kadg_prompt(&self.task, label, 0)?;
            }
            SynthesisMode::FewShot => {
                select_exemplars(&self.task, self.seed)?;
            }
            SynthesisMode::ZeroShot => {}
        }
        if self.task.kind.is_pair() {
            build_pair_first_prompt(&self.task)?;
            build_pair_second_prompt(&self.task, "x", label)?;
        } else if self.mode != SynthesisMode::Kadg {
            build_single_prompt(&self.task, label)?;
        }
        Ok(())
    }
}

/// Picks one exemplar per label from the task's pool with a seeded draw.
/// The selection is fixed for a whole run.
pub fn select_exemplars(task: &TaskSpec, seed: u64) -> Result<Vec<LabeledSample>, SynthError> {
    let pool = match &task.exemplars {
        Some(p) if !p.is_empty() => p,
        _ => return Err(SynthError::InvalidPlan(format!("task {} has no exemplars", task.task_id))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STAGE_EXEMPLARS]));
    let mut chosen = Vec::with_capacity(task.labels.len());
    for label in &task.labels {
        let candidates: Vec<&LabeledSample> = pool.iter().filter(|s| s.label_id == label.label_id).collect();
        if candidates.is_empty() {
            return Err(SynthError::InvalidPlan(format!("no exemplar for label {}", label.name)));
        }
        chosen.push(candidates[rng.gen_range(0..candidates.len())].clone());
    }
    Ok(chosen)
}

fn split_numbering(line: &str) -> Option<&str> {
    let mut digits = 0;
    let mut rest = line;
    for (i, c) in line.char_indices() {
        if c.is_ascii_digit() || ('０'..='９').contains(&c) {
            digits += 1;
            continue;
        }
        if digits == 0 {
            return None;
        }
        if matches!(c, '.' | ')' | '）' | ':' | '：' | '、' | '．') {
            rest = &line[i + c.len_utf8()..];
            return Some(rest);
        }
        return None;
    }
    let _ = rest;
    None
}

fn strip_bullet(line: &str) -> &str {
    for b in ["- ", "* ", "• ", "・"] {
        if let Some(r) = line.strip_prefix(b) {
            return r;
        }
    }
    line
}

fn strip_quotes(item: &str) -> &str {
    let mut s = item.trim();
    for (open, close) in [("\"", "\""), ("'", "'"), ("“", "”"), ("「", "」"), ("『", "』")] {
        if s.len() >= open.len() + close.len() && s.starts_with(open) && s.ends_with(close) {
            s = s[open.len()..s.len() - close.len()].trim();
            break;
        }
    }
    s
}

/// Splits a completion into at most `expected` cleaned items.
///
/// Numbered lines (`1. x`, `1) x`, `1）x`, `1: x`) win when present and
/// other lines are ignored. Otherwise every non-empty line is an item,
/// which needs at least two lines unless a single item was requested.
pub fn parse_generation(raw: &str, expected: usize) -> Result<Vec<String>, SynthError> {
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let numbered: Vec<&str> = lines.iter().filter_map(|l| split_numbering(l)).collect();
    let candidates: Vec<&str> = if !numbered.is_empty() {
        numbered
    } else if lines.len() >= 2 || (expected == 1 && lines.len() == 1) {
        lines.iter().map(|l| strip_bullet(l)).collect()
    } else {
        Vec::new()
    };
    let items: Vec<String> = candidates
        .into_iter()
        .map(strip_quotes)
        .filter(|s| !s.is_empty())
        .take(expected)
        .map(str::to_string)
        .collect();
    if items.is_empty() {
        return Err(SynthError::MalformedCompletion { raw: raw.to_string() });
    }
    Ok(items)
}

/// Per-label bookkeeping written to the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub label: String,
    pub calls: usize,
    pub raw_items: usize,
    pub retained: usize,
    pub duplicates_dropped: usize,
    pub parse_failures: usize,
    pub discarded_first_sentences: usize,
}

#[derive(Debug, Clone)]
pub struct LabelRun {
    pub samples: Vec<LabeledSample>,
    pub stats: LabelStats,
}

struct Ctx<'a> {
    plan: &'a SynthesisPlan,
    backend: &'a dyn Backend,
    exemplars: Option<Vec<LabeledSample>>,
    created_at: DateTime<Utc>,
}

impl Ctx<'_> {
    fn wrap(&self, prompt: PromptText) -> Result<PromptText, SynthError> {
        match &self.exemplars {
            Some(ex) => Ok(inject_few_shot_with(&prompt, ex, &self.plan.task, false)?),
            None => Ok(prompt),
        }
    }

    fn provenance(&self, backend_name: String, prompt: &PromptText, seed: u64) -> Provenance {
        Provenance {
            source: SampleSource::Synthetic,
            backend_name,
            prompt_digest: prompt.digest.clone(),
            seed: Some(seed),
            created_at: Some(self.created_at),
            kadg_word: prompt.metadata.kadg_word.clone(),
        }
    }

    fn call(&self, label: &LabelSpec, prompt: &PromptText, seed: u64) -> Result<crate::gateway::CompletionResult, SynthError> {
        self.backend
            .complete(prompt, &self.plan.config, seed)
            .map_err(|source| SynthError::Backend { label: label.name.clone(), source })
    }

    fn budget(&self, base_calls: usize) -> usize {
        ((base_calls as f64) * self.plan.topup_factor).ceil() as usize
    }

    fn single(&self, label: &LabelSpec) -> Result<LabelRun, SynthError> {
        let plan = self.plan;
        let m = plan.samples_per_class;
        let ipc = plan.config.items_per_call;
        let budget = self.budget(m.div_ceil(ipc));
        let mut stats = LabelStats { label: label.name.clone(), ..Default::default() };
        let mut seen = HashSet::new();
        let mut samples = Vec::with_capacity(m);
        let lid = u64::from(label.label_id);
        while samples.len() < m {
            if stats.calls >= budget {
                return Err(SynthError::BudgetExhausted {
                    label: label.name.clone(),
                    produced: samples.len(),
                    required: m,
                    calls: stats.calls,
                });
            }
            let k = stats.calls as u64;
            let prompt = match plan.mode {
                SynthesisMode::Kadg => build_kadg_prompt(&plan.task, label, derive_seed(plan.seed, &[lid, STAGE_KADG_WORD, k]))?,
                _ => build_single_prompt(&plan.task, label)?,
            };
            let prompt = self.wrap(prompt)?;
            let seed = derive_seed(plan.seed, &[lid, STAGE_SINGLE, k]);
            let result = self.call(label, &prompt, seed)?;
            stats.calls += 1;
            let items = match parse_generation(&result.raw_text, ipc) {
                Ok(items) => items,
                Err(_) => {
                    stats.parse_failures += 1;
                    continue;
                }
            };
            stats.raw_items += items.len();
            for item in items {
                if samples.len() == m {
                    break;
                }
                if plan.dedup && !seen.insert(normalize_text(&item)) {
                    stats.duplicates_dropped += 1;
                    continue;
                }
                samples.push(LabeledSample {
                    text1: item,
                    text2: None,
                    label_id: label.label_id,
                    provenance: Some(self.provenance(result.backend_name.clone(), &prompt, seed)),
                });
            }
        }
        stats.retained = samples.len();
        Ok(LabelRun { samples, stats })
    }

    fn pair(&self, label: &LabelSpec) -> Result<LabelRun, SynthError> {
        let plan = self.plan;
        let m = plan.samples_per_class;
        let ipc = plan.config.items_per_call;
        let budget = self.budget(m.div_ceil(ipc) + m);
        let mut stats = LabelStats { label: label.name.clone(), ..Default::default() };
        let mut seen = HashSet::new();
        let mut samples = Vec::with_capacity(m);
        let mut pending: VecDeque<String> = VecDeque::new();
        let lid = u64::from(label.label_id);
        let first_prompt = self.wrap(build_pair_first_prompt(&plan.task)?)?;
        let (mut k_first, mut k_second) = (0u64, 0u64);
        while samples.len() < m {
            if stats.calls >= budget {
                return Err(SynthError::BudgetExhausted {
                    label: label.name.clone(),
                    produced: samples.len(),
                    required: m,
                    calls: stats.calls,
                });
            }
            let Some(first) = pending.pop_front() else {
                let seed = derive_seed(plan.seed, &[lid, STAGE_PAIR_FIRST, k_first]);
                k_first += 1;
                let result = self.call(label, &first_prompt, seed)?;
                stats.calls += 1;
                match parse_generation(&result.raw_text, ipc) {
                    Ok(items) => {
                        stats.raw_items += items.len();
                        pending.extend(items);
                    }
                    Err(_) => stats.parse_failures += 1,
                }
                continue;
            };
            let prompt = self.wrap(build_pair_second_prompt(&plan.task, &first, label)?)?;
            let seed = derive_seed(plan.seed, &[lid, STAGE_PAIR_SECOND, k_second]);
            k_second += 1;
            let result = self.call(label, &prompt, seed)?;
            stats.calls += 1;
            let second = match parse_generation(&result.raw_text, 1) {
                Ok(mut items) => items.remove(0),
                Err(_) => {
                    stats.parse_failures += 1;
                    stats.discarded_first_sentences += 1;
                    continue;
                }
            };
            stats.raw_items += 1;
            if plan.dedup && !seen.insert((normalize_text(&first), normalize_text(&second))) {
                stats.duplicates_dropped += 1;
                continue;
            }
            samples.push(LabeledSample {
                text1: first,
                text2: Some(second),
                label_id: label.label_id,
                provenance: Some(self.provenance(result.backend_name, &prompt, seed)),
            });
        }
        stats.retained = samples.len();
        Ok(LabelRun { samples, stats })
    }
}

fn context<'a>(plan: &'a SynthesisPlan, backend: &'a dyn Backend) -> Result<Ctx<'a>, SynthError> {
    plan.validate()?;
    let exemplars = match plan.mode {
        SynthesisMode::FewShot => Some(select_exemplars(&plan.task, plan.seed)?),
        _ => None,
    };
    Ok(Ctx {
        plan,
        backend,
        exemplars,
        created_at: plan.created_at.unwrap_or_else(Utc::now),
    })
}

/// Generates exactly `samples_per_class` single-sentence samples for `label`.
pub fn synthesize_single(plan: &SynthesisPlan, label: &LabelSpec, backend: &dyn Backend) -> Result<LabelRun, SynthError> {
    if plan.task.kind.is_pair() {
        return Err(SynthError::InvalidPlan("synthesize_single needs a single-sentence task".into()));
    }
    context(plan, backend)?.single(label)
}

/// Generates exactly `samples_per_class` sentence pairs for `label`.
pub fn synthesize_pair(plan: &SynthesisPlan, label: &LabelSpec, backend: &dyn Backend) -> Result<LabelRun, SynthError> {
    if !plan.task.kind.is_pair() {
        return Err(SynthError::InvalidPlan("synthesize_pair needs a sentence-pair task".into()));
    }
    context(plan, backend)?.pair(label)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelFailure {
    pub label: String,
    pub error: String,
}

/// Run manifest written next to a synthesized dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisManifest {
    pub task_id: String,
    pub mode: SynthesisMode,
    pub samples_per_class: usize,
    pub seed: u64,
    pub dedup: bool,
    pub topup_factor: f64,
    pub generation: GenerationConfig,
    pub backend: String,
    pub exemplar_ids: Vec<String>,
    pub labels: Vec<LabelStats>,
    pub failures: Vec<LabelFailure>,
}

impl SynthesisManifest {
    pub fn total_calls(&self) -> usize {
        self.labels.iter().map(|l| l.calls).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub dataset: Dataset,
    pub manifest: SynthesisManifest,
}

pub fn synthesize_all(plan: &SynthesisPlan, backend: &dyn Backend) -> Result<SynthesisOutput, SynthError> {
    synthesize_all_with(plan, backend, Parallelism::default())
}

/// Runs every label, concurrently under [`Parallelism::Rayon`]. Samples are
/// assembled in label order, so the result does not depend on scheduling.
pub fn synthesize_all_with(plan: &SynthesisPlan, backend: &dyn Backend, par: Parallelism) -> Result<SynthesisOutput, SynthError> {
    let ctx = context(plan, backend)?;
    let runs = exec::map(par, &plan.task.labels, |label| {
        if plan.task.kind.is_pair() {
            ctx.pair(label)
        } else {
            ctx.single(label)
        }
    });
    let mut dataset = Dataset::new(plan.task.task_id.clone());
    let mut labels = Vec::new();
    let mut completed = Vec::new();
    let mut failures = Vec::new();
    for (label, run) in plan.task.labels.iter().zip(runs) {
        match run {
            Ok(run) => {
                completed.push(label.name.clone());
                labels.push(run.stats);
                dataset.samples.extend(run.samples);
            }
            Err(e) => failures.push((label.name.clone(), Box::new(e))),
        }
    }
    if !failures.is_empty() {
        return Err(SynthError::Partial { completed, failures });
    }
    let manifest = SynthesisManifest {
        task_id: plan.task.task_id.clone(),
        mode: plan.mode,
        samples_per_class: plan.samples_per_class,
        seed: plan.seed,
        dedup: plan.dedup,
        topup_factor: plan.topup_factor,
        generation: plan.config.clone(),
        backend: backend.name(),
        exemplar_ids: ctx
            .exemplars
            .as_ref()
            .map(|ex| ex.iter().map(crate::prompt::exemplar_id).collect())
            .unwrap_or_default(),
        labels,
        failures: Vec::new(),
    };
    Ok(SynthesisOutput { dataset, manifest })
}
