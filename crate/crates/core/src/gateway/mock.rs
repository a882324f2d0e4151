//! Seeded offline generator.
//!
//! Each label owns a pool of content words. A generated sentence mixes
//! function words, content words from the label's pool and optionally one
//! topic word. With probability `noise_rate` a sentence draws its content
//! words from another pool instead, which gives downstream tests a known
//! amount of label noise.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::{Backend, CompletionResult, GatewayError, GenerationConfig};
use crate::hashing::{derive_seed, digest64};
use crate::prompt::PromptText;
use crate::task::{Dataset, LabelSpec, LabeledSample, TaskSpec};

/// Which pool a noisy sentence draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Uniform over all labels, including the requested one. With `C`
    /// labels the expected fraction of on-label sentences is
    /// `1 - noise_rate * (C - 1) / C`.
    #[default]
    UniformLabel,
    /// Uniform over the other labels only.
    OtherLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPool {
    pub label_id: u32,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockProfile {
    pub label_pools: Vec<LabelPool>,
    pub function_words: Vec<String>,
    /// Shared topic vocabulary. Task words for word-augmented prompts
    /// usually come from here.
    #[serde(default)]
    pub topic_words: Vec<String>,
    /// Inclusive range of content words per sentence.
    pub content_words: (usize, usize),
    /// Inclusive range of function words per sentence.
    pub function_count: (usize, usize),
    /// Zipf exponent over each pool; 0 draws uniformly.
    #[serde(default)]
    pub zipf_exponent: f64,
    /// Probability that a sentence without a prompted word gets a random
    /// topic word.
    #[serde(default)]
    pub topic_rate: f64,
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    /// Joins words; empty for unsegmented scripts.
    #[serde(default = "default_separator")]
    pub separator: String,
    pub seed: u64,
}

fn default_separator() -> String {
    " ".to_string()
}

/// Parameters for [`MockProfile::planted`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedOptions {
    pub words_per_label: usize,
    pub function_words: usize,
    /// Extra topic words beyond the task's own word list.
    pub extra_topic_words: usize,
    pub content_words: (usize, usize),
    pub function_count: (usize, usize),
    pub zipf_exponent: f64,
    pub topic_rate: f64,
    pub noise_rate: f64,
    pub noise_mode: NoiseMode,
    pub seed: u64,
}

impl Default for PlantedOptions {
    fn default() -> Self {
        Self {
            words_per_label: 40,
            function_words: 20,
            extra_topic_words: 0,
            content_words: (2, 4),
            function_count: (2, 4),
            zipf_exponent: 0.0,
            topic_rate: 0.0,
            noise_rate: 0.0,
            noise_mode: NoiseMode::UniformLabel,
            seed: 0,
        }
    }
}

const ONSETS: [&str; 18] = ["k", "s", "t", "n", "h", "m", "r", "g", "z", "d", "b", "p", "y", "w", "sh", "ch", "ts", "f"];
const VOWELS: [&str; 5] = ["a", "i", "u", "e", "o"];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    w
}

fn fresh_words(rng: &mut ChaCha8Rng, n: usize, syllables: (usize, usize), used: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.gen_range(syllables.0..=syllables.1);
        let w = pseudo_word(rng, len);
        if used.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl MockProfile {
    /// Builds a profile with disjoint pseudo-word pools per label. The
    /// task's words, if any, are part of the topic vocabulary.
    pub fn planted(task: &TaskSpec, opts: &PlantedOptions) -> MockProfile {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[0x0070_6c61_6e74_6564]));
        let mut used: HashSet<String> = HashSet::new();
        let mut topic_words: Vec<String> = task.task_words.clone().unwrap_or_default();
        used.extend(topic_words.iter().cloned());
        let function_words = fresh_words(&mut rng, opts.function_words.max(1), (1, 1), &mut used);
        topic_words.extend(fresh_words(&mut rng, opts.extra_topic_words, (2, 3), &mut used));
        let label_pools = task
            .labels
            .iter()
            .map(|l| LabelPool {
                label_id: l.label_id,
                words: fresh_words(&mut rng, opts.words_per_label.max(1), (2, 4), &mut used),
            })
            .collect();
        MockProfile {
            label_pools,
            function_words,
            topic_words,
            content_words: opts.content_words,
            function_count: opts.function_count,
            zipf_exponent: opts.zipf_exponent,
            topic_rate: opts.topic_rate,
            noise_rate: opts.noise_rate,
            noise_mode: opts.noise_mode,
            separator: if task.is_unsegmented_language() { String::new() } else { default_separator() },
            seed: opts.seed,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(format!("mock profile: {m}")));
        if self.label_pools.is_empty() || self.label_pools.iter().any(|p| p.words.is_empty()) {
            return bad("every label needs a non-empty vocabulary");
        }
        if self.function_words.is_empty() {
            return bad("function word pool is empty");
        }
        if self.content_words.0 > self.content_words.1 || self.function_count.0 > self.function_count.1 {
            return bad("ranges must have min <= max");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) || !(0.0..=1.0).contains(&self.topic_rate) {
            return bad("rates must be in [0, 1]");
        }
        if !(self.zipf_exponent >= 0.0) {
            return bad("zipf exponent must be >= 0");
        }
        if self.noise_rate == 0.0 {
            let mut seen = HashSet::new();
            for p in &self.label_pools {
                for w in &p.words {
                    if !seen.insert(w) {
                        return bad("label pools overlap without noise configured");
                    }
                }
            }
        }
        Ok(())
    }

    fn pool_index(&self, label_id: u32) -> Option<usize> {
        self.label_pools.iter().position(|p| p.label_id == label_id)
    }

    fn pick_pool(&self, own: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = self.label_pools.len();
        if n < 2 || self.noise_rate == 0.0 || !rng.gen_bool(self.noise_rate) {
            return own;
        }
        match self.noise_mode {
            NoiseMode::UniformLabel => rng.gen_range(0..n),
            NoiseMode::OtherLabel => {
                let k = rng.gen_range(0..n - 1);
                if k >= own {
                    k + 1
                } else {
                    k
                }
            }
        }
    }

    fn draw_word<'a>(&self, words: &'a [String], rng: &mut ChaCha8Rng) -> &'a str {
        if self.zipf_exponent == 0.0 {
            return &words[rng.gen_range(0..words.len())];
        }
        let dist = Zipf::new(words.len() as u64, self.zipf_exponent).expect("validated exponent");
        let rank = dist.sample(rng) as usize;
        &words[rank.clamp(1, words.len()) - 1]
    }

    /// One sentence. `label` selects the content pool (None for label-free
    /// first sentences); `topic` forces a topic word into the sentence.
    pub fn sentence(&self, label: Option<u32>, topic: Option<&str>, rng: &mut ChaCha8Rng) -> String {
        let mut words: Vec<&str> = Vec::new();
        let n_fn = rng.gen_range(self.function_count.0..=self.function_count.1);
        for _ in 0..n_fn {
            words.push(&self.function_words[rng.gen_range(0..self.function_words.len())]);
        }
        let n_content = rng.gen_range(self.content_words.0..=self.content_words.1);
        match label.and_then(|l| self.pool_index(l)) {
            Some(own) => {
                let pool = &self.label_pools[self.pick_pool(own, rng)].words;
                for _ in 0..n_content {
                    words.push(self.draw_word(pool, rng));
                }
            }
            None if !self.topic_words.is_empty() => {
                for _ in 0..n_content {
                    words.push(self.draw_word(&self.topic_words, rng));
                }
            }
            None => {}
        }
        match topic {
            Some(t) => words.push(t),
            None => {
                if !self.topic_words.is_empty() && self.topic_rate > 0.0 && rng.gen_bool(self.topic_rate) {
                    words.push(&self.topic_words[rng.gen_range(0..self.topic_words.len())]);
                }
            }
        }
        if words.is_empty() {
            words.push(&self.function_words[0]);
        }
        words.shuffle(rng);
        words.join(&self.separator)
    }

    fn numbered(&self, label: Option<u32>, topic: Option<&str>, n_items: usize, seed: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (1..=n_items.max(1))
            .map(|i| format!("{i}. {}", self.sentence(label, topic, &mut rng)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Samples a dataset directly from the profile, e.g. as mock gold data.
    /// Pair tasks get a label-free first sentence and a labelled second one.
    pub fn sample_dataset(&self, task: &TaskSpec, per_class: usize, seed: u64) -> Dataset {
        let mut out = Dataset::new(task.task_id.clone());
        for label in &task.labels {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from(label.label_id), self.seed]));
            for _ in 0..per_class {
                let sample = if task.kind.is_pair() {
                    let first = self.sentence(None, None, &mut rng);
                    let second = self.sentence(Some(label.label_id), None, &mut rng);
                    LabeledSample::gold(first, Some(second), label.label_id)
                } else {
                    LabeledSample::gold(self.sentence(Some(label.label_id), None, &mut rng), None, label.label_id)
                };
                out.samples.push(sample);
            }
        }
        out
    }
}

/// Returns a numbered list of `n_items` sentences for `label`,
/// deterministic in `(profile, label, call_seed)`.
pub fn mock_generate(profile: &MockProfile, label: &LabelSpec, n_items: usize, call_seed: u64) -> String {
    let seed = derive_seed(profile.seed, &[u64::from(label.label_id), call_seed]);
    profile.numbered(Some(label.label_id), None, n_items, seed)
}

/// Backend over a [`MockProfile`]. Reads the label and task word from the
/// prompt metadata; output depends only on profile, prompt digest and
/// call seed.
#[derive(Debug, Clone)]
pub struct MockBackend {
    profile: MockProfile,
}

impl MockBackend {
    pub fn new(profile: MockProfile) -> Result<Self, GatewayError> {
        profile.validate()?;
        Ok(Self { profile })
    }

    pub fn profile(&self) -> &MockProfile {
        &self.profile
    }
}

impl Backend for MockBackend {
    fn name(&self) -> String {
        "mock".to_string()
    }

    fn complete(&self, prompt: &PromptText, config: &GenerationConfig, call_seed: u64) -> Result<CompletionResult, GatewayError> {
        if prompt.rendered.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let start = Instant::now();
        let seed = derive_seed(self.profile.seed, &[digest64(prompt.digest.as_bytes()), call_seed]);
        let raw_text = self.profile.numbered(
            prompt.metadata.label_id,
            prompt.metadata.kadg_word.as_deref(),
            config.items_per_call,
            seed,
        );
        Ok(CompletionResult {
            raw_text,
            backend_name: self.name(),
            latency_ms: start.elapsed().as_millis() as u64,
            attempt_count: 1,
        })
    }
}
