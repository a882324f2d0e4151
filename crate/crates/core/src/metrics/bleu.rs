//! Self-BLEU: mean sentence-level BLEU of each text against all the other
//! texts of the same corpus.
//!
//! Per order `n` the modified precision is `(clipped + 1) / (total + 1)`,
//! where a hypothesis n-gram count is clipped by its largest count in any
//! single reference. Orders are combined with a uniform geometric mean and a
//! brevity penalty against the closest reference length (ties go to the
//! shorter one). An empty hypothesis scores 0.
//!
//! The clipping maxima are computed once per corpus by keeping the two
//! largest counts of every n-gram, which makes the cost linear in corpus
//! size instead of quadratic.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, TokenScheme};
use super::MetricError;
use crate::exec::{self, Parallelism};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfBleuConfig {
    pub max_n: usize,
    /// Corpora larger than this are subsampled (seeded) before scoring.
    pub sample_cap: usize,
    pub seed: u64,
    pub scheme: TokenScheme,
}

impl Default for SelfBleuConfig {
    fn default() -> Self {
        Self {
            max_n: 4,
            sample_cap: 1000,
            seed: 0,
            scheme: TokenScheme::Whitespace,
        }
    }
}

#[derive(Clone, Copy, Default)]
struct TopTwo {
    first: u32,
    first_idx: usize,
    second: u32,
}

impl TopTwo {
    fn push(&mut self, count: u32, idx: usize) {
        if count > self.first {
            self.second = self.first;
            self.first = count;
            self.first_idx = idx;
        } else if count > self.second {
            self.second = count;
        }
    }

    fn max_excluding(&self, idx: usize) -> u32 {
        if self.first_idx == idx {
            self.second
        } else {
            self.first
        }
    }
}

fn ngram_counts(ids: &[u32], n: usize) -> HashMap<&[u32], u32> {
    let mut m = HashMap::new();
    if ids.len() >= n {
        for w in ids.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Closest length to `c` among `sorted` with one occurrence of `c` removed.
fn closest_other_length(sorted: &[usize], c: usize) -> usize {
    let lo = sorted.partition_point(|&x| x < c);
    let hi = sorted.partition_point(|&x| x <= c);
    if hi - lo >= 2 {
        return c;
    }
    let below = (lo > 0).then(|| sorted[lo - 1]);
    let above = sorted.get(hi).copied();
    match (below, above) {
        (Some(b), Some(a)) => {
            if a - c < c - b {
                a
            } else {
                b
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => c,
    }
}

pub fn self_bleu<S: AsRef<str> + Sync>(texts: &[S], cfg: &SelfBleuConfig) -> Result<f64, MetricError> {
    self_bleu_with(texts, cfg, Parallelism::default())
}

/// Self-BLEU with explicit control over hypothesis-level parallelism.
/// Per-hypothesis scores are reduced in order, so both modes agree exactly.
pub fn self_bleu_with<S: AsRef<str> + Sync>(texts: &[S], cfg: &SelfBleuConfig, par: Parallelism) -> Result<f64, MetricError> {
    if texts.len() < 2 {
        return Err(MetricError::TooFewTexts(texts.len()));
    }
    if cfg.max_n == 0 {
        return Err(MetricError::InvalidArgument("max_n must be >= 1".into()));
    }
    let chosen: Vec<&str> = if texts.len() > cfg.sample_cap.max(2) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, texts.len(), cfg.sample_cap.max(2)).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| texts[i].as_ref()).collect()
    } else {
        texts.iter().map(AsRef::as_ref).collect()
    };

    let mut vocab: HashMap<String, u32> = HashMap::new();
    let ids: Vec<Vec<u32>> = chosen
        .iter()
        .map(|t| {
            tokenize(t, cfg.scheme)
                .into_iter()
                .map(|tok| {
                    let next = vocab.len() as u32;
                    *vocab.entry(tok).or_insert(next)
                })
                .collect()
        })
        .collect();

    let per_order: Vec<Vec<HashMap<&[u32], u32>>> = (1..=cfg.max_n)
        .map(|n| ids.iter().map(|t| ngram_counts(t, n)).collect())
        .collect();
    let tops: Vec<HashMap<&[u32], TopTwo>> = per_order
        .iter()
        .map(|counts| {
            let mut top: HashMap<&[u32], TopTwo> = HashMap::new();
            for (i, m) in counts.iter().enumerate() {
                for (g, &c) in m {
                    top.entry(*g).or_default().push(c, i);
                }
            }
            top
        })
        .collect();
    let mut lengths: Vec<usize> = ids.iter().map(Vec::len).collect();
    lengths.sort_unstable();

    let scores = exec::map_range(par, ids.len(), |i| {
        let c = ids[i].len();
        if c == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..cfg.max_n {
            let mut clipped = 0u64;
            for (g, &count) in &per_order[n][i] {
                clipped += u64::from(count.min(tops[n][g].max_excluding(i)));
            }
            let total = (c + 1).saturating_sub(n + 1) as u64;
            log_sum += ((clipped + 1) as f64 / (total + 1) as f64).ln();
        }
        let r = closest_other_length(&lengths, c);
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        bp * (log_sum / cfg.max_n as f64).exp()
    });
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SelfBleuConfig {
        SelfBleuConfig::default()
    }

    #[test]
    fn identical_texts_score_one() {
        let texts = vec!["the quick brown fox jumps over the lazy dog"; 10];
        let v = self_bleu(&texts, &cfg()).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn disjoint_texts_score_at_smoothing_floor() {
        let a = "a0 a1 a2 a3 a4 a5 a6 a7 a8 a9";
        let b = "b0 b1 b2 b3 b4 b5 b6 b7 b8 b9";
        let v = self_bleu(&[a, b], &cfg()).unwrap();
        let floor = ((1.0f64 / 11.0).ln() + (1.0f64 / 10.0).ln() + (1.0f64 / 9.0).ln() + (1.0f64 / 8.0).ln()) / 4.0;
        assert!((v - floor.exp()).abs() < 1e-12);
        assert!(v < 0.2);
    }

    #[test]
    fn needs_two_texts() {
        assert!(matches!(self_bleu(&["x"], &cfg()), Err(MetricError::TooFewTexts(1))));
    }

    #[test]
    fn closest_length_excludes_self() {
        assert_eq!(closest_other_length(&[3, 5, 9], 5), 3);
        assert_eq!(closest_other_length(&[3, 5, 7], 5), 3);
        assert_eq!(closest_other_length(&[4, 5, 7], 5), 4);
        assert_eq!(closest_other_length(&[5, 5, 9], 5), 5);
        assert_eq!(closest_other_length(&[2, 5], 2), 5);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let texts: Vec<String> = (0..60).map(|i| format!("w{} w{} w{} common", i % 7, i % 5, i % 3)).collect();
        let a = self_bleu_with(&texts, &cfg(), Parallelism::Sequential).unwrap();
        let b = self_bleu_with(&texts, &cfg(), Parallelism::Rayon).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cap_subsamples_deterministically() {
        let texts: Vec<String> = (0..50).map(|i| format!("t{} t{} x", i % 4, i % 9)).collect();
        let c = SelfBleuConfig { sample_cap: 10, seed: 3, ..cfg() };
        assert_eq!(self_bleu(&texts, &c).unwrap(), self_bleu(&texts, &c).unwrap());
    }
}
