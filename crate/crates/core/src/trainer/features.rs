//! Hashed character n-gram features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hashing::digest64;
use crate::task::{normalize_text, TaskSpec};

use super::TrainError;

pub const HASH_BITS: u32 = 18;
pub const HASH_DIM: usize = 1 << HASH_BITS;

/// Describes how texts map to feature vectors. A model only accepts inputs
/// featurized with the scheme it was trained with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureScheme {
    pub dim_per_block: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// 1 for single-sentence tasks, 2 for pairs.
    pub blocks: usize,
    pub max_chars: usize,
    /// Row normalization applied before the linear layer.
    pub normalization: String,
}

impl FeatureScheme {
    pub fn for_task(task: &TaskSpec) -> Self {
        Self {
            dim_per_block: HASH_DIM,
            ngram_min: 1,
            ngram_max: 3,
            blocks: if task.kind.is_pair() { 2 } else { 1 },
            max_chars: task.max_chars,
            normalization: "l2".to_string(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim_per_block * self.blocks
    }
}

/// Sparse feature counts with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl FeatureVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn as_map(&self) -> BTreeMap<u32, f64> {
        self.indices.iter().copied().zip(self.values.iter().copied()).collect()
    }

    /// Copy scaled to unit L2 norm (unchanged if all zero).
    pub fn l2_normalized(&self) -> FeatureVector {
        let norm = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut out = self.clone();
        if norm > 0.0 {
            for v in &mut out.values {
                *v /= norm;
            }
        }
        out
    }
}

fn add_block(text: &str, scheme: &FeatureScheme, offset: usize, counts: &mut BTreeMap<u32, f64>) {
    let normalized = normalize_text(text);
    let chars: Vec<char> = normalized.chars().take(scheme.max_chars).collect();
    let mask = (scheme.dim_per_block - 1) as u64;
    let mut buf = String::new();
    for n in scheme.ngram_min..=scheme.ngram_max {
        if chars.len() < n {
            break;
        }
        for w in chars.windows(n) {
            buf.clear();
            buf.extend(w);
            let idx = (digest64(buf.as_bytes()) & mask) as usize + offset;
            *counts.entry(idx as u32).or_insert(0.0) += 1.0;
        }
    }
}

pub(crate) fn featurize_with(text1: &str, text2: Option<&str>, scheme: &FeatureScheme) -> Result<FeatureVector, TrainError> {
    if text1.trim().is_empty() {
        return Err(TrainError::EmptyText);
    }
    match (scheme.blocks, text2) {
        (2, None) => return Err(TrainError::Text2Mismatch("pair task input is missing text2")),
        (1, Some(_)) => return Err(TrainError::Text2Mismatch("single-sentence input has text2")),
        _ => {}
    }
    let mut counts = BTreeMap::new();
    add_block(text1, scheme, 0, &mut counts);
    if let Some(t2) = text2 {
        add_block(t2, scheme, scheme.dim_per_block, &mut counts);
    }
    let (indices, values) = counts.into_iter().unzip();
    Ok(FeatureVector { indices, values, dim: scheme.dim() })
}

/// Counts of character 1- to 3-grams of the NFC-normalized, length-capped
/// text, hashed into `2^18` buckets per sentence.
pub fn featurize(text1: &str, text2: Option<&str>, task: &TaskSpec) -> Result<FeatureVector, TrainError> {
    featurize_with(text1, text2, &FeatureScheme::for_task(task))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{PromptTemplate, Stage};
    use crate::task::{LabelSpec, TaskKind, Templates};

    fn task(kind: TaskKind) -> TaskSpec {
        TaskSpec {
            task_id: "t".into(),
            kind,
            description: "d".into(),
            labels: vec![LabelSpec { label_id: 1, name: "a".into(), surface_form: "a".into(), numeric_value: None }],
            task_words: None,
            exemplars: None,
            language: "en".into(),
            templates: Templates {
                single: Some(PromptTemplate::new("{description}{label}", Stage::Single)),
                ..Default::default()
            },
            max_chars: 2000,
        }
    }

    fn bucket(s: &str) -> u32 {
        (digest64(s.as_bytes()) & (HASH_DIM as u64 - 1)) as u32
    }

    #[test]
    fn deterministic() {
        let t = task(TaskKind::SingleClassification);
        assert_eq!(featurize("abc", None, &t).unwrap(), featurize("abc", None, &t).unwrap());
    }

    #[test]
    fn two_chars_give_three_ngrams() {
        let t = task(TaskKind::SingleClassification);
        let f = featurize("ab", None, &t).unwrap();
        let mut expected: Vec<u32> = ["a", "b", "ab"].iter().map(|s| bucket(s)).collect();
        expected.sort_unstable();
        expected.dedup();
        assert_eq!(expected.len(), 3, "test fixture collides");
        assert_eq!(f.indices, expected);
        assert!(f.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pair_blocks_are_translates() {
        let t = task(TaskKind::PairClassification);
        let f = featurize("x", Some("x"), &t).unwrap();
        let (lo, hi): (Vec<u32>, Vec<u32>) = f.indices.iter().partition(|&&i| (i as usize) < HASH_DIM);
        assert_eq!(lo.len(), hi.len());
        for (a, b) in lo.iter().zip(&hi) {
            assert_eq!(*a as usize + HASH_DIM, *b as usize);
        }
        assert_eq!(f.dim, 2 * HASH_DIM);
    }

    #[test]
    fn presence_mismatch_errors() {
        assert!(featurize("x", None, &task(TaskKind::PairClassification)).is_err());
        assert!(featurize("x", Some("y"), &task(TaskKind::Acceptability)).is_err());
        assert!(featurize(" ", None, &task(TaskKind::Acceptability)).is_err());
    }

    #[test]
    fn max_chars_truncates() {
        let mut t = task(TaskKind::SingleClassification);
        t.max_chars = 2;
        assert_eq!(featurize("abcdef", None, &t).unwrap(), featurize("ab", None, &t).unwrap());
    }

    #[test]
    fn repeated_ngrams_count() {
        let t = task(TaskKind::SingleClassification);
        let f = featurize("aa", None, &t).unwrap().as_map();
        assert_eq!(f[&bucket("a")], 2.0);
        assert_eq!(f[&bucket("aa")], 1.0);
    }
}
