//! Task, label and dataset model with the line-delimited record format.
//!
//! Dataset files hold one JSON record per line:
//! `{"text1": ..., "text2": ..., "label": <label name>, "provenance": {...}}`.
//! Labels are written by name and resolved to ids against a [`TaskSpec`] at
//! load time.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::hashing::derive_seed;
use crate::prompt::{PromptTemplate, Stage};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: line {line}: unknown label {label:?}")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        label: String,
    },
    #[error("{path}: line {line}: {message}")]
    InvalidSample {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleClassification,
    PairClassification,
    PairRegressionDiscretized,
    Acceptability,
}

impl TaskKind {
    pub fn is_pair(self) -> bool {
        matches!(
            self,
            TaskKind::PairClassification | TaskKind::PairRegressionDiscretized
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub label_id: u32,
    pub name: String,
    pub surface_form: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Gold,
    Synthetic,
}

/// Where a sample came from. Mandatory for synthetic samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: SampleSource,
    #[serde(default)]
    pub backend_name: String,
    #[serde(default)]
    pub prompt_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
    /// Task word injected into the prompt, for word-augmented generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kadg_word: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub text1: String,
    pub text2: Option<String>,
    pub label_id: u32,
    pub provenance: Option<Provenance>,
}

impl LabeledSample {
    pub fn gold(text1: impl Into<String>, text2: Option<String>, label_id: u32) -> Self {
        Self {
            text1: text1.into(),
            text2,
            label_id,
            provenance: None,
        }
    }
}

/// On-disk form of a sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub text1: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text2: Option<String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task_id: String,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks every sample against the task.
    pub fn validate(&self, task: &TaskSpec) -> Result<(), TaskError> {
        if self.task_id != task.task_id {
            return Err(TaskError::InvalidDataset(format!(
                "dataset belongs to task {:?}, not {:?}",
                self.task_id, task.task_id
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            task.check_sample(s)
                .map_err(|m| TaskError::InvalidDataset(format!("sample {i}: {m}")))?;
        }
        Ok(())
    }

    /// Texts used for corpus-level analysis: `text1` and, for pairs, `text2`.
    pub fn analysis_texts(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            out.push(s.text1.as_str());
            if let Some(t) = &s.text2 {
                out.push(t.as_str());
            }
        }
        out
    }
}

/// Where a template's text comes from in a task file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TemplateSource {
    Text(String),
    Path(PathBuf),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct TemplatesFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    single: Option<TemplateSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kadg: Option<TemplateSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair_first: Option<TemplateSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair_second: Option<TemplateSource>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSpecFile {
    task_id: String,
    kind: TaskKind,
    description: String,
    #[serde(default)]
    language: String,
    labels: Vec<LabelSpec>,
    #[serde(default)]
    templates: TemplatesFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task_words: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exemplars: Option<Vec<SampleRecord>>,
    #[serde(default = "default_max_chars")]
    max_chars: usize,
}

fn default_max_chars() -> usize {
    2000
}

/// Prompt templates per generation stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Templates {
    pub single: Option<PromptTemplate>,
    /// Single-sentence template carrying a `{word}` slot.
    pub kadg: Option<PromptTemplate>,
    pub pair_first: Option<PromptTemplate>,
    pub pair_second: Option<PromptTemplate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub description: String,
    pub labels: Vec<LabelSpec>,
    pub task_words: Option<Vec<String>>,
    pub exemplars: Option<Vec<LabeledSample>>,
    /// BCP-47 tag, informational.
    pub language: String,
    pub templates: Templates,
    /// Per-text character cap applied before featurization.
    pub max_chars: usize,
}

impl TaskSpec {
    pub fn label(&self, label_id: u32) -> Option<&LabelSpec> {
        self.labels.iter().find(|l| l.label_id == label_id)
    }

    pub fn label_by_name(&self, name: &str) -> Option<&LabelSpec> {
        self.labels.iter().find(|l| l.name == name)
    }

    /// Position of a label in the ordered label list.
    pub fn label_index(&self, label_id: u32) -> Option<usize> {
        self.labels.iter().position(|l| l.label_id == label_id)
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// True for languages written without spaces between words.
    pub fn is_unsegmented_language(&self) -> bool {
        let primary = self.language.split('-').next().unwrap_or("").to_ascii_lowercase();
        matches!(primary.as_str(), "ja" | "zh" | "th" | "ko")
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: String| Err(TaskError::InvalidSpec(format!("{}: {m}", self.task_id)));
        if self.task_id.trim().is_empty() {
            return Err(TaskError::InvalidSpec("task_id is empty".into()));
        }
        if self.labels.is_empty() {
            return bad("labels must be non-empty".into());
        }
        let mut names = HashSet::new();
        for l in &self.labels {
            if !names.insert(l.name.as_str()) {
                return bad(format!("duplicate label name {:?}", l.name));
            }
        }
        let first = self.labels[0].label_id;
        for (i, l) in self.labels.iter().enumerate() {
            if l.label_id != first + i as u32 {
                return bad("label ids must form a contiguous increasing range".into());
            }
        }
        if self.kind == TaskKind::PairRegressionDiscretized {
            let mut prev: Option<f64> = None;
            for l in &self.labels {
                let Some(v) = l.numeric_value else {
                    return bad(format!("label {:?} needs a numeric_value", l.name));
                };
                if !v.is_finite() || prev.is_some_and(|p| v <= p) {
                    return bad("numeric values must be finite and strictly increasing".into());
                }
                prev = Some(v);
            }
        }
        if let Some(words) = &self.task_words {
            if words.is_empty() || words.iter().any(|w| w.trim().is_empty()) {
                return bad("task_words must be non-empty and contain no empty strings".into());
            }
        }
        let check = |t: &Option<PromptTemplate>, stage: Stage, kadg: bool| -> Result<(), TaskError> {
            if let Some(t) = t {
                t.validate(stage, kadg)
                    .map_err(|e| TaskError::InvalidSpec(format!("{}: {e}", self.task_id)))?;
            }
            Ok(())
        };
        check(&self.templates.single, Stage::Single, false)?;
        check(&self.templates.kadg, Stage::Single, true)?;
        check(&self.templates.pair_first, Stage::PairFirst, false)?;
        check(&self.templates.pair_second, Stage::PairSecond, false)?;
        if self.kind.is_pair() {
            if self.templates.pair_first.is_none() || self.templates.pair_second.is_none() {
                return bad("pair tasks need pair_first and pair_second templates".into());
            }
        } else if self.templates.single.is_none() && self.templates.kadg.is_none() {
            return bad("single-sentence tasks need a single or kadg template".into());
        }
        if let Some(ex) = &self.exemplars {
            for (i, s) in ex.iter().enumerate() {
                self.check_sample(s)
                    .map_err(|m| TaskError::InvalidSpec(format!("exemplar {i}: {m}")))?;
            }
        }
        Ok(())
    }

    /// Per-sample invariants; returns a human-readable reason on failure.
    pub fn check_sample(&self, s: &LabeledSample) -> Result<(), String> {
        if s.text1.trim().is_empty() {
            return Err("text1 is empty".into());
        }
        match (&s.text2, self.kind.is_pair()) {
            (None, true) => return Err("pair task sample is missing text2".into()),
            (Some(_), false) => return Err("single-sentence task sample has text2".into()),
            (Some(t), true) if t.trim().is_empty() => return Err("text2 is empty".into()),
            _ => {}
        }
        if self.label(s.label_id).is_none() {
            return Err(format!("label id {} is not defined by the task", s.label_id));
        }
        if let Some(p) = &s.provenance {
            if p.source == SampleSource::Synthetic && p.prompt_digest.is_empty() {
                return Err("synthetic sample without prompt digest".into());
            }
        }
        Ok(())
    }

    pub fn to_record(&self, s: &LabeledSample) -> SampleRecord {
        SampleRecord {
            text1: s.text1.clone(),
            text2: s.text2.clone(),
            label: self
                .label(s.label_id)
                .map(|l| l.name.clone())
                .unwrap_or_default(),
            provenance: s.provenance.clone(),
        }
    }

    fn sample_from_record(&self, r: SampleRecord) -> Result<LabeledSample, String> {
        let label = self
            .label_by_name(&r.label)
            .ok_or_else(|| format!("unknown label {:?}", r.label))?;
        Ok(LabeledSample {
            text1: r.text1,
            text2: r.text2,
            label_id: label.label_id,
            provenance: r.provenance,
        })
    }

    /// Loads a task file, resolving template paths relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<TaskSpec, TaskError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TaskError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    /// Parses a task document; relative template paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<TaskSpec, TaskError> {
        let file: TaskSpecFile = serde_json::from_str(text)
            .map_err(|e| TaskError::InvalidSpec(format!("parse error: {e}")))?;
        let resolve = |src: Option<TemplateSource>, stage: Stage| -> Result<Option<PromptTemplate>, TaskError> {
            Ok(match src {
                None => None,
                Some(TemplateSource::Text(t)) => Some(PromptTemplate::new(t, stage)),
                Some(TemplateSource::Path(p)) => {
                    let full = if p.is_absolute() { p } else { base.join(p) };
                    let t = fs::read_to_string(&full).map_err(|source| TaskError::Io {
                        path: full.clone(),
                        source,
                    })?;
                    Some(PromptTemplate::new(t, stage))
                }
            })
        };
        let templates = Templates {
            single: resolve(file.templates.single, Stage::Single)?,
            kadg: resolve(file.templates.kadg, Stage::Single)?,
            pair_first: resolve(file.templates.pair_first, Stage::PairFirst)?,
            pair_second: resolve(file.templates.pair_second, Stage::PairSecond)?,
        };
        let mut spec = TaskSpec {
            task_id: file.task_id,
            kind: file.kind,
            description: file.description,
            labels: file.labels,
            task_words: file.task_words,
            exemplars: None,
            language: file.language,
            templates,
            max_chars: file.max_chars,
        };
        if let Some(records) = file.exemplars {
            let mut ex = Vec::with_capacity(records.len());
            for (i, r) in records.into_iter().enumerate() {
                ex.push(
                    spec.sample_from_record(r)
                        .map_err(|m| TaskError::InvalidSpec(format!("exemplar {i}: {m}")))?,
                );
            }
            spec.exemplars = Some(ex);
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Serializes to the task file format with templates inlined.
    pub fn to_json(&self) -> String {
        let inline = |t: &Option<PromptTemplate>| t.as_ref().map(|t| TemplateSource::Text(t.text.clone()));
        let file = TaskSpecFile {
            task_id: self.task_id.clone(),
            kind: self.kind,
            description: self.description.clone(),
            language: self.language.clone(),
            labels: self.labels.clone(),
            templates: TemplatesFile {
                single: inline(&self.templates.single),
                kadg: inline(&self.templates.kadg),
                pair_first: inline(&self.templates.pair_first),
                pair_second: inline(&self.templates.pair_second),
            },
            task_words: self.task_words.clone(),
            exemplars: self
                .exemplars
                .as_ref()
                .map(|ex| ex.iter().map(|s| self.to_record(s)).collect()),
            max_chars: self.max_chars,
        };
        serde_json::to_string_pretty(&file).expect("task spec serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaskError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| TaskError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// NFC normalization plus trimming; the only text normalization applied
/// before analysis and featurization.
pub fn normalize_text(text: &str) -> String {
    text.nfc().collect::<String>().trim().to_string()
}

/// Reads a line-delimited dataset file and validates it against `task`.
pub fn load_dataset(path: impl AsRef<Path>, task: &TaskSpec) -> Result<Dataset, TaskError> {
    let path = path.as_ref();
    let io_err = |source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut dataset = Dataset::new(task.task_id.clone());
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(&line).map_err(|e| TaskError::Malformed {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        if task.label_by_name(&record.label).is_none() {
            return Err(TaskError::UnknownLabel {
                path: path.to_path_buf(),
                line: line_no,
                label: record.label,
            });
        }
        let sample = task.sample_from_record(record).expect("label checked above");
        task.check_sample(&sample)
            .map_err(|message| TaskError::InvalidSample {
                path: path.to_path_buf(),
                line: line_no,
                message,
            })?;
        dataset.samples.push(sample);
    }
    Ok(dataset)
}

/// Encodes a dataset as line-delimited records. Newlines inside texts are
/// escaped by the JSON encoding, so one sample is always one line.
pub fn encode_dataset(dataset: &Dataset, task: &TaskSpec) -> String {
    let mut out = String::new();
    for s in &dataset.samples {
        out.push_str(&serde_json::to_string(&task.to_record(s)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(dataset: &Dataset, task: &TaskSpec, path: impl AsRef<Path>) -> Result<(), TaskError> {
    let path = path.as_ref();
    let io_err = |source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    };
    for (i, s) in dataset.samples.iter().enumerate() {
        if task.label(s.label_id).is_none() {
            return Err(TaskError::InvalidDataset(format!(
                "sample {i}: label id {} is not defined by the task",
                s.label_id
            )));
        }
    }
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(encode_dataset(dataset, task).as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Sample count per label; every label of the task is present.
pub fn class_counts(dataset: &Dataset, task: &TaskSpec) -> BTreeMap<u32, usize> {
    let mut counts: BTreeMap<u32, usize> = task.labels.iter().map(|l| (l.label_id, 0)).collect();
    for s in &dataset.samples {
        *counts.entry(s.label_id).or_insert(0) += 1;
    }
    counts
}

/// Takes `min(per_class, available)` samples from each class.
///
/// Within a class the samples are a seeded shuffle prefix, so for a fixed
/// seed smaller subsamples are always subsets of larger ones. Output is
/// grouped by class in label order.
pub fn stratified_subsample(dataset: &Dataset, task: &TaskSpec, per_class: usize, seed: u64) -> Dataset {
    let mut out = Dataset::new(dataset.task_id.clone());
    for label in &task.labels {
        let mut idx: Vec<usize> = dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label_id == label.label_id)
            .map(|(i, _)| i)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::from(label.label_id)]));
        idx.shuffle(&mut rng);
        out.samples
            .extend(idx.into_iter().take(per_class).map(|i| dataset.samples[i].clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptTemplate;

    fn sentiment() -> TaskSpec {
        TaskSpec {
            task_id: "marc".into(),
            kind: TaskKind::SingleClassification,
            description: "Product reviews.".into(),
            labels: vec![
                LabelSpec { label_id: 1, name: "positive".into(), surface_form: "positive".into(), numeric_value: None },
                LabelSpec { label_id: 2, name: "negative".into(), surface_form: "negative".into(), numeric_value: None },
            ],
            task_words: None,
            exemplars: None,
            language: "ja".into(),
            templates: Templates {
                single: Some(PromptTemplate::new("{description} Write a {label} review.", Stage::Single)),
                ..Default::default()
            },
            max_chars: 2000,
        }
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_three_valid_lines_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"text1\":\"good\",\"label\":\"positive\"}\n{\"text1\":\"bad\",\"label\":\"negative\"}\n{\"text1\":\"fine\",\"label\":\"positive\"}\n",
        );
        let d = load_dataset(&p, &sentiment()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples[1].text1, "bad");
        assert_eq!(d.samples[1].label_id, 2);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "");
        assert!(load_dataset(&p, &sentiment()).unwrap().is_empty());
    }

    #[test]
    fn typo_label_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "{\"text1\":\"good\",\"label\":\"positve\"}\n");
        match load_dataset(&p, &sentiment()) {
            Err(TaskError::UnknownLabel { line, label, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(label, "positve");
            }
            other => panic!("expected unknown label, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "{\"text1\":\"a\",\"label\":\"positive\"}\nnot json\n");
        match load_dataset(&p, &sentiment()) {
            Err(TaskError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn text2_on_single_task_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "{\"text1\":\"a\",\"text2\":\"b\",\"label\":\"positive\"}\n");
        assert!(matches!(
            load_dataset(&p, &sentiment()),
            Err(TaskError::InvalidSample { line: 1, .. })
        ));
    }

    #[test]
    fn newlines_round_trip_and_saves_are_byte_stable() {
        let task = sentiment();
        let mut d = Dataset::new("marc");
        d.samples.push(LabeledSample::gold("line one\nline two", None, 1));
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        save_dataset(&d, &task, &a).unwrap();
        let body = fs::read_to_string(&a).unwrap();
        assert_eq!(body.lines().count(), 1);
        assert!(body.contains("\\n"));
        let back = load_dataset(&a, &task).unwrap();
        assert_eq!(back, d);
        save_dataset(&back, &task, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn empty_dataset_saves_zero_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        save_dataset(&Dataset::new("marc"), &sentiment(), &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "");
    }

    #[test]
    fn save_to_missing_directory_names_path() {
        let err = save_dataset(&Dataset::new("marc"), &sentiment(), "/nonexistent/dir/x.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.jsonl"));
    }

    #[test]
    fn class_counts_cover_all_labels() {
        let task = sentiment();
        let mut d = Dataset::new("marc");
        assert_eq!(class_counts(&d, &task), BTreeMap::from([(1, 0), (2, 0)]));
        for _ in 0..3 {
            d.samples.push(LabeledSample::gold("x", None, 1));
        }
        d.samples.push(LabeledSample::gold("y", None, 2));
        assert_eq!(class_counts(&d, &task), BTreeMap::from([(1, 3), (2, 1)]));
    }

    #[test]
    fn stratified_subsample_behaviour() {
        let task = sentiment();
        let mut d = Dataset::new("marc");
        for i in 0..10 {
            d.samples.push(LabeledSample::gold(format!("p{i}"), None, 1));
            d.samples.push(LabeledSample::gold(format!("n{i}"), None, 2));
        }
        assert!(stratified_subsample(&d, &task, 0, 1).is_empty());
        let full = stratified_subsample(&d, &task, 10, 1);
        let mut a: Vec<_> = full.samples.iter().map(|s| s.text1.clone()).collect();
        let mut b: Vec<_> = d.samples.iter().map(|s| s.text1.clone()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let s1 = stratified_subsample(&d, &task, 3, 9);
        assert_eq!(s1, stratified_subsample(&d, &task, 3, 9));
        assert_eq!(class_counts(&s1, &task), BTreeMap::from([(1, 3), (2, 3)]));
        let small = stratified_subsample(&d, &task, 2, 9);
        for s in &small.samples {
            assert!(s1.samples.contains(s));
        }
        assert_eq!(stratified_subsample(&d, &task, 50, 9).len(), 20);
    }

    #[test]
    fn spec_validation_catches_bad_labels() {
        let mut t = sentiment();
        t.labels[1].name = "positive".into();
        assert!(t.validate().is_err());
        let mut t = sentiment();
        t.labels[1].label_id = 5;
        assert!(t.validate().is_err());
        let mut t = sentiment();
        t.task_words = Some(vec!["".into()]);
        assert!(t.validate().is_err());
        let mut t = sentiment();
        t.kind = TaskKind::PairClassification;
        assert!(t.validate().is_err());
        assert!(sentiment().validate().is_ok());
    }

    #[test]
    fn task_json_round_trip() {
        let mut t = sentiment();
        t.exemplars = Some(vec![LabeledSample::gold("great", None, 1)]);
        let back = TaskSpec::from_json(&t.to_json(), Path::new(".")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn normalize_composes_and_trims() {
        assert_eq!(normalize_text("  e\u{301} "), "\u{e9}");
    }
}
