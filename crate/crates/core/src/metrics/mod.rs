//! Dataset quality and task performance metrics.

mod bleu;
mod tokenize;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{self_bleu, self_bleu_with, SelfBleuConfig};
pub use tokenize::{distribution_csv, token_profile, tokenize, weighted_jaccard, TokenProfile, TokenScheme};

use crate::exec::{self, Parallelism};
use crate::task::{Dataset, TaskKind, TaskSpec};
use crate::trainer::{self, LinearModel, TrainError};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("Self-BLEU needs at least 2 texts, got {0}")]
    TooFewTexts(usize),
    #[error("constant input: rank correlation is undefined")]
    ConstantInput,
    #[error("token profiles use different tokenizers: {0} vs {1}")]
    TokenizerMismatch(String, String),
    #[error("confusion counts are empty")]
    EmptyCounts,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("model/task mismatch: {0}")]
    TaskMismatch(String),
}

impl From<TrainError> for MetricError {
    fn from(e: TrainError) -> Self {
        MetricError::TaskMismatch(e.to_string())
    }
}

fn check_lengths(a: usize, b: usize, need: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    if a < need {
        return Err(MetricError::TooShort { need, got: a });
    }
    Ok(())
}

pub fn accuracy(pred: &[u32], gold: &[u32]) -> Result<f64, MetricError> {
    check_lengths(pred.len(), gold.len(), 1)?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn mse(pred: &[f64], gold: &[f64]) -> Result<f64, MetricError> {
    check_lengths(pred.len(), gold.len(), 1)?;
    Ok(pred.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64)
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_lengths(x.len(), y.len(), 2)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionCounts {
    Binary { tp: u64, fp: u64, tn: u64, fn_: u64 },
    /// `matrix[gold][pred]`.
    Multiclass { matrix: Vec<Vec<u64>> },
}

impl ConfusionCounts {
    /// Builds a `C x C` matrix from label positions in `0..classes`.
    pub fn from_indices(pred: &[usize], gold: &[usize], classes: usize) -> Result<Self, MetricError> {
        check_lengths(pred.len(), gold.len(), 0)?;
        let mut matrix = vec![vec![0u64; classes]; classes];
        for (&p, &g) in pred.iter().zip(gold) {
            if p >= classes || g >= classes {
                return Err(MetricError::InvalidArgument(format!("class index out of range 0..{classes}")));
            }
            matrix[g][p] += 1;
        }
        Ok(ConfusionCounts::Multiclass { matrix })
    }

    pub fn total(&self) -> u64 {
        match self {
            ConfusionCounts::Binary { tp, fp, tn, fn_ } => tp + fp + tn + fn_,
            ConfusionCounts::Multiclass { matrix } => matrix.iter().flatten().sum(),
        }
    }
}

/// Matthews correlation coefficient. A zero factor in the denominator
/// yields 0. The multiclass form is the generalized `R_K` statistic, which
/// reduces to the binary formula on a 2x2 matrix.
pub fn mcc(c: &ConfusionCounts) -> Result<f64, MetricError> {
    if c.total() == 0 {
        return Err(MetricError::EmptyCounts);
    }
    match c {
        ConfusionCounts::Binary { tp, fp, tn, fn_ } => {
            let (tp, fp, tn, fn_) = (*tp as f64, *fp as f64, *tn as f64, *fn_ as f64);
            let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
            if den == 0.0 {
                return Ok(0.0);
            }
            Ok((tp * tn - fp * fn_) / den.sqrt())
        }
        ConfusionCounts::Multiclass { matrix } => {
            let k = matrix.len();
            let s: f64 = c.total() as f64;
            let correct: f64 = (0..k).map(|i| matrix[i][i] as f64).sum();
            let t: Vec<f64> = (0..k).map(|i| matrix[i].iter().sum::<u64>() as f64).collect();
            let p: Vec<f64> = (0..k).map(|j| matrix.iter().map(|row| row[j]).sum::<u64>() as f64).collect();
            let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
            let pp: f64 = p.iter().map(|a| a * a).sum();
            let tt: f64 = t.iter().map(|a| a * a).sum();
            let den = (s * s - pp) * (s * s - tt);
            if den == 0.0 {
                return Ok(0.0);
            }
            Ok((correct * s - pt) / den.sqrt())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectnessKind {
    Accuracy,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCorrectness {
    pub kind: CorrectnessKind,
    pub value: f64,
}

/// Scores synthetic labels with a reference model trained on gold data:
/// accuracy for classification, MSE of the expected label value for
/// discretized regression.
pub fn label_correctness(synthetic: &Dataset, reference: &LinearModel, task: &TaskSpec) -> Result<LabelCorrectness, MetricError> {
    label_correctness_with(synthetic, reference, task, Parallelism::default())
}

pub fn label_correctness_with(
    synthetic: &Dataset,
    reference: &LinearModel,
    task: &TaskSpec,
    par: Parallelism,
) -> Result<LabelCorrectness, MetricError> {
    reference.check_compatible(task)?;
    if synthetic.task_id != task.task_id {
        return Err(MetricError::TaskMismatch(format!(
            "dataset is for {}, task is {}",
            synthetic.task_id, task.task_id
        )));
    }
    if synthetic.is_empty() {
        return Err(MetricError::TooShort { need: 1, got: 0 });
    }
    if task.kind == TaskKind::PairRegressionDiscretized {
        let scored = exec::map(par, &synthetic.samples, |s| {
            trainer::regression_score(reference, task, &s.text1, s.text2.as_deref())
        });
        let mut pred = Vec::with_capacity(scored.len());
        let mut gold = Vec::with_capacity(scored.len());
        for (s, p) in synthetic.samples.iter().zip(scored) {
            pred.push(p?);
            gold.push(task.label(s.label_id).and_then(|l| l.numeric_value).unwrap_or(f64::NAN));
        }
        return Ok(LabelCorrectness { kind: CorrectnessKind::Mse, value: mse(&pred, &gold)? });
    }
    let predicted = exec::map(par, &synthetic.samples, |s| reference.predict_label(&s.text1, s.text2.as_deref()));
    let mut pred = Vec::with_capacity(predicted.len());
    for p in predicted {
        pred.push(p?);
    }
    let gold: Vec<u32> = synthetic.samples.iter().map(|s| s.label_id).collect();
    Ok(LabelCorrectness { kind: CorrectnessKind::Accuracy, value: accuracy(&pred, &gold)? })
}

/// Metrics for one dataset or one trained model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_bleu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_jaccard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_correctness: Option<LabelCorrectness>,
    #[serde(default)]
    pub downstream: BTreeMap<String, f64>,
    /// Metrics that could not be computed, with the reason.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub unavailable: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_scheme: Option<TokenScheme>,
    #[serde(default)]
    pub sample_sizes: BTreeMap<String, usize>,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} = {v} is outside [0, 1]"))
            }
        };
        if let Some(v) = self.self_bleu {
            unit("self_bleu", v)?;
        }
        if let Some(v) = self.weighted_jaccard {
            unit("weighted_jaccard", v)?;
        }
        if let Some(lc) = &self.label_correctness {
            match lc.kind {
                CorrectnessKind::Accuracy => unit("label_correctness", lc.value)?,
                CorrectnessKind::Mse if lc.value < 0.0 => return Err("label_correctness MSE < 0".into()),
                CorrectnessKind::Mse => {}
            }
        }
        for (k, &v) in &self.downstream {
            match k.as_str() {
                "accuracy" => unit(k, v)?,
                "spearman" | "mcc" if !(-1.0..=1.0).contains(&v) => return Err(format!("{k} = {v} is outside [-1, 1]")),
                _ => {}
            }
        }
        Ok(())
    }

    /// Flat `(name, value)` view of every numeric entry.
    pub fn values(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if let Some(v) = self.self_bleu {
            out.insert("self_bleu".to_string(), v);
        }
        if let Some(v) = self.weighted_jaccard {
            out.insert("weighted_jaccard".to_string(), v);
        }
        if let Some(lc) = &self.label_correctness {
            let name = match lc.kind {
                CorrectnessKind::Accuracy => "label_correctness_accuracy",
                CorrectnessKind::Mse => "label_correctness_mse",
            };
            out.insert(name.to_string(), lc.value);
        }
        for (k, v) in &self.downstream {
            out.insert(k.clone(), *v);
        }
        out
    }

    /// Human-readable two-column table; ratio metrics are shown x100.
    pub fn render_table(&self) -> String {
        let mut rows = vec![("metric".to_string(), "value".to_string())];
        for (k, v) in self.values() {
            let shown = if is_percentage_metric(&k) { format!("{:.2}", v * 100.0) } else { format!("{v:.4}") };
            rows.push((k, shown));
        }
        for (k, why) in &self.unavailable {
            rows.push((k.clone(), format!("unavailable ({why})")));
        }
        if let Some(s) = self.token_scheme {
            rows.push(("token_scheme".into(), s.to_string()));
        }
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<w$}  {v}\n"));
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

/// Metrics reported on a 0-100 scale in rendered tables.
pub fn is_percentage_metric(name: &str) -> bool {
    matches!(
        name,
        "self_bleu" | "weighted_jaccard" | "accuracy" | "mcc" | "spearman" | "label_correctness_accuracy"
    )
}
