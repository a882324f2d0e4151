//! Desk-scale downstream model: a linear softmax classifier over hashed
//! character n-grams, trained with label-smoothed cross-entropy and AdamW
//! under a linear warmup/decay schedule.

mod features;
mod loss;
mod model;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{featurize, FeatureScheme, FeatureVector, HASH_BITS, HASH_DIM};
pub use loss::{accumulate_loss_grad, batch_loss, log_softmax, logits, smoothed_targets, softmax};
pub use model::LinearModel;

use crate::exec::{self, Parallelism};
use crate::metrics::{self, ConfusionCounts, MetricReport};
use crate::task::{Dataset, TaskError, TaskKind, TaskSpec};

/// Learning rate of the original encoder fine-tuning recipe, kept in the
/// manifest next to the rate actually used for the linear model.
pub const ENCODER_REFERENCE_LR: f64 = 5e-5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("input text is empty")]
    EmptyText,
    #[error("{0}")]
    Text2Mismatch(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model/task mismatch: {0}")]
    TaskMismatch(String),
    #[error("feature scheme mismatch: {0}")]
    SchemeMismatch(String),
    #[error("task {0} is not a discretized regression task")]
    NotRegression(String),
    #[error(transparent)]
    Dataset(#[from] TaskError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub label_smoothing: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 4,
            label_smoothing: 0.1,
            learning_rate: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must be in [0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("learning rate must be > 0 and betas in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) || !(self.adam_epsilon > 0.0) {
            return bad("weight_decay must be >= 0 and adam_epsilon > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub config: TrainConfig,
    pub encoder_reference_learning_rate: f64,
    pub samples: usize,
    pub steps: usize,
    pub warmup_steps: usize,
    /// Mean training loss at initialization.
    pub initial_loss: f64,
    /// Mean training loss over the full dataset after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Multiplier for the linear warmup then linear decay schedule at 0-based
/// optimizer step `step`.
pub fn lr_multiplier(step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        step as f64 / warmup.max(1) as f64
    } else {
        ((total.saturating_sub(step)) as f64 / (total - warmup).max(1) as f64).max(0.0)
    }
}

/// Trains a model on `dataset`. Results are bit-identical for a fixed
/// config and seed; the optimizer loop is always single-threaded.
pub fn train(dataset: &Dataset, task: &TaskSpec, cfg: &TrainConfig) -> Result<LinearModel, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    dataset.validate(task)?;
    let scheme = FeatureScheme::for_task(task);
    let classes = task.num_labels();
    let dim = scheme.dim();

    let feats = exec::map(Parallelism::default(), &dataset.samples, |s| {
        features::featurize_with(&s.text1, s.text2.as_deref(), &scheme).map(|f| f.l2_normalized())
    });
    let rows: Vec<FeatureVector> = feats.into_iter().collect::<Result<_, _>>()?;
    let labels: Vec<usize> = dataset
        .samples
        .iter()
        .map(|s| task.label_index(s.label_id).expect("validated label"))
        .collect();

    let mut weights = vec![0.0; dim * classes];
    let mut bias = vec![0.0; classes];
    let mut m_w = vec![0.0; dim * classes];
    let mut v_w = vec![0.0; dim * classes];
    let mut m_b = vec![0.0; classes];
    let mut v_b = vec![0.0; classes];
    let mut grad_w = vec![0.0; dim * classes];
    let mut grad_b = vec![0.0; classes];
    let mut active_mask = vec![false; dim];
    let mut active: Vec<u32> = Vec::new();

    let n = rows.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup = (cfg.warmup_ratio * total_steps as f64).ceil() as usize;
    let all_refs: Vec<&FeatureVector> = rows.iter().collect();
    let initial_loss = batch_loss(&weights, &bias, &all_refs, &labels, cfg.label_smoothing);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch_rows: Vec<&FeatureVector> = chunk.iter().map(|&i| &rows[i]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            for r in &batch_rows {
                for &j in &r.indices {
                    if !active_mask[j as usize] {
                        active_mask[j as usize] = true;
                        active.push(j);
                    }
                }
            }
            let loss = accumulate_loss_grad(
                &weights,
                &bias,
                &batch_rows,
                &batch_labels,
                cfg.label_smoothing,
                &mut grad_w,
                &mut grad_b,
            );
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx });
            }

            let lr = cfg.learning_rate * lr_multiplier(step, warmup, total_steps);
            step += 1;
            let bc1 = 1.0 - b1.powi(step as i32);
            let bc2 = 1.0 - b2.powi(step as i32);
            let adam = |w: &mut f64, m: &mut f64, v: &mut f64, g: f64, decay: bool| {
                if decay {
                    *w -= lr * cfg.weight_decay * *w;
                }
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let denom = (*v / bc2).sqrt() + cfg.adam_epsilon;
                *w -= lr * (*m / bc1) / denom;
            };
            for &j in &active {
                let base = j as usize * classes;
                for k in base..base + classes {
                    adam(&mut weights[k], &mut m_w[k], &mut v_w[k], grad_w[k], true);
                }
            }
            for k in 0..classes {
                adam(&mut bias[k], &mut m_b[k], &mut v_b[k], grad_b[k], false);
                grad_b[k] = 0.0;
            }
            for r in &batch_rows {
                for &j in &r.indices {
                    let base = j as usize * classes;
                    grad_w[base..base + classes].fill(0.0);
                }
            }
        }
        epoch_losses.push(batch_loss(&weights, &bias, &all_refs, &labels, cfg.label_smoothing));
    }

    Ok(LinearModel::from_parts(
        task.clone(),
        scheme,
        weights,
        bias,
        TrainManifest {
            config: cfg.clone(),
            encoder_reference_learning_rate: ENCODER_REFERENCE_LR,
            samples: n,
            steps: total_steps,
            warmup_steps: warmup,
            initial_loss,
            epoch_losses,
        },
    ))
}

/// Class probabilities for one input, in label order.
pub fn predict(model: &LinearModel, text1: &str, text2: Option<&str>) -> Result<Vec<f64>, TrainError> {
    model.probabilities(text1, text2)
}

/// Expected label value under the predicted distribution.
pub fn regression_score(model: &LinearModel, task: &TaskSpec, text1: &str, text2: Option<&str>) -> Result<f64, TrainError> {
    if task.kind != TaskKind::PairRegressionDiscretized {
        return Err(TrainError::NotRegression(task.task_id.clone()));
    }
    model.check_compatible(task)?;
    let p = model.probabilities(text1, text2)?;
    Ok(expected_value(task, &p))
}

pub(crate) fn expected_value(task: &TaskSpec, probs: &[f64]) -> f64 {
    task.labels
        .iter()
        .zip(probs)
        .map(|(l, p)| l.numeric_value.unwrap_or(0.0) * p)
        .sum()
}

/// Scores a model on gold data: accuracy for every task, MCC for binary
/// acceptability, and Spearman (plus MSE) of expected values for
/// discretized regression. A metric that cannot be computed is listed under
/// `unavailable` instead of failing the whole report.
pub fn evaluate(model: &LinearModel, gold: &Dataset, task: &TaskSpec) -> Result<MetricReport, TrainError> {
    evaluate_with(model, gold, task, Parallelism::default())
}

pub fn evaluate_with(model: &LinearModel, gold: &Dataset, task: &TaskSpec, par: Parallelism) -> Result<MetricReport, TrainError> {
    model.check_compatible(task)?;
    if gold.task_id != task.task_id {
        return Err(TrainError::TaskMismatch(format!("gold data is for {}", gold.task_id)));
    }
    if gold.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let probs = exec::map(par, &gold.samples, |s| model.probabilities(&s.text1, s.text2.as_deref()));
    let probs: Vec<Vec<f64>> = probs.into_iter().collect::<Result<_, _>>()?;
    let pred_idx: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let gold_idx: Vec<usize> = gold
        .samples
        .iter()
        .map(|s| task.label_index(s.label_id).ok_or_else(|| TrainError::TaskMismatch(format!("unknown label id {}", s.label_id))))
        .collect::<Result<_, _>>()?;

    let mut report = MetricReport::default();
    let pred_ids: Vec<u32> = pred_idx.iter().map(|&i| task.labels[i].label_id).collect();
    let gold_ids: Vec<u32> = gold.samples.iter().map(|s| s.label_id).collect();
    report
        .downstream
        .insert("accuracy".into(), metrics::accuracy(&pred_ids, &gold_ids).expect("equal non-empty lengths"));
    if task.kind == TaskKind::Acceptability && task.num_labels() == 2 {
        let counts = ConfusionCounts::from_indices(&pred_idx, &gold_idx, 2).expect("indices in range");
        match metrics::mcc(&counts) {
            Ok(v) => {
                report.downstream.insert("mcc".into(), v);
            }
            Err(e) => {
                report.unavailable.insert("mcc".into(), e.to_string());
            }
        }
    }
    if task.kind == TaskKind::PairRegressionDiscretized {
        let scores: Vec<f64> = probs.iter().map(|p| expected_value(task, p)).collect();
        let targets: Vec<f64> = gold
            .samples
            .iter()
            .map(|s| task.label(s.label_id).and_then(|l| l.numeric_value).unwrap_or(f64::NAN))
            .collect();
        match metrics::spearman(&scores, &targets) {
            Ok(v) => {
                report.downstream.insert("spearman".into(), v);
            }
            Err(e) => {
                report.unavailable.insert("spearman".into(), e.to_string());
            }
        }
        if let Ok(v) = metrics::mse(&scores, &targets) {
            report.downstream.insert("mse".into(), v);
        }
    }
    report.sample_sizes.insert("gold_test".into(), gold.len());
    report.sample_sizes.insert("train".into(), model.manifest.samples);
    report.seeds.insert("train".into(), model.manifest.config.seed);
    report
        .notes
        .push("downstream model is a hashed character n-gram linear classifier, not a pretrained encoder".into());
    Ok(report)
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
