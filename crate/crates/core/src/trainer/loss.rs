//! Label-smoothed softmax cross-entropy for a sparse linear model.
//!
//! Weights are stored feature-major: the `classes` weights of feature `j`
//! live at `j * classes .. (j + 1) * classes`.

use super::features::FeatureVector;

/// Target distribution: `1 - eps` on the true class, `eps / (C - 1)` on the
/// others. A single-class task always targets 1.
pub fn smoothed_targets(label: usize, classes: usize, eps: f64) -> Vec<f64> {
    if classes == 1 {
        return vec![1.0];
    }
    let off = eps / (classes - 1) as f64;
    let mut t = vec![off; classes];
    t[label] = 1.0 - eps;
    t
}

pub fn logits(weights: &[f64], bias: &[f64], row: &FeatureVector) -> Vec<f64> {
    let c = bias.len();
    let mut z = bias.to_vec();
    for (&j, &x) in row.indices.iter().zip(&row.values) {
        let w = &weights[j as usize * c..(j as usize + 1) * c];
        for k in 0..c {
            z[k] += w[k] * x;
        }
    }
    z
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean label-smoothed cross-entropy over a batch.
pub fn batch_loss(weights: &[f64], bias: &[f64], rows: &[&FeatureVector], labels: &[usize], eps: f64) -> f64 {
    let c = bias.len();
    let mut total = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        let lp = log_softmax(&logits(weights, bias, row));
        let t = smoothed_targets(y, c, eps);
        total -= t.iter().zip(&lp).map(|(a, b)| a * b).sum::<f64>();
    }
    total / rows.len() as f64
}

/// Adds the gradient of [`batch_loss`] into `grad_w` / `grad_b` and returns
/// the loss. Only the columns of features present in the batch are touched.
pub fn accumulate_loss_grad(
    weights: &[f64],
    bias: &[f64],
    rows: &[&FeatureVector],
    labels: &[usize],
    eps: f64,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> f64 {
    let c = bias.len();
    let scale = 1.0 / rows.len() as f64;
    let mut total = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        let lp = log_softmax(&logits(weights, bias, row));
        let t = smoothed_targets(y, c, eps);
        total -= t.iter().zip(&lp).map(|(a, b)| a * b).sum::<f64>();
        // d loss / d z_k = p_k - t_k (targets sum to one)
        let delta: Vec<f64> = lp.iter().zip(&t).map(|(l, tk)| (l.exp() - tk) * scale).collect();
        for k in 0..c {
            grad_b[k] += delta[k];
        }
        for (&j, &x) in row.indices.iter().zip(&row.values) {
            let g = &mut grad_w[j as usize * c..(j as usize + 1) * c];
            for k in 0..c {
                g[k] += delta[k] * x;
            }
        }
    }
    total * scale
}
