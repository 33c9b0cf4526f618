//! Softmax, categorical cross-entropy and binary cross-entropy on logits.

use super::tensor::Tensor;

/// Probabilities are clamped below by this before taking the log.
pub const PROB_EPS: f64 = 1e-12;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax of an `[n, k, 1, 1]` logit tensor.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    (0..logits.batch()).map(|i| softmax(logits.sample(i))).collect()
}

/// `-sum_c y_c ln p_c` for one example with a one-hot target.
pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(PROB_EPS).ln()
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits, `(p - y) / n`.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> (f64, Tensor) {
    let n = logits.batch();
    let k = logits.sample_len();
    assert_eq!(targets.len(), n, "one target per row");
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (i, &t) in targets.iter().enumerate() {
        let p = softmax(logits.sample(i));
        loss += cross_entropy(&p, t);
        grad.extend(p.iter().enumerate().map(|(c, &pc)| {
            let y = if c == t { 1.0 } else { 0.0 };
            (pc - y) / n as f64
        }));
    }
    (loss / n as f64, Tensor::from_vec(logits.shape(), grad))
}

/// Mean binary cross-entropy of `sigmoid(logit)` against `targets` and its
/// gradient w.r.t. the logits, `(sigmoid(z) - t) / n`.
pub fn bce_with_logits(logits: &Tensor, targets: &[f64]) -> (f64, Tensor) {
    let z = logits.data();
    assert_eq!(z.len(), targets.len(), "one target per logit");
    let n = z.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for (&zi, &ti) in z.iter().zip(targets) {
        loss += zi.max(0.0) - zi * ti + (-zi.abs()).exp().ln_1p();
        grad.push((super::layers::sigmoid(zi) - ti) / n);
    }
    (loss / n, Tensor::from_vec(logits.shape(), grad))
}
