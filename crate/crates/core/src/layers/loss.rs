use crate::error::{Error, Result};
use crate::tensor::Vector;

/// Max-shifted softmax followed by cross-entropy against a one-hot target.
/// Returns the loss and its gradient `p - y` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Vector, onehot: &Vector) -> Result<(f64, Vector)> {
    if logits.len() != onehot.len() {
        return Err(Error::shape(format!(
            "{} logits against {} targets",
            logits.len(),
            onehot.len()
        )));
    }
    let hot = onehot
        .iter()
        .position(|&v| v == 1.0)
        .filter(|_| onehot.iter().filter(|&&v| v != 0.0).count() == 1)
        .ok_or_else(|| Error::param("target is not a one-hot vector"))?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let log_total = total.ln();
    let loss = -(logits[hot] - max - log_total);
    let grad: Vector = exps
        .iter()
        .zip(onehot.iter())
        .map(|(e, y)| e / total - y)
        .collect();
    Ok((loss, grad))
}

/// `(1/n) Σ (pred - target)^2` and its gradient.
pub fn mse_loss(pred: &Vector, target: &Vector) -> Result<(f64, Vector)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "mse: {} predictions against {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let diff: Vec<f64> = pred.iter().zip(target.iter()).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad: Vector = diff.iter().map(|d| 2.0 * d / n).collect();
    Ok((loss, grad))
}
