use super::NnError;

/// Mean of squared elementwise differences.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::ShapeMismatch(format!(
            "prediction {} vs target {}",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// `−ln p[label]` for a probability vector.
pub fn cce_loss(probs: &[f64], label: usize) -> Result<f64, NnError> {
    if label >= probs.len() {
        return Err(NnError::ShapeMismatch(format!(
            "label {label} for {} classes",
            probs.len()
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(NnError::NonDistribution);
    }
    Ok(-probs[label].ln())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
