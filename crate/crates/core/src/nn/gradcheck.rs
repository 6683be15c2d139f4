use rand::seq::index::sample;

use super::train::{batch_loss_grad, Trainable};
use super::NnError;
use crate::seeds;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is essentially zero are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst_index: Option<usize>,
}

/// Compare the analytic mean-batch gradient with central differences.
///
/// Frozen coordinates are skipped. If more than `max_coords` remain, a
/// seeded random subset is checked.
pub fn grad_check<S: Sync, M: Trainable<S> + Clone>(
    model: &M,
    data: &[S],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, NnError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (_, analytic) = batch_loss_grad(model, data, &idx)?;
    let free: Vec<usize> = (0..model.params().len())
        .filter(|&i| !model.is_frozen(i))
        .collect();
    let coords: Vec<usize> = if free.len() > max_coords {
        let mut rng = seeds::stream_rng(seed, "nn.gradcheck", 0);
        let mut picked: Vec<usize> = sample(&mut rng, free.len(), max_coords)
            .into_iter()
            .map(|k| free[k])
            .collect();
        picked.sort_unstable();
        picked
    } else {
        free
    };

    let mean_loss = |m: &M| data.iter().map(|s| m.sample_loss(s)).sum::<f64>() / data.len() as f64;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: coords.len(),
        worst_index: None,
    };
    for &i in &coords {
        let orig = probe.params().values[i];
        probe.params_mut().values[i] = orig + eps;
        let plus = mean_loss(&probe);
        probe.params_mut().values[i] = orig - eps;
        let minus = mean_loss(&probe);
        probe.params_mut().values[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.values[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}
