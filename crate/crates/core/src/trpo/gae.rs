use super::rollout::Trajectory;
use crate::{Error, Result};

/// Per-turn advantages and value-regression targets, aligned with the
/// trajectories they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub advantages: Vec<Vec<f64>>,
    /// Discounted returns-to-go.
    pub targets: Vec<Vec<f64>>,
}

/// Generalised advantage estimation with `value` as the baseline. The
/// successor of the last turn is terminal. With `normalize` the advantages
/// of the whole batch are shifted to zero mean and, when their spread
/// allows, scaled to unit variance.
pub fn compute_advantages(
    trajs: &[Trajectory],
    value: impl Fn(&[f64]) -> f64,
    gamma: f64,
    lambda: f64,
    normalize: bool,
) -> Result<Advantages> {
    if trajs.iter().all(|t| t.is_empty()) {
        return Err(Error::Empty("advantage estimation over an empty batch".into()));
    }
    let mut advantages = Vec::with_capacity(trajs.len());
    let mut targets = Vec::with_capacity(trajs.len());
    for t in trajs {
        let n = t.len();
        let v: Vec<f64> = t.observations.iter().map(|o| value(o)).collect();
        let mut adv = vec![0.0; n];
        let mut ret = vec![0.0; n];
        let mut gae = 0.0;
        let mut g = 0.0;
        for i in (0..n).rev() {
            let next = if i + 1 < n { v[i + 1] } else { 0.0 };
            let delta = t.rewards[i] + gamma * next - v[i];
            gae = delta + gamma * lambda * gae;
            adv[i] = gae;
            g = t.rewards[i] + gamma * g;
            ret[i] = g;
        }
        advantages.push(adv);
        targets.push(ret);
    }
    if normalize {
        normalize_in_place(&mut advantages);
    }
    Ok(Advantages { advantages, targets })
}

fn normalize_in_place(adv: &mut [Vec<f64>]) {
    let n = adv.iter().map(|a| a.len()).sum::<usize>() as f64;
    let mean = adv.iter().flatten().sum::<f64>() / n;
    let var = adv.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    for a in adv.iter_mut().flatten() {
        *a = (*a - mean) * scale;
    }
}
