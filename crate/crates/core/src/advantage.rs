//! Generalized advantage estimation and advantage normalization.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PathEstimates {
    pub advantages: Vec<f64>,
    /// Discounted reward sums including the bootstrap value.
    pub returns_to_go: Vec<f64>,
}

/// GAE over one path. `values` holds one entry per reward plus the bootstrap
/// value of the state after the last reward (0 at a true episode end).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<PathEstimates> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::Dimension {
            expected: rewards.len() + 1,
            got: values.len(),
        });
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut returns_to_go = vec![0.0; n];
    let mut acc = 0.0;
    let mut ret = values[n];
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
        ret = rewards[t] + gamma * ret;
        returns_to_go[t] = ret;
    }
    Ok(PathEstimates {
        advantages,
        returns_to_go,
    })
}

/// Discounted suffix sums `out[t] = sum_k gamma^k x[t + k]`.
pub fn discount_cumsum(x: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut acc = 0.0;
    for t in (0..x.len()).rev() {
        acc = x[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Center and scale to unit (population) standard deviation. Batches with
/// standard deviation below `1e-8` are only centered.
pub fn normalize_advantages(batch: &[f64]) -> Result<Vec<f64>> {
    if batch.len() < 2 {
        return Err(Error::Usage(format!(
            "advantage normalization needs at least 2 samples, got {}",
            batch.len()
        )));
    }
    let n = batch.len() as f64;
    let mean = batch.iter().sum::<f64>() / n;
    let var = batch.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return Ok(batch.iter().map(|a| a - mean).collect());
    }
    Ok(batch.iter().map(|a| (a - mean) / std).collect())
}
