//! Normality-based uncertainty of predicted quantile bars.
//!
//! The bars are compared against the normal distribution they imply: each
//! bar yields a per-quantile standard deviation, their average defines a
//! reconstructed normal grid, and the squared gap between the two sets of
//! bars becomes the error `E`. The weight `sigmoid(-E * T) + 0.5` then lies in
//! `(0.5, 1]`.

use crate::dvf::mean;
use crate::error::{check_dim, Error, Result};
use crate::schedule::normal_bars;
use crate::stats::ZGrid;

/// Lower clamp for per-quantile standard deviations.
pub const SIGMA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalFit {
    pub q_avg: f64,
    pub sigma_avg: f64,
    pub reconstructed: Vec<f64>,
}

pub fn fit_normal(q: &[f64], zgrid: &ZGrid) -> Result<NormalFit> {
    crate::instrument::bump(|c| c.uncertainty_evals += 1);
    if q.len() < 2 {
        return Err(Error::Domain(format!("normal fit needs at least 2 bars, got {}", q.len())));
    }
    check_dim(zgrid.n(), q.len())?;
    let q_avg = mean(q);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (qi, zi) in q.iter().zip(zgrid.z()) {
        if *zi == 0.0 {
            continue;
        }
        // A bar on the wrong side of the mean gives a negative sigma; clamp it.
        sum += ((qi - q_avg) / zi).max(SIGMA_EPS);
        count += 1;
    }
    let sigma_avg = sum / count as f64;
    Ok(NormalFit {
        q_avg,
        sigma_avg,
        reconstructed: normal_bars(q_avg, sigma_avg, zgrid),
    })
}

/// `E = sum_i (q_i - q'_i)^2` against the reconstructed normal bars.
pub fn uncertainty_error(q: &[f64], zgrid: &ZGrid) -> Result<f64> {
    let fit = fit_normal(q, zgrid)?;
    Ok(q.iter().zip(&fit.reconstructed).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn uncertainty_weight(error: f64, temperature: f64) -> Result<f64> {
    if !(error >= 0.0) {
        return Err(Error::Domain(format!("uncertainty error must be non-negative, got {error}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    Ok(sigmoid(-error * temperature) + 0.5)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
