//! Weighted-surrogate TRPO: conjugate-gradient natural step plus a
//! backtracking line search on the mean-KL constraint.

use super::batch::PolicyBatch;
use crate::error::{Error, Result};
use crate::policy::{mean_kl, GaussianPolicy};

const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrpoConfig {
    pub delta: f64,
    pub cg_iters: usize,
    pub damping: f64,
    pub backtrack_coeff: f64,
    pub backtrack_iters: usize,
    pub normalize_advantages: bool,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        TrpoConfig {
            delta: 0.01,
            cg_iters: 10,
            damping: 0.1,
            backtrack_coeff: 0.8,
            backtrack_iters: 10,
            normalize_advantages: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrpoDiagnostics {
    pub loss_old: f64,
    pub loss_new: f64,
    /// `loss_old - loss_new`; non-negative for accepted steps.
    pub improvement: f64,
    /// Mean KL between the old and the final policy.
    pub kl: f64,
    /// Step shrinks tried before acceptance (or all of them on failure).
    pub backtracks: usize,
    pub accepted: bool,
    /// CG produced non-finite values; parameters were left alone.
    pub aborted: bool,
}

/// Approximately solve `A x = b` for symmetric positive-definite `A` given
/// only products `A v`.
pub fn conjugate_gradient(mut avp: impl FnMut(&[f64]) -> Result<Vec<f64>>, b: &[f64], iters: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut r_dot = dot(&r, &r);
    for _ in 0..iters {
        if r_dot < 1e-30 {
            break;
        }
        let z = avp(&p)?;
        let curvature = dot(&p, &z);
        if !(curvature > 0.0) {
            if curvature.is_nan() {
                x.iter_mut().for_each(|v| *v = f64::NAN);
            }
            break;
        }
        let alpha = r_dot / curvature;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * z[i];
        }
        let r_dot_new = dot(&r, &r);
        let beta = r_dot_new / r_dot;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        r_dot = r_dot_new;
    }
    Ok(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Surrogate loss `-mean_b w_b rho_b A_b` and its gradient.
pub fn surrogate(policy: &GaussianPolicy, batch: &PolicyBatch, advantages: &[f64]) -> Result<(f64, Vec<f64>)> {
    let b = batch.len();
    let logp = policy.log_prob_batch(batch.states.view(), batch.actions.view())?;
    let scale = -1.0 / b as f64;
    let mut loss = 0.0;
    let mut coeffs = vec![0.0; b];
    for i in 0..b {
        let ratio = (logp[i] - batch.logp_old[i]).exp();
        loss += batch.weights[i] * ratio * advantages[i];
        coeffs[i] = scale * batch.weights[i] * advantages[i] * ratio;
    }
    let (_, grad) = policy.log_prob_weighted_grad(batch.states.view(), batch.actions.view(), &coeffs)?;
    Ok((scale * loss, grad))
}

fn surrogate_loss(policy: &GaussianPolicy, batch: &PolicyBatch, advantages: &[f64]) -> Result<f64> {
    let logp = policy.log_prob_batch(batch.states.view(), batch.actions.view())?;
    let total: f64 = (0..batch.len())
        .map(|i| batch.weights[i] * (logp[i] - batch.logp_old[i]).exp() * advantages[i])
        .sum();
    Ok(-total / batch.len() as f64)
}

pub fn trpo_update(policy: &mut GaussianPolicy, batch: &PolicyBatch, cfg: &TrpoConfig) -> Result<TrpoDiagnostics> {
    if batch.is_empty() {
        return Err(Error::Usage("empty buffer".into()));
    }
    let adv = batch.objective_advantages(cfg.normalize_advantages)?;
    let old = policy.clone();
    let old_params = old.params();
    let (loss_old, g) = surrogate(&old, batch, &adv)?;
    let unchanged = |aborted| TrpoDiagnostics {
        loss_old,
        loss_new: loss_old,
        improvement: 0.0,
        kl: 0.0,
        backtracks: 0,
        accepted: false,
        aborted,
    };
    if g.iter().all(|&v| v == 0.0) {
        return Ok(unchanged(false));
    }
    let states = batch.states.view();
    let hvp = |v: &[f64]| -> Result<Vec<f64>> {
        let mut out = old.fisher_vector_product(states, v)?;
        for (o, x) in out.iter_mut().zip(v) {
            *o += cfg.damping * x;
        }
        Ok(out)
    };
    let x = conjugate_gradient(hvp, &g, cfg.cg_iters)?;
    let hx = hvp(&x)?;
    let quad = dot(&x, &hx);
    if x.iter().any(|v| !v.is_finite()) || !quad.is_finite() {
        return Ok(unchanged(true));
    }
    let alpha = (2.0 * cfg.delta / (quad + EPS)).sqrt();
    let mut candidate = vec![0.0; old_params.len()];
    for j in 0..cfg.backtrack_iters {
        let step = alpha * cfg.backtrack_coeff.powi(j as i32);
        for i in 0..candidate.len() {
            candidate[i] = old_params[i] - step * x[i];
        }
        policy.set_params(&candidate)?;
        let kl = mean_kl(&old, policy, states)?;
        let loss_new = surrogate_loss(policy, batch, &adv)?;
        if kl <= cfg.delta && loss_new <= loss_old {
            return Ok(TrpoDiagnostics {
                loss_old,
                loss_new,
                improvement: loss_old - loss_new,
                kl,
                backtracks: j,
                accepted: true,
                aborted: false,
            });
        }
    }
    policy.set_params(&old_params)?;
    Ok(TrpoDiagnostics {
        backtracks: cfg.backtrack_iters,
        ..unchanged(false)
    })
}
