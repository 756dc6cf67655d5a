//! Clipped-surrogate PPO with per-sample uncertainty weights.

use rand::seq::SliceRandom;
use rand::Rng;

use super::batch::PolicyBatch;
use crate::error::{Error, Result};
use crate::net::{adam_step, AdamState};
use crate::policy::GaussianPolicy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub train_iters: usize,
    pub target_kl: f64,
    /// Inner epochs stop once the KL estimate exceeds `kl_stop_factor * target_kl`.
    pub kl_stop_factor: f64,
    /// 0 means full batch.
    pub minibatch_size: usize,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            train_iters: 80,
            target_kl: 0.01,
            kl_stop_factor: 1.5,
            minibatch_size: 0,
            normalize_advantages: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    /// `-mean_b w_b * min(rho_b A_b, clip(rho_b) A_b)`.
    pub loss: f64,
    pub grad: Vec<f64>,
    /// `mean_b (logp_old - logp)`.
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Weighted clipped objective (as a loss to minimize) and its gradient.
pub fn ppo_surrogate(policy: &GaussianPolicy, batch: &PolicyBatch, advantages: &[f64], clip: f64) -> Result<Surrogate> {
    if !(clip > 0.0) {
        return Err(Error::Domain(format!("clip_epsilon must be positive, got {clip}")));
    }
    let b = batch.len();
    let logp = policy.log_prob_batch(batch.states.view(), batch.actions.view())?;
    let scale = -1.0 / b as f64;
    let mut coeffs = vec![0.0; b];
    let mut objective = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    for i in 0..b {
        let ratio = (logp[i] - batch.logp_old[i]).exp();
        let a = advantages[i];
        let clipped_ratio = ratio.clamp(1.0 - clip, 1.0 + clip);
        let plain = ratio * a;
        let capped = clipped_ratio * a;
        if ratio > 1.0 + clip || ratio < 1.0 - clip {
            clipped += 1;
        }
        let w = batch.weights[i];
        if plain <= capped {
            objective += w * plain;
            coeffs[i] = scale * w * a * ratio;
        } else {
            objective += w * capped;
        }
        kl += batch.logp_old[i] - logp[i];
    }
    let (_, grad) = policy.log_prob_weighted_grad(batch.states.view(), batch.actions.view(), &coeffs)?;
    Ok(Surrogate {
        loss: scale * objective,
        grad,
        approx_kl: kl / b as f64,
        clip_fraction: clipped as f64 / b as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoDiagnostics {
    /// Surrogate loss before the update.
    pub loss: f64,
    /// KL estimate after the update on the full batch.
    pub kl: f64,
    pub clip_fraction: f64,
    /// Inner iterations completed.
    pub iterations: usize,
    pub early_stopped: bool,
}

/// Run up to `train_iters` passes of Adam on the surrogate, stopping early
/// when the KL estimate passes the cap. `rng` shuffles minibatches and is
/// untouched in full-batch mode.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    opt: &mut AdamState,
    batch: &PolicyBatch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoDiagnostics> {
    if batch.is_empty() {
        return Err(Error::Usage("empty buffer".into()));
    }
    let full_adv = batch.objective_advantages(cfg.normalize_advantages)?;
    let before = ppo_surrogate(policy, batch, &full_adv, cfg.clip_epsilon)?;
    let kl_cap = cfg.kl_stop_factor * cfg.target_kl;
    let mut params = policy.params();
    let mut iterations = 0;
    let mut early_stopped = false;
    let full: Vec<usize> = (0..batch.len()).collect();
    'outer: for _ in 0..cfg.train_iters {
        let chunks: Vec<Vec<usize>> = if cfg.minibatch_size == 0 || cfg.minibatch_size >= batch.len() {
            vec![full.clone()]
        } else {
            let mut idx = full.clone();
            idx.shuffle(rng);
            idx.chunks(cfg.minibatch_size).map(|c| c.to_vec()).collect()
        };
        for chunk in chunks {
            let (sub, adv) = if chunk.len() == batch.len() {
                (None, full_adv.clone())
            } else {
                let sub = batch.select(&chunk);
                let adv = sub.objective_advantages(cfg.normalize_advantages)?;
                (Some(sub), adv)
            };
            let view = sub.as_ref().unwrap_or(batch);
            let s = ppo_surrogate(policy, view, &adv, cfg.clip_epsilon)?;
            if s.approx_kl > kl_cap {
                early_stopped = true;
                break 'outer;
            }
            adam_step(&mut params, &s.grad, opt)?;
            policy.set_params(&params)?;
        }
        iterations += 1;
    }
    let after = ppo_surrogate(policy, batch, &full_adv, cfg.clip_epsilon)?;
    Ok(PpoDiagnostics {
        loss: before.loss,
        kl: after.approx_kl,
        clip_fraction: after.clip_fraction,
        iterations,
        early_stopped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(policy: &GaussianPolicy, n: usize, seed: u64) -> PolicyBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = policy.obs_dim();
        let states = Array2::from_shape_fn((n, obs), |_| rng.random_range(-1.0..1.0));
        let mut actions = Array2::zeros((n, policy.act_dim()));
        let mut logp = Vec::new();
        for b in 0..n {
            let (a, lp) = policy.sample_action(states.row(b).as_slice().unwrap(), &mut rng).unwrap();
            actions.row_mut(b).assign(&ndarray::Array1::from(a));
            logp.push(lp);
        }
        let adv = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        PolicyBatch::new(states, actions, logp, adv, vec![1.0; n]).unwrap()
    }

    fn policy(seed: u64) -> GaussianPolicy {
        GaussianPolicy::new(3, 2, &[8], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn perturbed(p: &GaussianPolicy, scale: f64, seed: u64) -> GaussianPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = p.clone();
        let params: Vec<f64> = p.params().iter().map(|x| x + scale * rng.random_range(-1.0..1.0)).collect();
        q.set_params(&params).unwrap();
        q
    }

    #[test]
    fn single_sample_objective_by_hand() {
        let trunk = crate::net::Mlp::from_layers(
            crate::net::Activation::Tanh,
            vec![crate::net::Layer {
                weight: array![[0.5]],
                bias: ndarray::Array1::from(vec![0.1]),
            }],
        )
        .unwrap();
        let p = GaussianPolicy::from_parts(trunk, vec![-0.5]).unwrap();
        let (s, a) = (0.4, 0.9);
        let mean = 0.5 * s + 0.1;
        let sd = (-0.5f64).exp();
        let logp = -0.5 * ((a - mean) / sd).powi(2) - (-0.5) - 0.5 * (2.0 * std::f64::consts::PI).ln();
        for (old_shift, adv, w) in [(0.3, 1.5, 1.0), (-0.3, 1.5, 0.7), (0.3, -2.0, 0.6), (-0.05, 0.8, 0.9)] {
            let logp_old = logp + old_shift;
            let batch = PolicyBatch::new(array![[s]], array![[a]], vec![logp_old], vec![adv], vec![w]).unwrap();
            let rho = (logp - logp_old).exp();
            let want = w * (rho * adv).min(rho.clamp(0.8, 1.2) * adv);
            let got = ppo_surrogate(&p, &batch, &[adv], 0.2).unwrap();
            assert!((-got.loss - want).abs() < 1e-12, "{} vs {want}", -got.loss);
        }
    }

    #[test]
    fn unclipped_gradient_is_weighted_policy_gradient() {
        let p = policy(1);
        let mut batch = random_batch(&p, 6, 2);
        batch.weights = vec![0.6, 1.0, 0.75, 0.9, 0.55, 1.0];
        let q = perturbed(&p, 0.05, 3);
        let s = ppo_surrogate(&q, &batch, &batch.advantages, 1e300).unwrap();
        // Oracle: d/dtheta of -(1/B) sum w A rho, by central differences.
        let f = |params: &[f64]| {
            let mut r = q.clone();
            r.set_params(params).unwrap();
            let lp = r.log_prob_batch(batch.states.view(), batch.actions.view()).unwrap();
            -(0..6)
                .map(|i| batch.weights[i] * batch.advantages[i] * (lp[i] - batch.logp_old[i]).exp())
                .sum::<f64>()
                / 6.0
        };
        let theta = q.params();
        for k in 0..theta.len() {
            let h = 1e-6;
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - s.grad[k]).abs() < 1e-7 * (1.0 + fd.abs()), "{k}: {fd} vs {}", s.grad[k]);
        }
    }

    #[test]
    fn unit_weights_match_unweighted_and_half_weights_halve() {
        let p = perturbed(&policy(4), 0.1, 5);
        let mut batch = random_batch(&policy(4), 16, 6);
        let one = ppo_surrogate(&p, &batch, &batch.advantages, 0.2).unwrap();
        batch.weights = vec![0.5; 16];
        let half = ppo_surrogate(&p, &batch, &batch.advantages, 0.2).unwrap();
        for (a, b) in one.grad.iter().zip(&half.grad) {
            assert_eq!(*b, 0.5 * a);
        }
        assert_eq!(half.loss, 0.5 * one.loss);
    }

    #[test]
    fn weight_one_update_is_bit_identical() {
        let p0 = policy(7);
        let batch = random_batch(&p0, 32, 8);
        let cfg = PpoConfig {
            train_iters: 5,
            ..Default::default()
        };
        let run = |b: &PolicyBatch| {
            let mut p = p0.clone();
            let mut opt = AdamState::new(p.num_params(), 3e-4);
            let d = ppo_update(&mut p, &mut opt, b, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            (p, d)
        };
        let mut other = batch.clone();
        other.weights = vec![1.0; 32];
        assert_eq!(run(&batch), run(&other));
    }

    #[test]
    fn update_improves_surrogate_and_respects_kl_cap() {
        let mut p = policy(9);
        let batch = random_batch(&p, 64, 10);
        let adv = batch.objective_advantages(true).unwrap();
        let before = ppo_surrogate(&p, &batch, &adv, 0.2).unwrap().loss;
        let mut opt = AdamState::new(p.num_params(), 1e-2);
        let cfg = PpoConfig::default();
        let d = ppo_update(&mut p, &mut opt, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let after = ppo_surrogate(&p, &batch, &adv, 0.2).unwrap().loss;
        assert!(after < before);
        assert!(d.early_stopped, "large lr should hit the KL cap");
        assert!(d.iterations < 80);
    }

    #[test]
    fn minibatches_are_seeded() {
        let p0 = policy(11);
        let batch = random_batch(&p0, 40, 12);
        let cfg = PpoConfig {
            minibatch_size: 10,
            train_iters: 3,
            ..Default::default()
        };
        let run = |seed| {
            let mut p = p0.clone();
            let mut opt = AdamState::new(p.num_params(), 3e-4);
            ppo_update(&mut p, &mut opt, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            p
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }
}
