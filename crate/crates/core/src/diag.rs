//! Diagnostics over trained policies and value functions: estimated return
//! std along the episode, empirical return-to-go spread, and normality gap.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::algo::train::stream_rng;
use crate::dvf::Critic;
use crate::envs::{make_env, EnvOverrides};
use crate::error::{check_dim, Error, Result};
use crate::policy::GaussianPolicy;
use crate::stats::{cdf_unchecked, quantile_z_grid, ZGrid};
use crate::uncertainty::fit_normal;

pub const DEFAULT_SMOOTHING: f64 = 0.9;
pub const TABLE_FRACTIONS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

/// States and rewards of one episode, indexed by step.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

/// Roll out `episodes` independent episodes; episode `i` uses RNG stream `i`
/// of `seed`.
pub fn rollout_episodes(
    policy: &GaussianPolicy,
    env_name: &str,
    overrides: EnvOverrides,
    episodes: usize,
    seed: u64,
    deterministic: bool,
) -> Result<Vec<Episode>> {
    (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut env = make_env(env_name, overrides)?;
            check_dim(env.spec().state_dim, policy.obs_dim())?;
            check_dim(env.spec().action_dim, policy.act_dim())?;
            let mut rng = stream_rng(seed, i);
            let mut state = env.reset(rng.next_u64());
            let mut ep = Episode {
                states: Vec::new(),
                rewards: Vec::new(),
            };
            loop {
                let action = if deterministic {
                    policy.mean_action(&state)?
                } else {
                    policy.sample_action(&state, &mut rng)?.0
                };
                let res = env.step(&action)?;
                ep.states.push(std::mem::replace(&mut state, res.next_state));
                ep.rewards.push(res.reward);
                if res.done || res.truncated {
                    return Ok(ep);
                }
            }
        })
        .collect()
}

/// Exponential smoothing `s_t = a s_{t-1} + (1 - a) x_t`, `s_0 = x_0`.
pub fn exponential_smoothing(xs: &[f64], smoothing: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Domain(format!("smoothing must be in [0, 1), got {smoothing}")));
    }
    let mut out = Vec::with_capacity(xs.len());
    for (i, &x) in xs.iter().enumerate() {
        let s = if i == 0 {
            x
        } else {
            smoothing * out[i - 1] + (1.0 - smoothing) * x
        };
        out.push(s);
    }
    Ok(out)
}

/// Per-step average of the fitted `sigma_avg` over all trajectories that
/// reach that step, then smoothed. Returns `(t, std)` pairs.
pub fn estimated_std_curve(critic: &Critic, trajectories: &[Vec<Vec<f64>>], smoothing: f64) -> Result<Vec<(usize, f64)>> {
    let q = match critic {
        Critic::Quantile(q) => q,
        Critic::Scalar(_) => {
            return Err(Error::UnsupportedMode(
                "std curve needs a quantile value function (not baseline_scalar)".into(),
            ))
        }
    };
    if trajectories.iter().all(|t| t.is_empty()) {
        return Err(Error::Usage("std curve needs at least one visited state".into()));
    }
    let zgrid = quantile_z_grid(q.n_quantiles())?;
    let horizon = trajectories.iter().map(|t| t.len()).max().unwrap_or(0);
    let mut sums = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    for traj in trajectories {
        for (t, s) in traj.iter().enumerate() {
            let bars = q.predict_quantiles(s)?;
            sums[t] += fit_normal(&bars, &zgrid)?.sigma_avg;
            counts[t] += 1;
        }
    }
    let raw: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let smooth = exponential_smoothing(&raw, smoothing)?;
    Ok(smooth.into_iter().enumerate().collect())
}

/// Population standard deviation.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// For each fraction `f`, the std over episodes of the reward sum from step
/// `floor(f * T)` to the end, where `T` is that episode's length. The start
/// is capped at `T - 1`, so `f = 1` measures the final reward alone.
pub fn return_std_table(episodes: &[Vec<f64>], fractions: &[f64]) -> Result<Vec<(f64, f64)>> {
    if episodes.len() < 2 {
        return Err(Error::Usage("return std needs at least 2 episodes".into()));
    }
    if episodes.iter().any(|e| e.is_empty()) {
        return Err(Error::Usage("episodes must contain at least one reward".into()));
    }
    fractions
        .iter()
        .map(|&f| {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Domain(format!("fraction must be in [0, 1], got {f}")));
            }
            let tails: Vec<f64> = episodes
                .iter()
                .map(|r| {
                    let start = ((f * r.len() as f64).floor() as usize).min(r.len() - 1);
                    r[start..].iter().sum()
                })
                .collect();
            Ok((f, std_dev(&tails)))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn empirical_return_std(
    policy: &GaussianPolicy,
    env_name: &str,
    overrides: EnvOverrides,
    episodes: usize,
    fractions: &[f64],
    seed: u64,
    deterministic: bool,
) -> Result<Vec<(f64, f64)>> {
    if episodes < 2 {
        return Err(Error::Usage("return std needs at least 2 episodes".into()));
    }
    let eps = rollout_episodes(policy, env_name, overrides, episodes, seed, deterministic)?;
    let rewards: Vec<Vec<f64>> = eps.into_iter().map(|e| e.rewards).collect();
    return_std_table(&rewards, fractions)
}

/// Largest distance between the step CDF of the sorted bars (jumping to
/// `tau_i` at the i-th bar) and the CDF of the fitted normal, taking both
/// one-sided limits of the step function at each bar.
pub fn normality_gap(q: &[f64], zgrid: &ZGrid) -> Result<f64> {
    if q.len() < 2 {
        return Err(Error::Domain("normality gap needs at least 2 bars".into()));
    }
    let fit = fit_normal(q, zgrid)?;
    let mut sorted = q.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let level = |k: usize| k as f64 / (n as f64 + 1.0);
    let mut gap: f64 = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let f = cdf_unchecked((sorted[i] - fit.q_avg) / fit.sigma_avg);
        gap = gap.max((f - level(i)).abs()).max((f - level(j + 1)).abs());
        i = j + 1;
    }
    Ok(gap.min(1.0))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let (a, b) = (rx[i] - mx, ry[i] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Spearman correlation between step index and std along a curve.
pub fn curve_trend(curve: &[(usize, f64)]) -> Option<f64> {
    let t: Vec<f64> = curve.iter().map(|p| p.0 as f64).collect();
    let s: Vec<f64> = curve.iter().map(|p| p.1).collect();
    spearman(&t, &s)
}

/// Adjacent pairs where the value goes up.
pub fn count_increases(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StdCurveSummary {
    pub points: usize,
    pub smoothing: f64,
    pub spearman: Option<f64>,
    pub first: f64,
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnStdSummary {
    pub episodes: usize,
    pub fractions: Vec<f64>,
    pub stds: Vec<f64>,
    pub increases: usize,
    pub last_over_first: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalitySummary {
    pub states: usize,
    pub mean_gap: f64,
    pub max_gap: f64,
    pub resolution_floor: f64,
}

pub fn curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("t,std\n");
    for (t, s) in curve {
        out.push_str(&format!("{t},{s}\n"));
    }
    out
}

pub fn table_csv(table: &[(f64, f64)]) -> String {
    let mut out = String::from("fraction,return_std\n");
    for (f, s) in table {
        out.push_str(&format!("{f},{s}\n"));
    }
    out
}
