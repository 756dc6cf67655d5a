//! Policy evaluation over independent, individually seeded episodes.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::stream_rng;
use crate::envs::{make_env, EnvOverrides};
use crate::error::{check_dim, Error, Result};
use crate::policy::GaussianPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub env: String,
    pub episodes: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub mean_return: f64,
    /// Sample standard deviation; absent for a single episode.
    pub std_return: Option<f64>,
    /// `std_return / sqrt(episodes)`; absent for a single episode.
    pub std_error: Option<f64>,
    pub mean_length: f64,
    pub returns: Vec<f64>,
}

/// Return and length of one episode. Episode `i` uses its own RNG stream of
/// `seed`, so results do not depend on thread scheduling.
pub fn run_episode(
    policy: &GaussianPolicy,
    env_name: &str,
    overrides: EnvOverrides,
    seed: u64,
    index: u64,
    deterministic: bool,
) -> Result<(f64, usize)> {
    let mut env = make_env(env_name, overrides)?;
    check_dim(env.spec().state_dim, policy.obs_dim())?;
    check_dim(env.spec().action_dim, policy.act_dim())?;
    let mut rng = stream_rng(seed, index);
    let mut state = env.reset(rng.next_u64());
    let mut total = 0.0;
    loop {
        let action = if deterministic {
            policy.mean_action(&state)?
        } else {
            policy.sample_action(&state, &mut rng)?.0
        };
        let res = env.step(&action)?;
        total += res.reward;
        if res.done || res.truncated {
            return Ok((total, env.elapsed()));
        }
        state = res.next_state;
    }
}

pub fn evaluate(
    policy: &GaussianPolicy,
    env_name: &str,
    overrides: EnvOverrides,
    episodes: usize,
    seed: u64,
    deterministic: bool,
) -> Result<EvalSummary> {
    summarize(env_name, episodes, seed, deterministic, |i| {
        run_episode(policy, env_name, overrides, seed, i, deterministic)
    })
}

/// Episode with actions drawn uniformly from the action box.
pub fn random_episode(env_name: &str, overrides: EnvOverrides, seed: u64, index: u64) -> Result<(f64, usize)> {
    let mut env = make_env(env_name, overrides)?;
    let mut rng = stream_rng(seed, index);
    env.reset(rng.next_u64());
    let (lo, hi) = (env.spec().action_low.clone(), env.spec().action_high.clone());
    let mut total = 0.0;
    loop {
        let action: Vec<f64> = lo.iter().zip(&hi).map(|(&l, &h)| rng.random_range(l..=h)).collect();
        let res = env.step(&action)?;
        total += res.reward;
        if res.done || res.truncated {
            return Ok((total, env.elapsed()));
        }
    }
}

/// Reference level for "did training do anything": the uniform-random policy.
pub fn evaluate_random(env_name: &str, overrides: EnvOverrides, episodes: usize, seed: u64) -> Result<EvalSummary> {
    summarize(env_name, episodes, seed, false, |i| random_episode(env_name, overrides, seed, i))
}

fn summarize<F>(env_name: &str, episodes: usize, seed: u64, deterministic: bool, episode: F) -> Result<EvalSummary>
where
    F: Fn(u64) -> Result<(f64, usize)> + Send + Sync,
{
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let results: Vec<(f64, usize)> = (0..episodes as u64)
        .into_par_iter()
        .map(episode)
        .collect::<Result<_>>()?;
    let n = episodes as f64;
    let returns: Vec<f64> = results.iter().map(|r| r.0).collect();
    let mean = returns.iter().sum::<f64>() / n;
    let std = (episodes > 1).then(|| (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Ok(EvalSummary {
        env: env_name.to_string(),
        episodes,
        seed,
        deterministic,
        mean_return: mean,
        std_return: std,
        std_error: std.map(|s| s / n.sqrt()),
        mean_length: results.iter().map(|r| r.1 as f64).sum::<f64>() / n,
        returns,
    })
}
