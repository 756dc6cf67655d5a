//! On-policy trajectory collection and the per-epoch rollout buffer.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, RngCore};
use serde::Serialize;

use crate::advantage::{discount_cumsum, gae};
use crate::dvf::Critic;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::policy::GaussianPolicy;
use crate::stats::ZGrid;
use crate::uncertainty::{uncertainty_error, uncertainty_weight};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    /// Step index within the episode, starting at 0.
    pub t: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
    /// Bars predicted at collection time (quantile critics only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<Vec<f64>>,
    pub w: f64,
    /// Critic value: bar average or scalar prediction.
    pub value: f64,
}

/// A contiguous run of transitions from one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PathInfo {
    pub start: usize,
    pub len: usize,
    /// Value of the state after the last transition; 0 after a true terminal.
    pub bootstrap_value: f64,
    pub bootstrap_quantiles: Option<Vec<f64>>,
    /// The episode ended inside this path (terminal or time limit).
    pub complete: bool,
}

impl PathInfo {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// How per-step weights are assigned during collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    /// w = 1 everywhere.
    Unit,
    /// w from the normality error of the predicted bars.
    Uncertainty { temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectConfig {
    pub steps: usize,
    pub weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub advantages: Vec<f64>,
    /// Discounted return-to-go, bootstrapped at cut paths.
    pub discounted_returns: Vec<f64>,
    /// Plain reward sums to the end of the path, plus the bootstrap value.
    pub undiscounted_returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryBuffer {
    capacity: usize,
    transitions: Vec<Transition>,
    paths: Vec<PathInfo>,
    estimates: Option<Estimates>,
}

/// One completed episode: (length, undiscounted return).
pub type Episode = (usize, f64);

impl TrajectoryBuffer {
    pub fn new(capacity: usize) -> Self {
        TrajectoryBuffer {
            capacity,
            transitions: Vec::with_capacity(capacity),
            paths: Vec::new(),
            estimates: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.transitions.len() == self.capacity
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn paths(&self) -> &[PathInfo] {
        &self.paths
    }

    pub fn estimates(&self) -> Option<&Estimates> {
        self.estimates.as_ref()
    }

    pub fn is_finalized(&self) -> bool {
        self.estimates.is_some()
    }

    /// Append a transition to the open path.
    pub fn push(&mut self, tr: Transition) -> Result<()> {
        if self.is_full() {
            return Err(Error::Usage(format!("buffer full ({} transitions)", self.capacity)));
        }
        if self.is_finalized() {
            return Err(Error::Usage("cannot push into a finalized buffer".into()));
        }
        let open_start = self.paths.last().map_or(0, |p| p.start + p.len);
        let expected_t = self.transitions.len() - open_start;
        if tr.t != expected_t {
            return Err(Error::InvalidState(format!(
                "path timestep must continue at {expected_t}, got {}",
                tr.t
            )));
        }
        self.transitions.push(tr);
        Ok(())
    }

    pub fn close_path(&mut self, bootstrap_value: f64, bootstrap_quantiles: Option<Vec<f64>>, complete: bool) -> Result<()> {
        let start = self.paths.last().map_or(0, |p| p.start + p.len);
        let len = self.transitions.len() - start;
        if len == 0 {
            return Err(Error::Usage("cannot close an empty path".into()));
        }
        self.paths.push(PathInfo {
            start,
            len,
            bootstrap_value,
            bootstrap_quantiles,
            complete,
        });
        Ok(())
    }

    /// Per-path GAE advantages and both return-to-go variants.
    pub fn finalize(&mut self, gamma: f64, lambda: f64) -> Result<&Estimates> {
        if self.is_finalized() {
            return Err(Error::Usage("buffer already finalized".into()));
        }
        if !self.is_full() {
            return Err(Error::Usage(format!(
                "finalize needs a full buffer ({} of {} transitions)",
                self.len(),
                self.capacity
            )));
        }
        let closed: usize = self.paths.iter().map(|p| p.len).sum();
        if closed != self.len() {
            return Err(Error::InvalidState("last path not closed before finalize".into()));
        }
        let n = self.len();
        let mut est = Estimates {
            advantages: Vec::with_capacity(n),
            discounted_returns: Vec::with_capacity(n),
            undiscounted_returns: Vec::with_capacity(n),
        };
        for path in &self.paths {
            let steps = &self.transitions[path.range()];
            let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
            let mut values: Vec<f64> = steps.iter().map(|s| s.value).collect();
            values.push(path.bootstrap_value);
            let g = gae(&rewards, &values, gamma, lambda)?;
            est.advantages.extend(g.advantages);
            est.discounted_returns.extend(g.returns_to_go);
            est.undiscounted_returns
                .extend(discount_cumsum(&rewards, 1.0).into_iter().map(|r| r + path.bootstrap_value));
        }
        Ok(self.estimates.insert(est))
    }

    pub fn states(&self) -> Array2<f64> {
        stack(self.transitions.iter().map(|t| t.state.as_slice()), self.transitions.len())
    }

    pub fn actions(&self) -> Array2<f64> {
        stack(self.transitions.iter().map(|t| t.action.as_slice()), self.transitions.len())
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.log_prob).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.w).collect()
    }

    /// Value and bars of the state following step `i`, taken from the next
    /// stored transition or from the path bootstrap.
    pub fn next_estimate(&self, i: usize) -> Result<(f64, Option<&[f64]>)> {
        let path = self
            .paths
            .iter()
            .find(|p| p.range().contains(&i))
            .ok_or_else(|| Error::Usage(format!("step {i} is not in a closed path")))?;
        if i + 1 < path.start + path.len {
            let next = &self.transitions[i + 1];
            Ok((next.value, next.quantiles.as_deref()))
        } else {
            Ok((path.bootstrap_value, path.bootstrap_quantiles.as_deref()))
        }
    }

    /// One JSON object per transition.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for tr in &self.transitions {
            serde_json::to_writer(&mut out, tr).map_err(|e| Error::InvalidState(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> Array2<f64> {
    let mut data = Vec::new();
    let mut width = 0;
    for r in rows {
        width = r.len();
        data.extend_from_slice(r);
    }
    Array2::from_shape_vec((n, width), data).expect("rows share one width")
}

/// Fill an empty buffer with `cfg.steps` on-policy transitions.
///
/// Each episode starts from `env.reset(seed)` with a seed drawn from
/// `seed_rng`; actions are sampled with `action_rng`. A path cut by the epoch
/// boundary is bootstrapped with the critic. Returns the episodes that ended
/// inside the epoch.
#[allow(clippy::too_many_arguments)]
pub fn collect<R1: Rng + ?Sized, R2: RngCore + ?Sized>(
    env: &mut dyn Environment,
    policy: &GaussianPolicy,
    critic: &Critic,
    zgrid: Option<&ZGrid>,
    buffer: &mut TrajectoryBuffer,
    cfg: &CollectConfig,
    action_rng: &mut R1,
    seed_rng: &mut R2,
) -> Result<Vec<Episode>> {
    if !buffer.is_empty() || buffer.capacity != cfg.steps {
        return Err(Error::Usage("collect needs an empty buffer sized to the epoch".into()));
    }
    if let Weighting::Uncertainty { .. } = cfg.weighting {
        if !critic.is_quantile() || zgrid.is_none() {
            return Err(Error::Usage("uncertainty weighting needs a quantile critic and z-grid".into()));
        }
    }
    let mut episodes = Vec::new();
    let mut state = env.reset(seed_rng.next_u64());
    let mut t = 0;
    let mut ep_ret = 0.0;
    for step in 0..cfg.steps {
        let (action, log_prob) = policy.sample_action(&state, action_rng)?;
        let (value, quantiles) = critic.evaluate(&state)?;
        let w = match (cfg.weighting, &quantiles, zgrid) {
            (Weighting::Uncertainty { temperature }, Some(q), Some(z)) => {
                uncertainty_weight(uncertainty_error(q, z)?, temperature)?
            }
            _ => 1.0,
        };
        let res = env.step(&action)?;
        ep_ret += res.reward;
        buffer.push(Transition {
            t,
            state,
            action,
            log_prob,
            reward: res.reward,
            done: res.done,
            truncated: res.truncated,
            quantiles,
            w,
            value,
        })?;
        t += 1;
        let ended = res.done || res.truncated;
        let epoch_end = step + 1 == cfg.steps;
        if ended || epoch_end {
            if res.done {
                let zeros = critic.as_quantile().map(|q| vec![0.0; q.n_quantiles()]);
                buffer.close_path(0.0, zeros, true)?;
            } else {
                let (v, q) = critic.evaluate(&res.next_state)?;
                buffer.close_path(v, q, ended)?;
            }
            if ended {
                episodes.push((t, ep_ret));
            }
            if !epoch_end {
                state = env.reset(seed_rng.next_u64());
                t = 0;
                ep_ret = 0.0;
                continue;
            }
        }
        state = res.next_state;
    }
    Ok(episodes)
}
