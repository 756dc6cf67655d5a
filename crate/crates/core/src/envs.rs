//! Small stochastic continuous-control tasks with dense rewards.
//!
//! * `point_mass_reach`: 2-D damped double integrator driven to the origin.
//! * `noisy_pendulum`: torque-limited swing-up with additive torque noise.
//! * `lq_chain`: scalar linear-quadratic regulator whose observation carries
//!   the chain position `t / H` and whose transition noise grows along the
//!   chain. Expected returns of linear policies are available in closed form.
//!
//! `noise_scale` multiplies both the initial-state spread and the transition
//! noise of every task; at zero the tasks are deterministic and start from
//! their nominal state.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const ENV_NAMES: [&str; 3] = ["point_mass_reach", "noisy_pendulum", "lq_chain"];

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    pub noise_scale: f64,
}

impl EnvSpec {
    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// True termination: the episode cannot continue.
    pub done: bool,
    /// Time-limit cut at `max_episode_steps`.
    pub truncated: bool,
}

/// Optional per-run overrides of the task parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvOverrides {
    pub max_episode_steps: Option<usize>,
    pub noise_scale: Option<f64>,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    fn spec_mut(&mut self) -> &mut EnvSpec;

    /// Draw an initial state; the seed fixes both the initial state and the
    /// transition noise of the episode.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    /// Elapsed steps in the current episode.
    fn elapsed(&self) -> usize;
}

pub fn make_env(name: &str, overrides: EnvOverrides) -> Result<Box<dyn Environment>> {
    let mut env: Box<dyn Environment> = match name {
        "point_mass_reach" => Box::new(PointMassReach::new()),
        "noisy_pendulum" => Box::new(NoisyPendulum::new()),
        "lq_chain" => Box::new(LqChain::new()),
        other => {
            return Err(Error::Config(format!(
                "unknown environment '{other}' (known: {})",
                ENV_NAMES.join(", ")
            )))
        }
    };
    apply_overrides(&mut *env, overrides)?;
    Ok(env)
}

fn apply_overrides(env: &mut dyn Environment, overrides: EnvOverrides) -> Result<()> {
    let spec = env.spec_mut();
    if let Some(steps) = overrides.max_episode_steps {
        if steps == 0 {
            return Err(Error::Config("max_episode_steps must be at least 1".into()));
        }
        spec.max_episode_steps = steps;
    }
    if let Some(noise) = overrides.noise_scale {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config(format!("noise_scale must be finite and >= 0, got {noise}")));
        }
        spec.noise_scale = noise;
    }
    Ok(())
}

/// Episode bookkeeping shared by all tasks.
#[derive(Debug, Clone)]
struct Clock {
    rng: ChaCha8Rng,
    steps: usize,
    active: bool,
}

impl Clock {
    fn new() -> Self {
        Clock {
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
            active: false,
        }
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.steps = 0;
        self.active = true;
    }

    fn begin_step(&self, spec: &EnvSpec, action: &[f64]) -> Result<()> {
        if !self.active {
            return Err(Error::Usage(format!("{}: step called without reset after episode end", spec.name)));
        }
        check_dim(spec.action_dim, action.len())
    }

    /// Advance the counter; returns whether the time limit was hit.
    fn end_step(&mut self, spec: &EnvSpec, done: bool) -> bool {
        self.steps += 1;
        let truncated = !done && self.steps >= spec.max_episode_steps;
        if done || truncated {
            self.active = false;
        }
        truncated
    }

    fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random_range(-1.0..1.0)
    }
}

#[derive(Debug, Clone)]
pub struct PointMassReach {
    spec: EnvSpec,
    clock: Clock,
    pos: [f64; 2],
    vel: [f64; 2],
}

impl PointMassReach {
    pub const DT: f64 = 0.1;
    pub const DAMPING: f64 = 0.5;
    pub const VEL_NOISE: f64 = 0.05;
    pub const NOMINAL_POS: [f64; 2] = [1.0, 1.0];
    pub const INIT_POS_SPREAD: f64 = 1.0;
    pub const INIT_VEL_SPREAD: f64 = 0.1;

    pub fn new() -> Self {
        PointMassReach {
            spec: EnvSpec {
                name: "point_mass_reach".into(),
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_episode_steps: 100,
                noise_scale: 1.0,
            },
            clock: Clock::new(),
            pos: [0.0; 2],
            vel: [0.0; 2],
        }
    }

    /// Place the mass at an explicit state and start a new episode.
    pub fn reset_to(&mut self, pos: [f64; 2], vel: [f64; 2], seed: u64) -> Vec<f64> {
        self.clock.reset(seed);
        self.pos = pos;
        self.vel = vel;
        self.observe()
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

impl Default for PointMassReach {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointMassReach {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn spec_mut(&mut self) -> &mut EnvSpec {
        &mut self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.clock.reset(seed);
        let s = self.spec.noise_scale;
        for i in 0..2 {
            self.pos[i] = Self::NOMINAL_POS[i] + s * Self::INIT_POS_SPREAD * self.clock.uniform();
        }
        for i in 0..2 {
            self.vel[i] = s * Self::INIT_VEL_SPREAD * self.clock.uniform();
        }
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.begin_step(&self.spec, action)?;
        let a = self.spec.clip_action(action);
        let s = self.spec.noise_scale;
        for i in 0..2 {
            let noise = s * Self::VEL_NOISE * self.clock.gaussian();
            self.vel[i] += Self::DT * (a[i] - Self::DAMPING * self.vel[i]) + noise;
            self.pos[i] += Self::DT * self.vel[i];
        }
        let dist = (self.pos[0] * self.pos[0] + self.pos[1] * self.pos[1]).sqrt();
        let effort = a[0] * a[0] + a[1] * a[1];
        let reward = -dist - 0.01 * effort;
        let truncated = self.clock.end_step(&self.spec, false);
        Ok(StepResult {
            next_state: self.observe(),
            reward,
            done: false,
            truncated,
        })
    }

    fn elapsed(&self) -> usize {
        self.clock.steps
    }
}

#[derive(Debug, Clone)]
pub struct NoisyPendulum {
    spec: EnvSpec,
    clock: Clock,
    theta: f64,
    theta_dot: f64,
}

impl NoisyPendulum {
    pub const DT: f64 = 0.05;
    pub const GRAVITY: f64 = 10.0;
    pub const MAX_SPEED: f64 = 8.0;
    pub const TORQUE_NOISE: f64 = 0.2;

    pub fn new() -> Self {
        NoisyPendulum {
            spec: EnvSpec {
                name: "noisy_pendulum".into(),
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-2.0],
                action_high: vec![2.0],
                max_episode_steps: 200,
                noise_scale: 1.0,
            },
            clock: Clock::new(),
            theta: PI,
            theta_dot: 0.0,
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    pub fn angle(&self) -> f64 {
        self.theta
    }
}

impl Default for NoisyPendulum {
    fn default() -> Self {
        Self::new()
    }
}

fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Environment for NoisyPendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn spec_mut(&mut self) -> &mut EnvSpec {
        &mut self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.clock.reset(seed);
        let s = self.spec.noise_scale;
        self.theta = PI + s * PI * self.clock.uniform();
        self.theta_dot = s * self.clock.uniform();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.begin_step(&self.spec, action)?;
        let u = self.spec.clip_action(action)[0];
        let noisy_u = u + self.spec.noise_scale * Self::TORQUE_NOISE * self.clock.gaussian();
        let th = angle_normalize(self.theta);
        let cost = th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u;
        let acc = 1.5 * Self::GRAVITY * self.theta.sin() + 3.0 * noisy_u;
        self.theta_dot = (self.theta_dot + acc * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += self.theta_dot * Self::DT;
        let truncated = self.clock.end_step(&self.spec, false);
        Ok(StepResult {
            next_state: self.observe(),
            reward: -cost,
            done: false,
            truncated,
        })
    }

    fn elapsed(&self) -> usize {
        self.clock.steps
    }
}

/// Scalar LQ regulator `x' = a x + b u + sigma_t eps`, reward
/// `-(q x^2 + r u^2)`, with `sigma_t = noise_scale * base * (1 + growth t / H)`.
#[derive(Debug, Clone)]
pub struct LqChain {
    spec: EnvSpec,
    clock: Clock,
    x: f64,
}

impl LqChain {
    pub const A: f64 = 0.9;
    pub const B: f64 = 0.5;
    pub const STATE_COST: f64 = 1.0;
    pub const ACTION_COST: f64 = 0.1;
    pub const NOMINAL_X: f64 = 1.0;
    pub const INIT_SPREAD: f64 = 1.0;
    pub const BASE_NOISE: f64 = 0.1;
    pub const NOISE_GROWTH: f64 = 3.0;

    pub fn new() -> Self {
        LqChain {
            spec: EnvSpec {
                name: "lq_chain".into(),
                state_dim: 2,
                action_dim: 1,
                action_low: vec![-2.0],
                action_high: vec![2.0],
                max_episode_steps: 50,
                noise_scale: 1.0,
            },
            clock: Clock::new(),
            x: 0.0,
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.x, self.clock.steps as f64 / self.spec.max_episode_steps as f64]
    }

    pub fn noise_std(&self, t: usize) -> f64 {
        self.spec.noise_scale
            * Self::BASE_NOISE
            * (1.0 + Self::NOISE_GROWTH * t as f64 / self.spec.max_episode_steps as f64)
    }

    /// Gain `k` of the discounted infinite-horizon optimal controller
    /// `u = -k x`, from the scalar Riccati fixed point.
    pub fn optimal_gain(gamma: f64) -> f64 {
        let (a, b, q, r) = (Self::A, Self::B, Self::STATE_COST, Self::ACTION_COST);
        let mut p = q;
        for _ in 0..10_000 {
            let next = q + gamma * a * a * p - (gamma * a * b * p).powi(2) / (r + gamma * b * b * p);
            if (next - p).abs() < 1e-14 {
                p = next;
                break;
            }
            p = next;
        }
        gamma * a * b * p / (r + gamma * b * b * p)
    }

    /// Exact expected undiscounted episode return under `u = -k x` (no
    /// action clipping), propagating the second moment of `x`.
    pub fn expected_return(&self, gain: f64) -> f64 {
        let s = self.spec.noise_scale;
        let spread = s * Self::INIT_SPREAD;
        let closed = Self::A - Self::B * gain;
        let mut second = Self::NOMINAL_X * Self::NOMINAL_X + spread * spread / 3.0;
        let mut total = 0.0;
        for t in 0..self.spec.max_episode_steps {
            total -= (Self::STATE_COST + Self::ACTION_COST * gain * gain) * second;
            let sigma = self.noise_std(t);
            second = closed * closed * second + sigma * sigma;
        }
        total
    }
}

impl Default for LqChain {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for LqChain {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn spec_mut(&mut self) -> &mut EnvSpec {
        &mut self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.clock.reset(seed);
        self.x = Self::NOMINAL_X + self.spec.noise_scale * Self::INIT_SPREAD * self.clock.uniform();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.begin_step(&self.spec, action)?;
        let u = self.spec.clip_action(action)[0];
        let reward = -(Self::STATE_COST * self.x * self.x + Self::ACTION_COST * u * u);
        let sigma = self.noise_std(self.clock.steps);
        self.x = Self::A * self.x + Self::B * u + sigma * self.clock.gaussian();
        let truncated = self.clock.end_step(&self.spec, false);
        Ok(StepResult {
            next_state: self.observe(),
            reward,
            done: false,
            truncated,
        })
    }

    fn elapsed(&self) -> usize {
        self.clock.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout(env: &mut dyn Environment, seed: u64, policy: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut s = env.reset(seed);
        let mut rewards = Vec::new();
        loop {
            let r = env.step(&policy(&s)).unwrap();
            rewards.push(r.reward);
            s = r.next_state;
            if r.done || r.truncated {
                return rewards;
            }
        }
    }

    #[test]
    fn reset_determinism_and_spread() {
        for name in ENV_NAMES {
            let mut env = make_env(name, EnvOverrides::default()).unwrap();
            assert_eq!(env.reset(5), env.reset(5));
            let first = env.reset(0);
            let distinct = (1..100).filter(|&s| env.reset(s) != first).count();
            assert_eq!(distinct, 99, "{name}");
        }
    }

    #[test]
    fn zero_noise_starts_at_nominal() {
        let quiet = EnvOverrides {
            noise_scale: Some(0.0),
            ..Default::default()
        };
        let mut pm = make_env("point_mass_reach", quiet).unwrap();
        assert_eq!(pm.reset(3), vec![1.0, 1.0, 0.0, 0.0]);
        let mut pend = make_env("noisy_pendulum", quiet).unwrap();
        let s = pend.reset(3);
        assert!((s[0] + 1.0).abs() < 1e-15 && s[2] == 0.0);
        let mut lq = make_env("lq_chain", quiet).unwrap();
        assert_eq!(lq.reset(9), vec![1.0, 0.0]);
    }

    #[test]
    fn point_mass_at_goal_has_max_reward() {
        let mut env = PointMassReach::new();
        env.spec.noise_scale = 0.0;
        env.reset_to([0.0, 0.0], [0.0, 0.0], 1);
        let r = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.next_state, vec![0.0; 4]);
    }

    #[test]
    fn zero_noise_is_deterministic_in_actions() {
        let quiet = EnvOverrides {
            noise_scale: Some(0.0),
            ..Default::default()
        };
        for name in ENV_NAMES {
            let mut env = make_env(name, quiet).unwrap();
            let a = rollout(&mut *env, 1, |s| vec![0.3 * s[0].sin(); env_dim(name)]);
            let b = rollout(&mut *env, 999, |s| vec![0.3 * s[0].sin(); env_dim(name)]);
            assert_eq!(a, b, "{name}");
        }
    }

    fn env_dim(name: &str) -> usize {
        if name == "point_mass_reach" {
            2
        } else {
            1
        }
    }

    #[test]
    fn golden_returns() {
        // Recorded once from this implementation and frozen.
        let mut totals = Vec::new();
        for name in ENV_NAMES {
            let mut env = make_env(name, EnvOverrides::default()).unwrap();
            let dim = env_dim(name);
            let r = rollout(&mut *env, 42, |s| vec![-0.5 * s[0]; dim]);
            totals.push(r.iter().sum::<f64>());
        }
        let golden = golden_values();
        for (t, g) in totals.iter().zip(golden) {
            assert!((t - g).abs() < 1e-9, "{totals:?}");
        }
    }

    fn golden_values() -> [f64; 3] {
        [GOLDEN_POINT_MASS, GOLDEN_PENDULUM, GOLDEN_LQ]
    }

    const GOLDEN_POINT_MASS: f64 = -82.14582702398174;
    const GOLDEN_PENDULUM: f64 = -1402.843989531773;
    const GOLDEN_LQ: f64 = -9.254161078233485;

    #[test]
    fn step_after_end_is_usage_error() {
        let mut env = make_env("lq_chain", EnvOverrides {
            max_episode_steps: Some(2),
            ..Default::default()
        })
        .unwrap();
        assert!(env.step(&[0.0]).is_err());
        env.reset(0);
        assert!(!env.step(&[0.0]).unwrap().truncated);
        assert!(env.step(&[0.0]).unwrap().truncated);
        assert!(matches!(env.step(&[0.0]), Err(Error::Usage(_))));
        env.reset(1);
        assert!(env.step(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn actions_are_clipped() {
        let quiet = EnvOverrides {
            noise_scale: Some(0.0),
            ..Default::default()
        };
        let mut a = make_env("point_mass_reach", quiet).unwrap();
        let mut b = make_env("point_mass_reach", quiet).unwrap();
        a.reset(0);
        b.reset(0);
        assert_eq!(a.step(&[10.0, -10.0]).unwrap(), b.step(&[1.0, -1.0]).unwrap());
    }

    #[test]
    fn unknown_env() {
        assert!(make_env("cartpole", EnvOverrides::default()).is_err());
        assert!(make_env("lq_chain", EnvOverrides {
            max_episode_steps: Some(0),
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn stochastic_returns_vary_across_seeds() {
        for name in ENV_NAMES {
            let mut env = make_env(name, EnvOverrides::default()).unwrap();
            let dim = env_dim(name);
            let returns: Vec<f64> = (0..20).map(|s| rollout(&mut *env, s, |_| vec![0.0; dim]).iter().sum()).collect();
            let m = returns.iter().sum::<f64>() / 20.0;
            let var = returns.iter().map(|r| (r - m).powi(2)).sum::<f64>();
            assert!(var > 0.0);
            for s in 0..3 {
                let rewards = rollout(&mut *env, s, |_| vec![0.0; dim]);
                assert!(rewards.len() <= env.spec().max_episode_steps);
                assert!(rewards.iter().all(|r| r.is_finite() && *r != 0.0));
            }
        }
    }

    #[test]
    fn lq_expected_return_matches_monte_carlo() {
        let mut env = LqChain::new();
        let k = LqChain::optimal_gain(0.99);
        assert!(k > 0.0 && k < 2.0);
        let exact = env.expected_return(k);
        let n = 20_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for seed in 0..n {
            let g: f64 = rollout(&mut env, seed, |s| vec![-k * s[0]]).iter().sum();
            sum += g;
            sum_sq += g * g;
        }
        let m = sum / n as f64;
        let se = ((sum_sq / n as f64 - m * m) / n as f64).sqrt();
        assert!((m - exact).abs() < 4.0 * se, "{m} vs {exact} (se {se})");
    }

    #[test]
    fn optimal_gain_beats_perturbed_gains() {
        let env = LqChain::new();
        let k = LqChain::optimal_gain(1.0 - 1e-9);
        let best = env.expected_return(k);
        for dk in [-0.2, -0.05, 0.05, 0.2] {
            assert!(env.expected_return(k + dk) < best + 1e-6);
        }
    }
}
