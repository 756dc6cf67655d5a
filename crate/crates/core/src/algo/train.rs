//! The epoch loop: collect, update episode statistics, update the policy,
//! build value targets for the active mode, fit the critic.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::PolicyBatch;
use super::config::{AblationMode, Algorithm, TargetMean, TrainConfig};
use super::ppo::{ppo_update, PpoConfig, PpoDiagnostics};
use super::trpo::{trpo_update, TrpoConfig, TrpoDiagnostics};
use crate::dvf::{Critic, QuantileValueFunction, ScalarValueFunction};
use crate::envs::{make_env, Environment};
use crate::error::{Error, Result};
use crate::net::AdamState;
use crate::policy::GaussianPolicy;
use crate::rollout::{collect, CollectConfig, TrajectoryBuffer, Weighting};
use crate::schedule::{distributional_bellman_target, target_quantiles, EpisodeStats, VarianceScheduleConfig};
use crate::stats::{quantile_z_grid, ZGrid};

/// RNG streams derived from the run seed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_ACTIONS: u64 = 1;
pub const STREAM_EPISODES: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const METRICS_HEADER: &str =
    "epoch,env_steps,ep_ret_mean,ep_ret_min,ep_ret_max,ep_len_mean,value_loss,policy_loss,mean_kl,mean_w,l_cur,g_cur";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub env_steps: usize,
    /// NaN when no episode finished during the epoch.
    pub ep_ret_mean: f64,
    pub ep_ret_min: f64,
    pub ep_ret_max: f64,
    pub ep_len_mean: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub mean_kl: f64,
    pub mean_w: f64,
    pub l_cur: f64,
    pub g_cur: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.env_steps,
            self.ep_ret_mean,
            self.ep_ret_min,
            self.ep_ret_max,
            self.ep_len_mean,
            self.value_loss,
            self.policy_loss,
            self.mean_kl,
            self.mean_w,
            self.l_cur,
            self.g_cur
        )
    }
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        writeln!(out, "{}", m.csv_row()).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyUpdate {
    Ppo(PpoDiagnostics),
    Trpo(TrpoDiagnostics),
}

impl PolicyUpdate {
    fn loss_and_kl(&self) -> (f64, f64) {
        match self {
            PolicyUpdate::Ppo(d) => (d.loss, d.kl),
            PolicyUpdate::Trpo(d) => (d.loss_old, d.kl),
        }
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    env: Box<dyn Environment>,
    policy: GaussianPolicy,
    critic: Critic,
    stats: EpisodeStats,
    schedule: VarianceScheduleConfig,
    zgrid: Option<ZGrid>,
    pi_opt: AdamState,
    vf_opt: AdamState,
    action_rng: ChaCha8Rng,
    episode_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    epoch: usize,
    env_steps: usize,
    history: Vec<EpochMetrics>,
    last_buffer: Option<TrajectoryBuffer>,
    last_update: Option<PolicyUpdate>,
    dump_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let env = make_env(&cfg.env, cfg.env_overrides())?;
        let (obs, act) = (env.spec().state_dim, env.spec().action_dim);
        let mut init = stream_rng(cfg.seed, STREAM_INIT);
        let policy = GaussianPolicy::new(obs, act, &cfg.policy_hidden, &mut init)?;
        let (critic, zgrid) = if cfg.mode.uses_quantiles() {
            let mut q = QuantileValueFunction::new(obs, &cfg.quantile_hidden, cfg.n_quantiles, cfg.kappa, &mut init)?;
            q.sign = cfg.quantile_sign;
            (Critic::Quantile(q), Some(quantile_z_grid(cfg.n_quantiles)?))
        } else {
            (Critic::Scalar(ScalarValueFunction::new(obs, &cfg.value_hidden, &mut init)?), None)
        };
        let vf_params = match &critic {
            Critic::Scalar(v) => v.net.num_params(),
            Critic::Quantile(q) => q.net.num_params(),
        };
        Ok(Trainer {
            schedule: VarianceScheduleConfig::new(cfg.sigma_sq_min, cfg.n_quantiles)?,
            pi_opt: AdamState::new(policy.num_params(), cfg.pi_lr),
            vf_opt: AdamState::new(vf_params, cfg.vf_lr),
            action_rng: stream_rng(cfg.seed, STREAM_ACTIONS),
            episode_rng: stream_rng(cfg.seed, STREAM_EPISODES),
            shuffle_rng: stream_rng(cfg.seed, STREAM_SHUFFLE),
            env,
            policy,
            critic,
            zgrid,
            stats: EpisodeStats::new(),
            epoch: 0,
            env_steps: 0,
            history: Vec::new(),
            last_buffer: None,
            last_update: None,
            dump_dir: None,
            cfg,
        })
    }

    /// Write each epoch's transitions as `epoch_<k>.jsonl` into `dir`.
    pub fn set_dump_dir(&mut self, dir: Option<PathBuf>) {
        self.dump_dir = dir;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn episode_stats(&self) -> &EpisodeStats {
        &self.stats
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn last_buffer(&self) -> Option<&TrajectoryBuffer> {
        self.last_buffer.as_ref()
    }

    pub fn last_update(&self) -> Option<&PolicyUpdate> {
        self.last_update.as_ref()
    }

    fn weighting(&self) -> Weighting {
        if self.cfg.mode == AblationMode::McCltFull && !self.cfg.force_unit_weight {
            Weighting::Uncertainty {
                temperature: self.cfg.effective_temperature(),
            }
        } else {
            Weighting::Unit
        }
    }

    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let steps = self.cfg.steps_per_epoch;
        let mut buffer = TrajectoryBuffer::new(steps);
        let collect_cfg = CollectConfig {
            steps,
            weighting: self.weighting(),
        };
        let episodes = collect(
            &mut *self.env,
            &self.policy,
            &self.critic,
            self.zgrid.as_ref(),
            &mut buffer,
            &collect_cfg,
            &mut self.action_rng,
            &mut self.episode_rng,
        )?;
        for &(len, ret) in &episodes {
            self.stats.record_episode(len, ret)?;
        }
        buffer.finalize(self.cfg.gamma, self.cfg.lambda)?;
        if let Some(dir) = &self.dump_dir {
            buffer.write_jsonl(&dir.join(format!("epoch_{}.jsonl", self.epoch)))?;
        }

        let batch = PolicyBatch::from_buffer(&buffer)?;
        let (ppo_cfg, trpo_cfg) = (self.ppo_config(), self.trpo_config());
        let update = match self.cfg.algorithm {
            Algorithm::Ppo => PolicyUpdate::Ppo(ppo_update(
                &mut self.policy,
                &mut self.pi_opt,
                &batch,
                &ppo_cfg,
                &mut self.shuffle_rng,
            )?),
            Algorithm::Trpo => PolicyUpdate::Trpo(trpo_update(&mut self.policy, &batch, &trpo_cfg)?),
        };
        let value_loss = self.fit_critic(&buffer)?;

        self.env_steps += steps;
        let (policy_loss, mean_kl) = update.loss_and_kl();
        let weights = buffer.weights();
        let (ret_mean, ret_min, ret_max, len_mean) = if episodes.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let n = episodes.len() as f64;
            (
                episodes.iter().map(|e| e.1).sum::<f64>() / n,
                episodes.iter().map(|e| e.1).fold(f64::INFINITY, f64::min),
                episodes.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max),
                episodes.iter().map(|e| e.0 as f64).sum::<f64>() / n,
            )
        };
        let metrics = EpochMetrics {
            epoch: self.epoch,
            env_steps: self.env_steps,
            ep_ret_mean: ret_mean,
            ep_ret_min: ret_min,
            ep_ret_max: ret_max,
            ep_len_mean: len_mean,
            value_loss,
            policy_loss,
            mean_kl,
            mean_w: weights.iter().sum::<f64>() / weights.len() as f64,
            l_cur: self.stats.l_cur(),
            g_cur: self.stats.g_cur(),
        };
        self.epoch += 1;
        self.history.push(metrics.clone());
        self.last_buffer = Some(buffer);
        self.last_update = Some(update);
        Ok(metrics)
    }

    /// Run the remaining epochs; `after_epoch` sees the trainer after each.
    pub fn run_with(&mut self, mut after_epoch: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            self.run_epoch()?;
            after_epoch(self)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<&[EpochMetrics]> {
        self.run_with(|_| Ok(()))?;
        Ok(&self.history)
    }

    fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            clip_epsilon: self.cfg.clip_epsilon,
            train_iters: self.cfg.train_pi_iters,
            target_kl: self.cfg.target_kl,
            kl_stop_factor: self.cfg.kl_stop_factor,
            minibatch_size: self.cfg.minibatch_size,
            normalize_advantages: self.cfg.normalize_advantages,
        }
    }

    fn trpo_config(&self) -> TrpoConfig {
        TrpoConfig {
            delta: self.cfg.kl_delta,
            cg_iters: self.cfg.cg_iters,
            damping: self.cfg.cg_damping,
            backtrack_coeff: self.cfg.backtrack_coeff,
            backtrack_iters: self.cfg.backtrack_iters,
            normalize_advantages: self.cfg.normalize_advantages,
        }
    }

    /// Value targets for the active mode, one row per transition.
    pub fn value_targets(&self, buffer: &TrajectoryBuffer) -> Result<Array2<f64>> {
        let est = buffer
            .estimates()
            .ok_or_else(|| Error::Usage("value targets need a finalized buffer".into()))?;
        let n = buffer.len();
        if self.cfg.mode == AblationMode::BaselineScalar {
            return Ok(Array2::from_shape_vec((n, 1), est.discounted_returns.clone()).expect("n rows"));
        }
        let zgrid = self.zgrid.as_ref().expect("quantile modes carry a z-grid");
        let nq = self.cfg.n_quantiles;
        let mut targets = Array2::zeros((n, nq));
        for (i, tr) in buffer.transitions().iter().enumerate() {
            let row = match self.cfg.mode {
                AblationMode::DvfBellman => {
                    let (_, next) = buffer.next_estimate(i)?;
                    let next = next.ok_or_else(|| Error::InvalidState("missing next-state bars".into()))?;
                    distributional_bellman_target(next, tr.reward, self.cfg.gamma)
                }
                _ => {
                    let mean = match self.cfg.target_mean {
                        TargetMean::ReturnToGo => est.discounted_returns[i],
                        TargetMean::UndiscountedReturnToGo => est.undiscounted_returns[i],
                        TargetMean::Td => tr.reward + self.cfg.gamma * buffer.next_estimate(i)?.0,
                    };
                    target_quantiles(mean, tr.t, &self.stats, &self.schedule, zgrid)?
                }
            };
            targets.row_mut(i).assign(&ndarray::Array1::from(row));
        }
        Ok(targets)
    }

    /// `train_v_iters` Adam passes; returns the loss before the first step.
    fn fit_critic(&mut self, buffer: &TrajectoryBuffer) -> Result<f64> {
        let states = buffer.states();
        let targets = self.value_targets(buffer)?;
        let n = states.nrows();
        let mb = self.cfg.minibatch_size;
        let mut first = None;
        for _ in 0..self.cfg.train_v_iters {
            let chunks: Vec<Vec<usize>> = if mb == 0 || mb >= n {
                vec![]
            } else {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut self.shuffle_rng);
                idx.chunks(mb).map(|c| c.to_vec()).collect()
            };
            if chunks.is_empty() {
                let loss = self.fit_step(states.view(), targets.view())?;
                first.get_or_insert(loss);
            } else {
                for c in chunks {
                    let s = states.select(Axis(0), &c);
                    let t = targets.select(Axis(0), &c);
                    let loss = self.fit_step(s.view(), t.view())?;
                    first.get_or_insert(loss);
                }
            }
        }
        Ok(first.unwrap_or(f64::NAN))
    }

    fn fit_step(&mut self, states: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        match &mut self.critic {
            Critic::Scalar(v) => {
                let col = targets.column(0).to_vec();
                v.fit_scalar(states, &col, &mut self.vf_opt)
            }
            Critic::Quantile(q) => q.fit_quantiles(states, targets, &mut self.vf_opt),
        }
    }
}

pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub policy: GaussianPolicy,
    pub critic: Critic,
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone())?;
    trainer.run()?;
    Ok(TrainOutcome {
        metrics: trainer.history,
        policy: trainer.policy,
        critic: trainer.critic,
    })
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    Ok(std::fs::write(path, metrics_csv(metrics))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument;

    fn tiny(mode: AblationMode, algorithm: Algorithm) -> TrainConfig {
        TrainConfig {
            env: "lq_chain".into(),
            algorithm,
            mode,
            seed: 3,
            epochs: 2,
            steps_per_epoch: 120,
            n_quantiles: 6,
            policy_hidden: vec![8],
            value_hidden: vec![8],
            quantile_hidden: vec![8],
            train_pi_iters: 5,
            train_v_iters: 5,
            sigma_sq_min: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn baseline_touches_no_quantile_paths() {
        let before = instrument::snapshot();
        let out = train(&tiny(AblationMode::BaselineScalar, Algorithm::Ppo)).unwrap();
        let used = instrument::snapshot().since(&before);
        assert_eq!(used.total(), 0, "{used:?}");
        assert!(matches!(out.critic, Critic::Scalar(_)));

        let before = instrument::snapshot();
        train(&tiny(AblationMode::McCltFull, Algorithm::Ppo)).unwrap();
        let used = instrument::snapshot().since(&before);
        assert!(used.quantile_builds == 1 && used.quantile_fits > 0 && used.uncertainty_evals > 0 && used.target_builds > 0);
    }

    #[test]
    fn weights_follow_mode() {
        for (mode, weighted) in [
            (AblationMode::McCltNoW, false),
            (AblationMode::DvfBellman, false),
            (AblationMode::McCltFull, true),
        ] {
            let mut t = Trainer::new(tiny(mode, Algorithm::Ppo)).unwrap();
            t.run_epoch().unwrap();
            let w = t.last_buffer().unwrap().weights();
            if weighted {
                assert!(w.iter().all(|&x| x > 0.5 && x <= 1.0));
            } else {
                assert!(w.iter().all(|&x| x == 1.0), "{mode}");
            }
        }
    }

    #[test]
    fn normal_targets_follow_schedule() {
        let mut t = Trainer::new(tiny(AblationMode::McCltNoW, Algorithm::Ppo)).unwrap();
        t.run_epoch().unwrap();
        let buf = t.last_buffer().unwrap().clone();
        let targets = t.value_targets(&buf).unwrap();
        let est = buf.estimates().unwrap();
        let z = quantile_z_grid(6).unwrap();
        for (i, tr) in buf.transitions().iter().enumerate().step_by(17) {
            let row = targets.row(i);
            let mean = row.sum() / 6.0;
            assert!((mean - est.discounted_returns[i]).abs() < 1e-9);
            let sigma = (row[5] - row[0]) / (z.z()[5] - z.z()[0]);
            let want = crate::schedule::sigma_sq(t.episode_stats(), &t.schedule, tr.t).unwrap().sqrt();
            assert!((sigma - want).abs() < 1e-9);
        }
    }

    #[test]
    fn bellman_targets_shift_next_bars() {
        let mut t = Trainer::new(tiny(AblationMode::DvfBellman, Algorithm::Ppo)).unwrap();
        t.run_epoch().unwrap();
        let buf = t.last_buffer().unwrap().clone();
        let targets = t.value_targets(&buf).unwrap();
        let tr = &buf.transitions()[4];
        let next = buf.transitions()[5].quantiles.clone().unwrap();
        for k in 0..6 {
            assert_eq!(targets[[4, k]], tr.reward + 0.99 * next[k]);
        }
    }

    #[test]
    fn identical_seeds_identical_metrics() {
        for algo in [Algorithm::Ppo, Algorithm::Trpo] {
            let cfg = tiny(AblationMode::McCltFull, algo);
            let a = metrics_csv(&train(&cfg).unwrap().metrics);
            let b = metrics_csv(&train(&cfg).unwrap().metrics);
            assert_eq!(a, b);
            let mut other = cfg.clone();
            other.seed = 4;
            assert_ne!(a, metrics_csv(&train(&other).unwrap().metrics));
        }
    }

    #[test]
    fn forced_unit_weight_matches_unweighted_mode() {
        let mut full = tiny(AblationMode::McCltFull, Algorithm::Ppo);
        full.force_unit_weight = true;
        let no_w = tiny(AblationMode::McCltNoW, Algorithm::Ppo);
        assert_eq!(
            metrics_csv(&train(&full).unwrap().metrics),
            metrics_csv(&train(&no_w).unwrap().metrics)
        );
    }

    #[test]
    fn metrics_rows_are_complete() {
        let mut cfg = tiny(AblationMode::McCltFull, Algorithm::Trpo);
        cfg.max_episode_steps = Some(30);
        cfg.minibatch_size = 40;
        let out = train(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 2);
        let m = &out.metrics[1];
        assert_eq!(m.env_steps, 240);
        assert_eq!(m.ep_len_mean, 30.0);
        assert_eq!(m.l_cur, 30.0);
        assert!(m.ep_ret_min <= m.ep_ret_mean && m.ep_ret_mean <= m.ep_ret_max);
        let csv = metrics_csv(&out.metrics);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().all(|l| l.split(',').count() == 12));
    }

    #[test]
    fn dumps_trajectories() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(tiny(AblationMode::McCltFull, Algorithm::Ppo)).unwrap();
        t.set_dump_dir(Some(dir.path().to_path_buf()));
        t.run_epoch().unwrap();
        let text = std::fs::read_to_string(dir.path().join("epoch_0.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 120);
    }
}
