//! Training configuration: a flat `key = value` file (TOML syntax) with typed
//! fields, defaults, and unknown-key rejection.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dvf::ResidualSign;
use crate::envs::{EnvOverrides, ENV_NAMES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ppo,
    Trpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Scalar value regression; no distributional code runs.
    BaselineScalar,
    /// Quantile critic fitted to bar-wise Bellman targets, w = 1.
    DvfBellman,
    /// Quantile critic fitted to normal targets, w = 1.
    #[serde(rename = "mcclt_no_w")]
    McCltNoW,
    /// Normal targets and uncertainty-weighted policy objective.
    #[serde(rename = "mcclt_full")]
    McCltFull,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::BaselineScalar,
        AblationMode::DvfBellman,
        AblationMode::McCltNoW,
        AblationMode::McCltFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::BaselineScalar => "baseline_scalar",
            AblationMode::DvfBellman => "dvf_bellman",
            AblationMode::McCltNoW => "mcclt_no_w",
            AblationMode::McCltFull => "mcclt_full",
        }
    }

    pub fn uses_quantiles(self) -> bool {
        self != AblationMode::BaselineScalar
    }
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Trpo => "trpo",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}'")))
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Algorithm::Ppo),
            "trpo" => Ok(Algorithm::Trpo),
            _ => Err(Error::Config(format!("unknown algorithm '{s}'"))),
        }
    }
}

/// Mean of the normal target bars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetMean {
    /// Discounted return-to-go (plain sum when gamma = 1).
    #[default]
    ReturnToGo,
    /// Plain reward sum to the end of the path.
    UndiscountedReturnToGo,
    /// One-step `r + gamma * v(s')`.
    Td,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub env: String,
    pub algorithm: Algorithm,
    pub mode: AblationMode,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,

    pub gamma: f64,
    pub lambda: f64,
    pub normalize_advantages: bool,

    pub n_quantiles: usize,
    pub kappa: f64,
    pub sigma_sq_min: f64,
    /// Uncertainty temperature; defaults per algorithm when absent.
    pub temperature: Option<f64>,
    pub target_mean: TargetMean,
    pub quantile_sign: ResidualSign,
    /// Weighted mode with w pinned to 1 (equivalence checks).
    pub force_unit_weight: bool,

    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub quantile_hidden: Vec<usize>,

    pub pi_lr: f64,
    pub vf_lr: f64,
    pub train_pi_iters: usize,
    pub train_v_iters: usize,
    /// 0 means full batch.
    pub minibatch_size: usize,

    pub clip_epsilon: f64,
    pub target_kl: f64,
    pub kl_stop_factor: f64,

    pub kl_delta: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_coeff: f64,
    pub backtrack_iters: usize,

    pub max_episode_steps: Option<usize>,
    pub noise_scale: Option<f64>,
    pub checkpoint_every: usize,
    pub dump_trajectories: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: String::new(),
            algorithm: Algorithm::Ppo,
            mode: AblationMode::McCltFull,
            seed: 0,
            epochs: 50,
            steps_per_epoch: 4000,
            gamma: 0.99,
            lambda: 0.97,
            normalize_advantages: true,
            n_quantiles: 100,
            kappa: 1.0,
            sigma_sq_min: 10.0,
            temperature: None,
            target_mean: TargetMean::ReturnToGo,
            quantile_sign: ResidualSign::TargetMinusPred,
            force_unit_weight: false,
            policy_hidden: vec![64, 32],
            value_hidden: vec![64, 64],
            quantile_hidden: vec![512, 512],
            pi_lr: 3e-4,
            vf_lr: 1e-3,
            train_pi_iters: 80,
            train_v_iters: 80,
            minibatch_size: 0,
            clip_epsilon: 0.2,
            target_kl: 0.01,
            kl_stop_factor: 1.5,
            kl_delta: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_coeff: 0.8,
            backtrack_iters: 10,
            max_episode_steps: None,
            noise_scale: None,
            checkpoint_every: 0,
            dump_trajectories: false,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be at least 1")))
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Resolved configuration in the same syntax, including defaults.
    pub fn to_toml_string(&self) -> Result<String> {
        let mut resolved = self.clone();
        resolved.temperature = Some(self.effective_temperature());
        toml::to_string(&resolved).map_err(|e| Error::Config(e.to_string()))
    }

    /// Apply `key=value` overrides; values parse as TOML literals and fall
    /// back to bare strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
            let key = key.trim();
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        let cfg: TrainConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn effective_temperature(&self) -> f64 {
        self.temperature.unwrap_or(match self.algorithm {
            Algorithm::Ppo => 0.05,
            Algorithm::Trpo => 0.01,
        })
    }

    pub fn env_overrides(&self) -> EnvOverrides {
        EnvOverrides {
            max_episode_steps: self.max_episode_steps,
            noise_scale: self.noise_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.env.is_empty() {
            return Err(Error::Config("missing required key 'env'".into()));
        }
        if !ENV_NAMES.contains(&self.env.as_str()) {
            return Err(Error::Config(format!(
                "unknown environment '{}' (known: {})",
                self.env,
                ENV_NAMES.join(", ")
            )));
        }
        nonzero("epochs", self.epochs)?;
        nonzero("steps_per_epoch", self.steps_per_epoch)?;
        if self.steps_per_epoch < 2 {
            return Err(Error::Config("steps_per_epoch must be at least 2".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        nonzero("n_quantiles", self.n_quantiles)?;
        if self.mode.uses_quantiles() && self.n_quantiles < 2 {
            return Err(Error::Config("n_quantiles must be at least 2 for quantile modes".into()));
        }
        positive("kappa", self.kappa)?;
        positive("sigma_sq_min", self.sigma_sq_min)?;
        positive("temperature", self.effective_temperature())?;
        for (name, dims) in [
            ("policy_hidden", &self.policy_hidden),
            ("value_hidden", &self.value_hidden),
            ("quantile_hidden", &self.quantile_hidden),
        ] {
            if dims.contains(&0) {
                return Err(Error::Config(format!("{name} entries must be at least 1")));
            }
        }
        positive("pi_lr", self.pi_lr)?;
        positive("vf_lr", self.vf_lr)?;
        nonzero("train_pi_iters", self.train_pi_iters)?;
        nonzero("train_v_iters", self.train_v_iters)?;
        if self.minibatch_size == 1 || self.minibatch_size > self.steps_per_epoch {
            return Err(Error::Config(format!(
                "minibatch_size must be 0 (full batch) or in [2, steps_per_epoch], got {}",
                self.minibatch_size
            )));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config(format!("clip_epsilon must be in (0, 1), got {}", self.clip_epsilon)));
        }
        positive("target_kl", self.target_kl)?;
        positive("kl_stop_factor", self.kl_stop_factor)?;
        positive("kl_delta", self.kl_delta)?;
        nonzero("cg_iters", self.cg_iters)?;
        if !(self.cg_damping >= 0.0) {
            return Err(Error::Config("cg_damping must be non-negative".into()));
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            return Err(Error::Config("backtrack_coeff must be in (0, 1)".into()));
        }
        nonzero("backtrack_iters", self.backtrack_iters)?;
        if let Some(0) = self.max_episode_steps {
            return Err(Error::Config("max_episode_steps must be at least 1".into()));
        }
        if let Some(n) = self.noise_scale {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(Error::Config("noise_scale must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}
