//! Distributional value learning with normality-guided quantile targets and
//! uncertainty-weighted policy-gradient updates (PPO and TRPO).

pub mod advantage;
pub mod algo;
pub mod checkpoint;
pub mod cli;
pub mod diag;
pub mod dvf;
pub mod envs;
pub mod error;
pub mod net;
pub mod instrument;
pub mod policy;
pub mod rollout;
pub mod schedule;
pub mod stats;
pub mod uncertainty;

pub use error::{Error, Result};
