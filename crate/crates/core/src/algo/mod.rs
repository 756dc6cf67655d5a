//! Policy updaters, configuration, and the training loop.

pub mod batch;
pub mod config;
pub mod eval;
pub mod ppo;
pub mod train;
pub mod trpo;

pub use batch::PolicyBatch;
pub use config::{AblationMode, Algorithm, TargetMean, TrainConfig};
pub use eval::{evaluate, evaluate_random, random_episode, run_episode, EvalSummary};
pub use ppo::{ppo_surrogate, ppo_update, PpoConfig, PpoDiagnostics};
pub use train::{metrics_csv, train, write_metrics_csv, EpochMetrics, PolicyUpdate, TrainOutcome, Trainer, METRICS_HEADER};
pub use trpo::{conjugate_gradient, trpo_update, TrpoConfig, TrpoDiagnostics};
