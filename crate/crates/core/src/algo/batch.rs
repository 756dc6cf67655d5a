use ndarray::{Array2, Axis};

use crate::advantage::normalize_advantages;
use crate::error::{check_dim, Error, Result};
use crate::rollout::TrajectoryBuffer;

/// Everything a policy update reads from a finalized rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub logp_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PolicyBatch {
    pub fn new(
        states: Array2<f64>,
        actions: Array2<f64>,
        logp_old: Vec<f64>,
        advantages: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = states.nrows();
        if n == 0 {
            return Err(Error::Usage("empty policy batch".into()));
        }
        check_dim(n, actions.nrows())?;
        check_dim(n, logp_old.len())?;
        check_dim(n, advantages.len())?;
        check_dim(n, weights.len())?;
        Ok(PolicyBatch {
            states,
            actions,
            logp_old,
            advantages,
            weights,
        })
    }

    pub fn from_buffer(buf: &TrajectoryBuffer) -> Result<Self> {
        let est = buf
            .estimates()
            .ok_or_else(|| Error::Usage("policy update needs a finalized buffer".into()))?;
        Self::new(
            buf.states(),
            buf.actions(),
            buf.log_probs(),
            est.advantages.clone(),
            buf.weights(),
        )
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> PolicyBatch {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        PolicyBatch {
            states: self.states.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            logp_old: pick(&self.logp_old),
            advantages: pick(&self.advantages),
            weights: pick(&self.weights),
        }
    }

    /// Advantages as used by the objective: standardized when `normalize`
    /// is set and the batch has at least two samples.
    pub fn objective_advantages(&self, normalize: bool) -> Result<Vec<f64>> {
        if normalize && self.len() >= 2 {
            normalize_advantages(&self.advantages)
        } else {
            Ok(self.advantages.clone())
        }
    }
}
