//! Diagonal Gaussian policy on a tanh MLP trunk with a state-independent
//! log standard deviation.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::net::{Activation, Mlp};

pub const INITIAL_LOG_STD: f64 = -0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub trunk: Mlp,
    pub log_std: Vec<f64>,
}

fn half_log_two_pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(act_dim);
        let trunk = Mlp::new(&dims, Activation::Tanh, rng)?;
        Self::from_parts(trunk, vec![INITIAL_LOG_STD; act_dim])
    }

    pub fn from_parts(trunk: Mlp, log_std: Vec<f64>) -> Result<Self> {
        check_dim(trunk.output_dim(), log_std.len())?;
        Ok(GaussianPolicy { trunk, log_std })
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.trunk.forward(state)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean_action(state)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + ls.exp() * eps
            })
            .collect();
        let logp = self.log_density(&mean, &action);
        Ok((action, logp))
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        check_dim(self.act_dim(), action.len())?;
        let mean = self.mean_action(state)?;
        Ok(self.log_density(&mean, action))
    }

    fn log_density(&self, mean: &[f64], action: &[f64]) -> f64 {
        let mut lp = 0.0;
        for ((m, a), ls) in mean.iter().zip(action).zip(&self.log_std) {
            let z = (a - m) / ls.exp();
            lp += -0.5 * z * z - ls - half_log_two_pi();
        }
        lp
    }

    pub fn log_prob_batch(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Vec<f64>> {
        check_dim(states.nrows(), actions.nrows())?;
        check_dim(self.act_dim(), actions.ncols())?;
        let means = self.trunk.forward_batch(states)?;
        Ok(means
            .rows()
            .into_iter()
            .zip(actions.rows())
            .map(|(m, a)| self.log_density(m.as_slice().expect("contiguous"), &a.to_vec()))
            .collect())
    }

    pub fn num_params(&self) -> usize {
        self.trunk.num_params() + self.log_std.len()
    }

    /// Flat parameters: trunk layout followed by `log_std`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.trunk.params();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim(self.num_params(), p.len())?;
        let n = self.trunk.num_params();
        self.trunk.set_params(&p[..n])?;
        self.log_std.copy_from_slice(&p[n..]);
        Ok(())
    }

    /// Log-probabilities of a batch together with the flat gradient of
    /// `sum_b coeff_b * log pi(a_b | s_b)`.
    pub fn log_prob_weighted_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        coeffs: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(states.nrows(), actions.nrows())?;
        check_dim(states.nrows(), coeffs.len())?;
        check_dim(self.act_dim(), actions.ncols())?;
        let trace = self.trunk.forward_trace(states)?;
        let means = trace.output();
        let d = self.act_dim();
        let inv_var: Vec<f64> = self.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
        let mut out_grad = Array2::zeros(means.dim());
        let mut log_std_grad = vec![0.0; d];
        let mut logps = Vec::with_capacity(coeffs.len());
        for b in 0..states.nrows() {
            let mut lp = 0.0;
            for j in 0..d {
                let diff = actions[[b, j]] - means[[b, j]];
                let z2 = diff * diff * inv_var[j];
                lp += -0.5 * z2 - self.log_std[j] - half_log_two_pi();
                out_grad[[b, j]] = coeffs[b] * diff * inv_var[j];
                log_std_grad[j] += coeffs[b] * (z2 - 1.0);
            }
            logps.push(lp);
        }
        let (grads, _) = self.trunk.backward(&trace, out_grad.view())?;
        let mut flat = grads.flatten();
        flat.extend(log_std_grad);
        Ok((logps, flat))
    }

    /// Fisher-vector product of the mean KL at the current parameters:
    /// `(1/B) sum_b J_b^T diag(1/sigma^2) J_b v` on the trunk block and
    /// `2 v` on the `log_std` block.
    pub fn fisher_vector_product(&self, states: ArrayView2<f64>, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.num_params(), v.len())?;
        if states.nrows() == 0 {
            return Err(Error::Usage("fisher product needs at least one state".into()));
        }
        let n = self.trunk.num_params();
        let trace = self.trunk.forward_trace(states)?;
        let mut jv = self.trunk.jvp(&trace, &v[..n])?;
        let b = states.nrows() as f64;
        for mut row in jv.rows_mut() {
            for (x, l) in row.iter_mut().zip(&self.log_std) {
                *x *= (-2.0 * l).exp() / b;
            }
        }
        let (grads, _) = self.trunk.backward(&trace, jv.view())?;
        let mut out = grads.flatten();
        out.extend(v[n..].iter().map(|x| 2.0 * x));
        Ok(out)
    }
}

/// Mean over `states` of `KL(old(.|s) || new(.|s))` for diagonal Gaussians.
pub fn mean_kl(old: &GaussianPolicy, new: &GaussianPolicy, states: ArrayView2<f64>) -> Result<f64> {
    if states.nrows() == 0 {
        return Err(Error::Usage("mean_kl needs at least one state".into()));
    }
    check_dim(old.act_dim(), new.act_dim())?;
    let mu_old = old.trunk.forward_batch(states)?;
    let mu_new = new.trunk.forward_batch(states)?;
    let mut total = 0.0;
    for b in 0..states.nrows() {
        for j in 0..old.act_dim() {
            let (lo, ln) = (old.log_std[j], new.log_std[j]);
            let var_old = (2.0 * lo).exp();
            let var_new = (2.0 * ln).exp();
            let dm = mu_old[[b, j]] - mu_new[[b, j]];
            total += ln - lo + (var_old + dm * dm) / (2.0 * var_new) - 0.5;
        }
    }
    Ok((total / states.nrows() as f64).max(0.0))
}
