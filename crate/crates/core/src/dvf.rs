//! Distributional (quantile) value function, the scalar baseline critic, and
//! the quantile Huber loss used to fit the former.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::net::{adam_step, Activation, AdamState, Mlp};
use crate::stats::quantile_level;

/// Which residual enters the asymmetric loss weight.
///
/// `TargetMinusPred` is the usual quantile-regression convention and makes bar
/// `i` converge to the `tau_i` quantile. `PredMinusTarget` flips the
/// asymmetry, so bars converge to the `1 - tau_i` quantiles instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSign {
    #[default]
    TargetMinusPred,
    PredMinusTarget,
}

pub fn huber(u: f64, kappa: f64) -> f64 {
    if u.abs() < kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    }
}

fn huber_derivative(u: f64, kappa: f64) -> f64 {
    if u.abs() < kappa {
        u
    } else {
        kappa * u.signum()
    }
}

/// `|tau - 1{u < 0}| * huber(u)`.
pub fn quantile_huber(u: f64, tau: f64, kappa: f64) -> f64 {
    let indicator = if u < 0.0 { 1.0 } else { 0.0 };
    (tau - indicator).abs() * huber(u, kappa)
}

/// Loss value and derivative with respect to the prediction.
fn quantile_huber_pred_grad(pred: f64, target: f64, tau: f64, kappa: f64, sign: ResidualSign) -> (f64, f64) {
    let (u, du_dpred) = match sign {
        ResidualSign::TargetMinusPred => (target - pred, -1.0),
        ResidualSign::PredMinusTarget => (pred - target, 1.0),
    };
    let indicator = if u < 0.0 { 1.0 } else { 0.0 };
    let weight = (tau - indicator).abs();
    (weight * huber(u, kappa), weight * huber_derivative(u, kappa) * du_dpred)
}

/// Mean over bars of the quantile Huber penalty, with `tau_i = (i+1)/(N+1)`
/// and residual `target - pred`.
pub fn quantile_huber_loss(pred: &[f64], target: &[f64], kappa: f64) -> Result<f64> {
    quantile_huber_loss_with(pred, target, kappa, ResidualSign::TargetMinusPred)
}

pub fn quantile_huber_loss_with(pred: &[f64], target: &[f64], kappa: f64, sign: ResidualSign) -> Result<f64> {
    check_dim(pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::Domain("quantile loss needs at least one bar".into()));
    }
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!("kappa must be positive, got {kappa}")));
    }
    let n = pred.len();
    let total: f64 = (0..n)
        .map(|i| quantile_huber_pred_grad(pred[i], target[i], quantile_level(i, n), kappa, sign).0)
        .sum();
    Ok(total / n as f64)
}

/// State -> N quantile bars of the return distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileValueFunction {
    pub net: Mlp,
    pub kappa: f64,
    pub sign: ResidualSign,
}

impl QuantileValueFunction {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        n_quantiles: usize,
        kappa: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(n_quantiles);
        Self::from_net(Mlp::new(&dims, Activation::Relu, rng)?, kappa)
    }

    pub fn from_net(net: Mlp, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::Domain(format!("kappa must be positive, got {kappa}")));
        }
        crate::instrument::bump(|c| c.quantile_builds += 1);
        Ok(QuantileValueFunction {
            net,
            kappa,
            sign: ResidualSign::default(),
        })
    }

    pub fn n_quantiles(&self) -> usize {
        self.net.output_dim()
    }

    pub fn predict_quantiles(&self, state: &[f64]) -> Result<Vec<f64>> {
        crate::instrument::bump(|c| c.quantile_predictions += 1);
        self.net.forward(state)
    }

    pub fn predict_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        crate::instrument::bump(|c| c.quantile_predictions += 1);
        self.net.forward_batch(states)
    }

    /// `q_avg`, the arithmetic mean of the predicted bars.
    pub fn mean_value(&self, state: &[f64]) -> Result<f64> {
        Ok(mean(&self.predict_quantiles(state)?))
    }

    /// Batched loss (averaged over samples and bars) and its flat parameter
    /// gradient.
    pub fn loss_and_grad(&self, states: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        let (loss, trace, out_grad) = self.loss_parts(states, targets)?;
        let (grads, _) = self.net.backward(&trace, out_grad.view())?;
        Ok((loss, grads.flatten()))
    }

    fn loss_parts(
        &self,
        states: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, crate::net::Trace, Array2<f64>)> {
        crate::instrument::bump(|c| c.quantile_fits += 1);
        if states.nrows() == 0 {
            return Err(Error::Usage("cannot fit on an empty batch".into()));
        }
        check_dim(states.nrows(), targets.nrows())?;
        let n = self.n_quantiles();
        check_dim(n, targets.ncols())?;
        let trace = self.net.forward_trace(states)?;
        let pred = trace.output();
        let scale = 1.0 / (states.nrows() * n) as f64;
        let mut out_grad = Array2::zeros(pred.dim());
        let mut total = 0.0;
        for b in 0..pred.nrows() {
            for i in 0..n {
                let (l, g) =
                    quantile_huber_pred_grad(pred[[b, i]], targets[[b, i]], quantile_level(i, n), self.kappa, self.sign);
                total += l;
                out_grad[[b, i]] = g * scale;
            }
        }
        Ok((total * scale, trace, out_grad))
    }

    /// One Adam step on the batched quantile Huber loss; returns the loss
    /// before the update.
    pub fn fit_quantiles(
        &mut self,
        states: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        opt: &mut AdamState,
    ) -> Result<f64> {
        let (loss, trace, out_grad) = self.loss_parts(states, targets)?;
        let (grads, _) = self.net.backward(&trace, out_grad.view())?;
        let mut params = self.net.params();
        adam_step(&mut params, &grads.flatten(), opt)?;
        self.net.set_params(&params)?;
        Ok(loss)
    }
}

/// Scalar value baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarValueFunction {
    pub net: Mlp,
}

impl ScalarValueFunction {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self::from_net(Mlp::new(&dims, Activation::Relu, rng)?)
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        check_dim(1, net.output_dim())?;
        Ok(ScalarValueFunction { net })
    }

    pub fn predict(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.forward(state)?[0])
    }

    pub fn predict_batch(&self, states: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward_batch(states)?.column(0).to_vec())
    }

    /// Mean squared error and its flat parameter gradient.
    pub fn loss_and_grad(&self, states: ArrayView2<f64>, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (loss, trace, out_grad) = self.loss_parts(states, targets)?;
        let (grads, _) = self.net.backward(&trace, out_grad.view())?;
        Ok((loss, grads.flatten()))
    }

    fn loss_parts(&self, states: ArrayView2<f64>, targets: &[f64]) -> Result<(f64, crate::net::Trace, Array2<f64>)> {
        if states.nrows() == 0 {
            return Err(Error::Usage("cannot fit on an empty batch".into()));
        }
        check_dim(states.nrows(), targets.len())?;
        let trace = self.net.forward_trace(states)?;
        let pred = trace.output();
        let b = targets.len() as f64;
        let mut out_grad = Array2::zeros(pred.dim());
        let mut total = 0.0;
        for (i, y) in targets.iter().enumerate() {
            let d = pred[[i, 0]] - y;
            total += d * d;
            out_grad[[i, 0]] = 2.0 * d / b;
        }
        Ok((total / b, trace, out_grad))
    }

    /// One Adam step on the MSE; returns the loss before the update.
    pub fn fit_scalar(&mut self, states: ArrayView2<f64>, targets: &[f64], opt: &mut AdamState) -> Result<f64> {
        let (loss, trace, out_grad) = self.loss_parts(states, targets)?;
        let (grads, _) = self.net.backward(&trace, out_grad.view())?;
        let mut params = self.net.params();
        adam_step(&mut params, &grads.flatten(), opt)?;
        self.net.set_params(&params)?;
        Ok(loss)
    }
}

/// The critic used during collection: a scalar baseline or a quantile net
/// whose bar average serves as the state value.
#[derive(Debug, Clone, PartialEq)]
pub enum Critic {
    Scalar(ScalarValueFunction),
    Quantile(QuantileValueFunction),
}

impl Critic {
    pub fn is_quantile(&self) -> bool {
        matches!(self, Critic::Quantile(_))
    }

    pub fn as_quantile(&self) -> Option<&QuantileValueFunction> {
        match self {
            Critic::Quantile(q) => Some(q),
            Critic::Scalar(_) => None,
        }
    }

    /// State value and, for quantile critics, the predicted bars.
    pub fn evaluate(&self, state: &[f64]) -> Result<(f64, Option<Vec<f64>>)> {
        match self {
            Critic::Scalar(v) => Ok((v.predict(state)?, None)),
            Critic::Quantile(q) => {
                let bars = q.predict_quantiles(state)?;
                Ok((mean(&bars), Some(bars)))
            }
        }
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
