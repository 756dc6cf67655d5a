//! Feed-forward networks with hand-written backpropagation and Adam.
//!
//! Parameters are exposed as a flat vector in a fixed layout (per layer:
//! row-major weight matrix, then bias) so that optimizers, conjugate
//! gradient and checkpoints all agree on the ordering.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Domain(format!("unknown activation '{other}'"))),
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One affine layer; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(inp: usize, out: usize) -> Self {
        Layer {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Multilayer perceptron: hidden layers use `activation`, the output layer is
/// linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    activation: Activation,
    layers: Vec<Layer>,
}

/// Intermediate values of a batched forward pass, needed by `backward` and
/// `jvp`.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[l]` is the input of layer `l` (batch x in).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every layer (batch x out).
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Parameter gradients with the same shapes as the network layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layers.iter().map(Layer::num_params).sum());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Domain("an mlp needs at least input and output dims".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Domain(format!("layer dims must be positive: {dims:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Scaled-uniform initialization: every weight and bias of a layer with
    /// fan-in `k` is drawn from `U(-1/sqrt(k), 1/sqrt(k))`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = Array2::from_shape_fn((w[1], w[0]), |_| rng.random_range(-bound..bound));
                let bias = Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..bound));
                Layer { weight, bias }
            })
            .collect();
        Ok(Mlp { activation, layers })
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Mlp { activation, layers })
    }

    pub fn from_layers(activation: Activation, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain("an mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].weight.nrows(), pair[1].weight.ncols())?;
        }
        for l in &layers {
            check_dim(l.weight.nrows(), l.bias.len())?;
        }
        Ok(Mlp { activation, layers })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.nrows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim(self.input_dim(), x.ncols())?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<Trace> {
        check_dim(self.input_dim(), x.ncols())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            let next = if i < last {
                z.mapv(|v| self.activation.apply(v))
            } else {
                z.clone()
            };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok(Trace { inputs, pre, output: h })
    }

    /// Backpropagate `out_grad` (batch x out). Gradients are summed over the
    /// batch; callers fold any averaging into `out_grad`.
    pub fn backward(&self, trace: &Trace, out_grad: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        check_dim(self.output_dim(), out_grad.ncols())?;
        check_dim(trace.batch_size(), out_grad.nrows())?;
        let n = self.layers.len();
        let mut grads: Vec<Option<Layer>> = vec![None; n];
        let mut delta = out_grad.to_owned();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let weight = delta.t().dot(&trace.inputs[l]);
            let bias = delta.sum_axis(Axis(0));
            grads[l] = Some(Layer { weight, bias });
            let mut back = delta.dot(&layer.weight);
            if l > 0 {
                let act = self.activation;
                ndarray::Zip::from(&mut back)
                    .and(&trace.pre[l - 1])
                    .and(&trace.inputs[l])
                    .for_each(|g, &z, &h| *g *= act.derivative(z, h));
            }
            delta = back;
        }
        let layers = grads.into_iter().map(|g| g.expect("filled")).collect();
        Ok((Gradients { layers }, delta))
    }

    /// Single-sample convenience wrapper around `forward_trace` + `backward`.
    pub fn backward_single(&self, input: &[f64], out_grad: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        check_dim(self.input_dim(), input.len())?;
        check_dim(self.output_dim(), out_grad.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let g = ArrayView2::from_shape((1, out_grad.len()), out_grad).expect("row view");
        let trace = self.forward_trace(x)?;
        let (grads, input_grad) = self.backward(&trace, g)?;
        Ok((grads, input_grad.into_raw_vec_and_offset().0))
    }

    /// Forward-mode directional derivative of the outputs along a flat
    /// parameter direction `v`, evaluated at the traced inputs.
    pub fn jvp(&self, trace: &Trace, v: &[f64]) -> Result<Array2<f64>> {
        check_dim(self.num_params(), v.len())?;
        let last = self.layers.len() - 1;
        let batch = trace.batch_size();
        let mut offset = 0;
        let mut dh: Option<Array2<f64>> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, inp) = layer.weight.dim();
            let dw = ArrayView2::from_shape((out, inp), &v[offset..offset + out * inp]).expect("weight view");
            offset += out * inp;
            let db = &v[offset..offset + out];
            offset += out;
            let mut dz = trace.inputs[l].dot(&dw.t());
            if let Some(prev) = &dh {
                dz += &prev.dot(&layer.weight.t());
            }
            for mut row in dz.rows_mut() {
                for (x, b) in row.iter_mut().zip(db) {
                    *x += b;
                }
            }
            if l < last {
                let act = self.activation;
                let h_out = &trace.inputs[l + 1];
                ndarray::Zip::from(&mut dz)
                    .and(&trace.pre[l])
                    .and(h_out)
                    .for_each(|d, &z, &h| *d *= act.derivative(z, h));
            }
            dh = Some(dz);
        }
        Ok(dh.unwrap_or_else(|| Array2::zeros((batch, self.output_dim()))))
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim(self.num_params(), p.len())?;
        let mut offset = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = p[offset];
                offset += 1;
            }
            for b in l.bias.iter_mut() {
                *b = p[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update of `params` in place (descent direction).
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    check_dim(state.m.len(), params.len())?;
    check_dim(params.len(), grads.len())?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    // Straightforward loop-based reimplementation used as an oracle.
    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = net.layers().len();
        for (l, layer) in net.layers().iter().enumerate() {
            let (out, inp) = layer.weight.dim();
            let mut z = vec![0.0; out];
            for o in 0..out {
                let mut s = layer.bias[o];
                for i in 0..inp {
                    s += layer.weight[[o, i]] * h[i];
                }
                z[o] = if l + 1 < n { net.activation().apply(s) } else { s };
            }
            h = z;
        }
        h
    }

    #[test]
    fn zero_net_outputs_bias() {
        let mut net = Mlp::zeros(&[3, 5, 2], Activation::Relu).unwrap();
        net.layers_mut()[1].bias = array![0.3, -1.2];
        assert_eq!(net.forward(&[1.0, -2.0, 4.0]).unwrap(), vec![0.3, -1.2]);
    }

    #[test]
    fn identity_linear_layer() {
        let layer = Layer {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let net = Mlp::from_layers(Activation::Tanh, vec![layer]).unwrap();
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        for act in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::new(&[4, 16, 8, 3], act, &mut rng()).unwrap();
            let x = [0.3, -0.7, 1.1, 0.05];
            let got = net.forward(&x).unwrap();
            let want = naive_forward(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let net = Mlp::new(&[2, 3, 1], Activation::Tanh, &mut rng()).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(net.backward_single(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(Mlp::zeros(&[3], Activation::Relu).is_err());
        assert!(Mlp::zeros(&[3, 0, 1], Activation::Relu).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let net = Mlp::new(&[3, 6, 2], Activation::Tanh, &mut rng()).unwrap();
        let (g, ig) = net.backward_single(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(ig.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_grad_is_outer_product() {
        let net = Mlp::new(&[3, 2], Activation::Relu, &mut rng()).unwrap();
        let x = [0.5, -1.0, 2.0];
        let g = [1.5, -0.25];
        let (grads, _) = net.backward_single(&x, &g).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(grads.layers[0].weight[[o, i]], g[o] * x[i]);
            }
            assert_eq!(grads.layers[0].bias[o], g[o]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut net = Mlp::new(&[3, 7, 5, 2], Activation::Tanh, &mut rng()).unwrap();
        let x = [0.4, -0.3, 0.9];
        let c = [0.7, -1.3];
        let (grads, input_grad) = net.backward_single(&x, &c).unwrap();
        let analytic = grads.flatten();
        let base = net.params();
        let h = 1e-5;
        let loss = |net: &Mlp, x: &[f64]| -> f64 {
            net.forward(x).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            net.set_params(&p).unwrap();
            let up = loss(&net, &x);
            p[i] -= 2.0 * h;
            net.set_params(&p).unwrap();
            let down = loss(&net, &x);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(rel < 1e-4 || (fd - analytic[i]).abs() < 1e-9, "param {i}: {fd} vs {}", analytic[i]);
        }
        net.set_params(&base).unwrap();
        for i in 0..3 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - input_grad[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn jvp_matches_gradient_contraction() {
        let net = Mlp::new(&[3, 6, 4, 2], Activation::Relu, &mut rng()).unwrap();
        let x = array![[0.2, -0.5, 0.8], [1.0, 0.3, -0.2]];
        let trace = net.forward_trace(x.view()).unwrap();
        let mut r = rng();
        let v: Vec<f64> = (0..net.num_params()).map(|_| r.random_range(-1.0..1.0)).collect();
        let u = array![[0.3, -0.6], [1.2, 0.1]];
        let jv = net.jvp(&trace, &v).unwrap();
        // <u, J v> == <J^T u, v>
        let lhs: f64 = (&jv * &u).sum();
        let (g, _) = net.backward(&trace, u.view()).unwrap();
        let rhs: f64 = g.flatten().iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn params_round_trip() {
        let mut net = Mlp::new(&[2, 3, 2], Activation::Tanh, &mut rng()).unwrap();
        let p = net.params();
        let copy = net.clone();
        net.set_params(&p).unwrap();
        assert_eq!(net, copy);
        assert!(net.set_params(&p[1..]).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3, 1e-3);
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2, 0.01);
        adam_step(&mut p, &[1e6, -1e6], &mut s).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-12);
        assert!((p[1] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn adam_matches_hand_formula() {
        let mut p = vec![0.5];
        let mut s = AdamState::new(1, 0.1);
        adam_step(&mut p, &[0.2], &mut s).unwrap();
        adam_step(&mut p, &[-0.4], &mut s).unwrap();
        // Step 1: m=0.02, v=4e-5 -> m_hat=0.2, v_hat=0.04 -> p = 0.5 - 0.1*0.2/(0.2+1e-8)
        let p1 = 0.5 - 0.1 * 0.2 / (0.2 + 1e-8);
        // Step 2: m = 0.9*0.02 - 0.1*0.4*... computed directly.
        let m2 = 0.9 * 0.02 + 0.1 * -0.4;
        let v2 = 0.999 * 4e-5 + 0.001 * 0.16;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.999f64.powi(2));
        let p2 = p1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - p2).abs() < 1e-14, "{} vs {p2}", p[0]);
        assert!(adam_step(&mut p, &[1.0, 2.0], &mut s).is_err());
    }

    proptest::proptest! {
        #[test]
        fn backward_is_linear_in_output_grad(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let net = Mlp::new(&[2, 4, 2], Activation::Tanh, &mut rng()).unwrap();
            let x = [0.3, -0.9];
            let (g1, _) = net.backward_single(&x, &[1.0, 0.0]).unwrap();
            let (g2, _) = net.backward_single(&x, &[0.0, 1.0]).unwrap();
            let (g, _) = net.backward_single(&x, &[a, b]).unwrap();
            for ((x, y), z) in g1.flatten().iter().zip(g2.flatten()).zip(g.flatten()) {
                proptest::prop_assert!((a * x + b * y - z).abs() < 1e-10);
            }
        }
    }
}
