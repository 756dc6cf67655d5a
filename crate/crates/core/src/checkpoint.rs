//! Plain-text network checkpoints.
//!
//! Values are written in shortest round-trip exponent form, so a save/load
//! cycle reproduces every parameter bit for bit.
//!
//! ```text
//! mcclt-policy 1
//! log_std -5e-1 -5e-1
//! mcclt-mlp 1
//! activation tanh
//! dims 4 64 32 2
//! <weights of layer 0, row-major, one row per line>
//! <bias of layer 0>
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::dvf::{QuantileValueFunction, ResidualSign, ScalarValueFunction};
use crate::error::{Error, Result};
use crate::net::{Activation, Layer, Mlp};
use crate::policy::GaussianPolicy;

const MLP_HEADER: &str = "mcclt-mlp 1";
const POLICY_HEADER: &str = "mcclt-policy 1";
const QUANTILE_HEADER: &str = "mcclt-quantile-value 1";
const SCALAR_HEADER: &str = "mcclt-scalar-value 1";

pub const POLICY_FILE: &str = "policy.ckpt";
pub const QUANTILE_FILE: &str = "quantile_value.ckpt";
pub const SCALAR_FILE: &str = "scalar_value.ckpt";

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:e}").expect("write to string");
    }
    s
}

pub fn mlp_to_string(net: &Mlp) -> String {
    let mut out = String::new();
    out.push_str(MLP_HEADER);
    out.push('\n');
    writeln!(out, "activation {}", net.activation().name()).unwrap();
    let dims: Vec<String> = net.dims().iter().map(|d| d.to_string()).collect();
    writeln!(out, "dims {}", dims.join(" ")).unwrap();
    for layer in net.layers() {
        for row in layer.weight.rows() {
            out.push_str(&join(row.iter().copied()));
            out.push('\n');
        }
        out.push_str(&join(layer.bias.iter().copied()));
        out.push('\n');
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file, expected {what}")))
    }

    fn expect_header(&mut self, header: &str) -> Result<()> {
        let (n, line) = self.next(header)?;
        if line != header {
            return Err(Error::Checkpoint(format!("line {n}: expected '{header}', found '{line}'")));
        }
        Ok(())
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next(key)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Checkpoint(format!("line {n}: expected '{key} ...', found '{line}'")));
        }
        Ok((n, parts.collect()))
    }

    fn floats(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let (n, line) = self.next(what)?;
        let vals = parse_floats(line.split_whitespace(), n)?;
        if vals.len() != count {
            return Err(Error::Checkpoint(format!(
                "line {n}: expected {count} values for {what}, found {}",
                vals.len()
            )));
        }
        Ok(vals)
    }

    fn finish(&mut self) -> Result<()> {
        for (i, l) in self.inner.by_ref() {
            if !l.trim().is_empty() {
                return Err(Error::Checkpoint(format!("line {}: trailing content", i + 1)));
            }
        }
        Ok(())
    }
}

fn parse_floats<'a>(parts: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec<f64>> {
    parts
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::Checkpoint(format!("line {line}: bad number '{p}'")))
        })
        .collect()
}

fn read_mlp(lines: &mut Lines<'_>) -> Result<Mlp> {
    lines.expect_header(MLP_HEADER)?;
    let (n, act) = lines.keyed("activation")?;
    let activation = match act.as_slice() {
        [name] => Activation::parse(name).map_err(|e| Error::Checkpoint(format!("line {n}: {e}")))?,
        _ => return Err(Error::Checkpoint(format!("line {n}: malformed activation"))),
    };
    let (n, dims) = lines.keyed("dims")?;
    let dims: Vec<usize> = dims
        .iter()
        .map(|d| d.parse().map_err(|_| Error::Checkpoint(format!("line {n}: bad dimension '{d}'"))))
        .collect::<Result<_>>()?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Checkpoint(format!("line {n}: need at least two positive dims")));
    }
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (l, w) in dims.windows(2).enumerate() {
        let (inp, out) = (w[0], w[1]);
        let mut data = Vec::with_capacity(inp * out);
        for r in 0..out {
            data.extend(lines.floats(inp, &format!("layer {l} weight row {r}"))?);
        }
        let weight = Array2::from_shape_vec((out, inp), data).expect("sized above");
        let bias = Array1::from(lines.floats(out, &format!("layer {l} bias"))?);
        layers.push(Layer { weight, bias });
    }
    Mlp::from_layers(activation, layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn mlp_from_str(text: &str) -> Result<Mlp> {
    let mut lines = Lines::new(text);
    let net = read_mlp(&mut lines)?;
    lines.finish()?;
    Ok(net)
}

pub fn policy_to_string(p: &GaussianPolicy) -> String {
    format!(
        "{POLICY_HEADER}\nlog_std {}\n{}",
        join(p.log_std.iter().copied()),
        mlp_to_string(&p.trunk)
    )
}

pub fn policy_from_str(text: &str) -> Result<GaussianPolicy> {
    let mut lines = Lines::new(text);
    lines.expect_header(POLICY_HEADER)?;
    let (n, vals) = lines.keyed("log_std")?;
    let log_std = parse_floats(vals.into_iter(), n)?;
    let trunk = read_mlp(&mut lines)?;
    lines.finish()?;
    GaussianPolicy::from_parts(trunk, log_std).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn quantile_to_string(q: &QuantileValueFunction) -> String {
    let sign = match q.sign {
        ResidualSign::TargetMinusPred => "target_minus_pred",
        ResidualSign::PredMinusTarget => "pred_minus_target",
    };
    format!(
        "{QUANTILE_HEADER}\nn_quantiles {}\nkappa {:e}\nsign {sign}\n{}",
        q.n_quantiles(),
        q.kappa,
        mlp_to_string(&q.net)
    )
}

pub fn quantile_from_str(text: &str) -> Result<QuantileValueFunction> {
    let mut lines = Lines::new(text);
    lines.expect_header(QUANTILE_HEADER)?;
    let (n, vals) = lines.keyed("n_quantiles")?;
    let n_quantiles: usize = match vals.as_slice() {
        [v] => v.parse().map_err(|_| Error::Checkpoint(format!("line {n}: bad n_quantiles")))?,
        _ => return Err(Error::Checkpoint(format!("line {n}: malformed n_quantiles"))),
    };
    let (n, vals) = lines.keyed("kappa")?;
    let kappa = match parse_floats(vals.into_iter(), n)?.as_slice() {
        [k] => *k,
        _ => return Err(Error::Checkpoint(format!("line {n}: malformed kappa"))),
    };
    let (n, vals) = lines.keyed("sign")?;
    let sign = match vals.as_slice() {
        ["target_minus_pred"] => ResidualSign::TargetMinusPred,
        ["pred_minus_target"] => ResidualSign::PredMinusTarget,
        _ => return Err(Error::Checkpoint(format!("line {n}: malformed sign"))),
    };
    let net = read_mlp(&mut lines)?;
    lines.finish()?;
    if net.output_dim() != n_quantiles {
        return Err(Error::Checkpoint(format!(
            "network has {} outputs but n_quantiles is {n_quantiles}",
            net.output_dim()
        )));
    }
    let mut q = QuantileValueFunction::from_net(net, kappa).map_err(|e| Error::Checkpoint(e.to_string()))?;
    q.sign = sign;
    Ok(q)
}

pub fn scalar_to_string(v: &ScalarValueFunction) -> String {
    format!("{SCALAR_HEADER}\n{}", mlp_to_string(&v.net))
}

pub fn scalar_from_str(text: &str) -> Result<ScalarValueFunction> {
    let mut lines = Lines::new(text);
    lines.expect_header(SCALAR_HEADER)?;
    let net = read_mlp(&mut lines)?;
    lines.finish()?;
    ScalarValueFunction::from_net(net).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))
}

pub fn save_policy(path: &Path, p: &GaussianPolicy) -> Result<()> {
    Ok(std::fs::write(path, policy_to_string(p))?)
}

pub fn load_policy(path: &Path) -> Result<GaussianPolicy> {
    policy_from_str(&read(path)?)
}

pub fn save_quantile(path: &Path, q: &QuantileValueFunction) -> Result<()> {
    Ok(std::fs::write(path, quantile_to_string(q))?)
}

pub fn load_quantile(path: &Path) -> Result<QuantileValueFunction> {
    quantile_from_str(&read(path)?)
}

pub fn save_scalar(path: &Path, v: &ScalarValueFunction) -> Result<()> {
    Ok(std::fs::write(path, scalar_to_string(v))?)
}

pub fn load_scalar(path: &Path) -> Result<ScalarValueFunction> {
    scalar_from_str(&read(path)?)
}
