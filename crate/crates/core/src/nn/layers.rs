use super::{push_buffer, push_param, Ctx, Init, Module, NamedTensor};
use crate::autodiff::Var;
use crate::error::Result;

/// Affine map over the last axis, weight stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(init: &mut Init, input: usize, output: usize) -> Self {
        Self {
            weight: init.fan_in(&[input, output], input),
            bias: init.zeros(&[output]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        push_param(out, prefix, "weight", &self.weight);
        push_param(out, prefix, "bias", &self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(init: &mut Init, dim: usize) -> Self {
        Self {
            gamma: init.ones(&[dim]),
            beta: init.zeros(&[dim]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        x.layer_norm(&self.gamma, &self.beta, self.eps)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        push_param(out, prefix, "gamma", &self.gamma);
        push_param(out, prefix, "beta", &self.beta);
    }
}

/// Batch normalisation over one channel axis; running statistics are kept
/// as buffers and updated in training mode.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub axis: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(init: &mut Init, channels: usize, axis: usize) -> Self {
        Self {
            gamma: init.ones(&[channels]),
            beta: init.zeros(&[channels]),
            running_mean: Var::zeros(&[channels]),
            running_var: Var::full(&[channels], 1.0),
            axis,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        if ctx.train {
            let (y, m) = x.batch_norm_train(&self.gamma, &self.beta, self.axis, self.eps)?;
            let unbias = if m.count > 1 {
                m.count as f64 / (m.count - 1) as f64
            } else {
                1.0
            };
            let mut rm = self.running_mean.value_mut();
            let mut rv = self.running_var.value_mut();
            for c in 0..rm.len() {
                rm[c] = (1.0 - self.momentum) * rm[c] + self.momentum * m.mean[c];
                rv[c] = (1.0 - self.momentum) * rv[c] + self.momentum * m.var[c] * unbias;
            }
            Ok(y)
        } else {
            x.batch_norm_eval(
                &self.gamma,
                &self.beta,
                self.axis,
                &self.running_mean.value(),
                &self.running_var.value(),
                self.eps,
            )
        }
    }
}

impl Module for BatchNorm {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        push_param(out, prefix, "gamma", &self.gamma);
        push_param(out, prefix, "beta", &self.beta);
        push_buffer(out, prefix, "running_mean", &self.running_mean);
        push_buffer(out, prefix, "running_var", &self.running_var);
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    /// Square kernel, "same" padding for odd `kernel` at stride 1.
    pub fn new(init: &mut Init, cin: usize, cout: usize, kernel: usize) -> Self {
        Self {
            weight: init.fan_in(&[cout, cin, kernel, kernel], cin * kernel * kernel),
            bias: init.zeros(&[cout]),
            stride: (1, 1),
            padding: (kernel / 2, kernel / 2),
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.padding)
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        push_param(out, prefix, "weight", &self.weight);
        push_param(out, prefix, "bias", &self.bias);
    }
}
