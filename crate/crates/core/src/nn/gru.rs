use super::{join, push_param, Init, Module, NamedTensor};
use crate::autodiff::{concat, stack, Var};
use crate::error::{Result, SeldError};

/// One-direction GRU with gate order (reset, update, candidate).
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_input: Var,
    pub w_hidden: Var,
    pub b_input: Var,
    pub b_hidden: Var,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(init: &mut Init, input: usize, hidden: usize) -> Self {
        Self {
            w_input: init.fan_in(&[input, 3 * hidden], input),
            w_hidden: init.fan_in(&[hidden, 3 * hidden], hidden),
            b_input: init.zeros(&[3 * hidden]),
            b_hidden: init.zeros(&[3 * hidden]),
            hidden,
        }
    }

    /// Runs over `[B, T, In]` from t = 0 upwards, returns `[B, T, H]`.
    pub fn forward(&self, x: &Var) -> Result<Var> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.w_input.shape()[0] {
            return Err(SeldError::shape("gru", format!("input {s:?} vs weight {:?}", self.w_input.shape())));
        }
        let (b, t) = (s[0], s[1]);
        let h3 = 3 * self.hidden;
        let hsz = self.hidden;
        let xw = x.matmul(&self.w_input)?.add(&self.b_input)?;
        let mut h = Var::zeros(&[b, hsz]);
        let mut outs = Vec::with_capacity(t);
        for step in 0..t {
            let xt = xw.slice(1, step, step + 1)?.reshape(&[b, h3])?;
            let hw = h.matmul(&self.w_hidden)?.add(&self.b_hidden)?;
            let r = xt.slice(1, 0, hsz)?.add(&hw.slice(1, 0, hsz)?)?.sigmoid();
            let z = xt.slice(1, hsz, 2 * hsz)?.add(&hw.slice(1, hsz, 2 * hsz)?)?.sigmoid();
            let n = xt
                .slice(1, 2 * hsz, h3)?
                .add(&r.mul(&hw.slice(1, 2 * hsz, h3)?)?)?
                .tanh();
            h = n.add(&z.mul(&h.sub(&n)?)?)?;
            outs.push(h.clone());
        }
        stack(&outs, 1)
    }
}

impl Module for GruCell {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        push_param(out, prefix, "w_input", &self.w_input);
        push_param(out, prefix, "w_hidden", &self.w_hidden);
        push_param(out, prefix, "b_input", &self.b_input);
        push_param(out, prefix, "b_hidden", &self.b_hidden);
    }
}

/// Stacked bidirectional GRU; each layer emits `[forward ‖ backward]`.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub layers: Vec<(GruCell, GruCell)>,
}

impl BiGru {
    /// `output` must be even; each direction gets `output / 2` units.
    pub fn new(init: &mut Init, input: usize, output: usize, layers: usize) -> Result<Self> {
        if output % 2 != 0 {
            return Err(SeldError::Config(format!("bidirectional GRU width {output} must be even")));
        }
        let hidden = output / 2;
        let layers = (0..layers)
            .map(|i| {
                let inp = if i == 0 { input } else { output };
                (GruCell::new(init, inp, hidden), GruCell::new(init, inp, hidden))
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        let mut h = x.clone();
        for (fwd, bwd) in &self.layers {
            let f = fwd.forward(&h)?;
            let b = bwd.forward(&h.flip(1)?)?.flip(1)?;
            h = concat(&[f, b], 2)?;
        }
        Ok(h)
    }
}

impl Module for BiGru {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (i, (f, b)) in self.layers.iter().enumerate() {
            f.visit(&join(prefix, &format!("layers.{i}.forward")), out);
            b.visit(&join(prefix, &format!("layers.{i}.backward")), out);
        }
    }
}
