//! Trainable layers, optimizer and checkpoint I/O.

mod attention;
mod checkpoint;
mod conformer;
mod gru;
mod layers;
mod optim;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::autodiff::Var;
use crate::error::Result;

pub use attention::MultiHeadAttention;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, CheckpointEntry};
pub use conformer::{ConformerBlock, ConformerConfig, ConformerStack, ConvModule, FeedForward};
pub use gru::{BiGru, GruCell};
pub use layers::{BatchNorm, Conv2d, LayerNorm, Linear};
pub use optim::{lr_schedule, Adam, AdamConfig};

/// Whether a named tensor is updated by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Param,
    /// Running statistics and other non-trainable state.
    Buffer,
}

/// A named tensor of a layer.
#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub var: Var,
    pub kind: TensorKind,
}

/// Anything owning named tensors.
pub trait Module {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>);

    /// Trainable parameters with dotted names.
    fn parameters(&self) -> Vec<NamedTensor> {
        let mut all = Vec::new();
        self.visit("", &mut all);
        all.retain(|t| t.kind == TensorKind::Param);
        all
    }

    /// Parameters and buffers, the checkpointed state.
    fn state(&self) -> Vec<NamedTensor> {
        let mut all = Vec::new();
        self.visit("", &mut all);
        all
    }

    fn zero_grad(&self) {
        for t in self.parameters() {
            t.var.zero_grad();
        }
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.var.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn push_param(out: &mut Vec<NamedTensor>, prefix: &str, name: &str, var: &Var) {
    out.push(NamedTensor {
        name: join(prefix, name),
        var: var.clone(),
        kind: TensorKind::Param,
    });
}

pub(crate) fn push_buffer(out: &mut Vec<NamedTensor>, prefix: &str, name: &str, var: &Var) {
    out.push(NamedTensor {
        name: join(prefix, name),
        var: var.clone(),
        kind: TensorKind::Buffer,
    });
}

/// Seeded source for parameter initialisation.
pub struct Init {
    rng: StdRng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: StdRng::seed_from_u64(seed),
        }
    }

    /// Uniform in ±sqrt(3 / fan_in): unit-variance fan-in scaling.
    pub fn fan_in(&mut self, shape: &[usize], fan_in: usize) -> Var {
        let bound = (3.0 / fan_in.max(1) as f64).sqrt();
        self.uniform(shape, bound)
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Var {
        let n: usize = shape.iter().product();
        let v = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Var::param(v, shape).expect("shape matches")
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        Var::param(vec![0.0; shape.iter().product()], shape).expect("shape matches")
    }

    pub fn ones(&mut self, shape: &[usize]) -> Var {
        Var::param(vec![1.0; shape.iter().product()], shape).expect("shape matches")
    }
}

/// Per-forward state: train/eval switch and the dropout stream.
pub struct Ctx {
    pub train: bool,
    rng: StdRng,
}

impl Ctx {
    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: StdRng::seed_from_u64(seed),
        }
    }

    pub fn eval() -> Self {
        Self {
            train: false,
            rng: StdRng::seed_from_u64(0),
        }
    }

    /// Dropout that is a no-op outside training.
    pub fn dropout(&mut self, x: &Var, p: f64) -> Result<Var> {
        if self.train && p > 0.0 {
            x.dropout(p, &mut self.rng)
        } else {
            Ok(x.clone())
        }
    }
}
