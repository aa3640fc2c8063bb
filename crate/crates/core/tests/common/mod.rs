#![allow(dead_code)]

pub mod cases;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use seldkit::autodiff::{no_grad, Var};
use seldkit::nn::{Module, NamedTensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients below `FLOOR · max(1, |loss|)` are compared absolutely; that
/// scale sits well above the rounding noise `ε |loss| / STEP` of the
/// central difference.
pub const FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_var(rng: &mut StdRng, shape: &[usize], scale: f64) -> Var {
    let n = shape.iter().product();
    Var::constant((0..n).map(|_| rng.gen_range(-scale..scale)).collect(), shape).unwrap()
}

pub fn random_param(rng: &mut StdRng, shape: &[usize], scale: f64) -> Var {
    let n = shape.iter().product();
    Var::param((0..n).map(|_| rng.gen_range(-scale..scale)).collect(), shape).unwrap()
}

/// Adds uniform noise to every parameter so zero biases and unit gains
/// do not hide terms.
pub fn jitter(module: &impl Module, rng: &mut StdRng, scale: f64) {
    for p in module.parameters() {
        p.var.value_mut().iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central-difference check of `d loss / d var` at `count` random entries
/// of each tensor. Returns the worst relative error and its location.
pub fn check_gradients(
    loss: &dyn Fn() -> Var,
    tensors: &[NamedTensor],
    count: usize,
    rng: &mut StdRng,
) -> (f64, String) {
    for t in tensors {
        t.var.zero_grad();
    }
    let base = loss();
    base.backward().unwrap();
    let floor = FLOOR * base.item().abs().max(1.0);
    let mut worst = (0.0, String::new());
    for t in tensors {
        let grad = t.var.grad().unwrap_or_else(|| vec![0.0; t.var.numel()]);
        let n = t.var.numel();
        let picks: Vec<usize> = if n <= count { (0..n).collect() } else { (0..count).map(|_| rng.gen_range(0..n)).collect() };
        for i in picks {
            let orig = t.var.value()[i];
            t.var.value_mut()[i] = orig + STEP;
            let up = no_grad(|| loss().item());
            t.var.value_mut()[i] = orig - STEP;
            let down = no_grad(|| loss().item());
            t.var.value_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let err = relative_error(grad[i], numeric, floor);
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, format!("{}[{i}]: analytic {} numeric {numeric}", t.name, grad[i]));
            }
        }
    }
    worst
}

/// Wraps bare variables as named tensors for [`check_gradients`].
pub fn named(vars: &[(&str, &Var)]) -> Vec<NamedTensor> {
    vars.iter()
        .map(|(n, v)| NamedTensor {
            name: n.to_string(),
            var: (*v).clone(),
            kind: seldkit::nn::TensorKind::Param,
        })
        .collect()
}

/// Scalar probe `Σ w ⊙ y` with fixed random weights.
pub fn probe(y: &Var, weights: &Var) -> Var {
    y.mul(weights).unwrap().sum_all()
}
