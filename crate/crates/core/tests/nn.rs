mod common;

use approx::assert_relative_eq;
use common::{jitter, random_var, rng};
use seldkit::autodiff::{sinusoidal_table, Var};
use seldkit::error::SeldError;
use seldkit::nn::{
    load_checkpoint, lr_schedule, read_checkpoint, save_checkpoint, Adam, AdamConfig, BiGru, ConformerConfig,
    ConformerStack, Ctx, GruCell, Init, Module, MultiHeadAttention, NamedTensor, TensorKind,
};

fn permute_rows(x: &[f64], width: usize, order: &[usize]) -> Vec<f64> {
    order.iter().flat_map(|&i| x[i * width..(i + 1) * width].to_vec()).collect()
}

#[test]
fn attention_weights_are_probability_rows() {
    let att = MultiHeadAttention::new(&mut Init::new(1), 16, 8).unwrap();
    let x = random_var(&mut rng(2), &[2, 7, 16], 3.0);
    let (_, w) = att.forward_with_weights(&x, &x).unwrap();
    for row in w.to_vec().chunks(7) {
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn self_attention_commutes_with_time_permutation() {
    let att = MultiHeadAttention::new(&mut Init::new(3), 8, 2).unwrap();
    jitter(&att, &mut rng(4), 0.2);
    let x = random_var(&mut rng(5), &[1, 5, 8], 1.0);
    let order = [3, 0, 4, 1, 2];
    let xp = Var::constant(permute_rows(&x.to_vec(), 8, &order), &[1, 5, 8]).unwrap();
    let y = att.forward(&x, &x).unwrap().to_vec();
    let yp = att.forward(&xp, &xp).unwrap().to_vec();
    for (a, b) in permute_rows(&y, 8, &order).iter().zip(&yp) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cross_attention_over_a_constant_context_is_time_constant() {
    let att = MultiHeadAttention::new(&mut Init::new(6), 8, 4).unwrap();
    jitter(&att, &mut rng(7), 0.2);
    let q = random_var(&mut rng(8), &[1, 6, 8], 1.0);
    let row = random_var(&mut rng(9), &[8], 1.0).to_vec();
    let kv = Var::constant(row.repeat(4), &[1, 4, 8]).unwrap();
    let y = att.forward(&q, &kv).unwrap().to_vec();
    for frame in y.chunks(8) {
        for (a, b) in frame.iter().zip(&y[..8]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn cross_attention_on_one_stream_is_self_attention() {
    let att = MultiHeadAttention::new(&mut Init::new(10), 8, 2).unwrap();
    let x = random_var(&mut rng(11), &[2, 5, 8], 1.0);
    let copy = x.detach();
    assert_eq!(att.forward(&x, &copy).unwrap().to_vec(), att.forward(&x, &x).unwrap().to_vec());
}

#[test]
fn conformer_with_silenced_branches_reduces_to_norms_of_the_positioned_input() {
    let cfg = ConformerConfig { dim: 8, heads: 2, layers: 2, kernel: 5, ff_mult: 2, dropout: 0.0, positional_encoding: true };
    let stack = ConformerStack::new(&mut Init::new(12), &cfg).unwrap();
    jitter(&stack, &mut rng(13), 0.3);
    for b in &stack.blocks {
        for l in [&b.ff1.down, &b.attn.output, &b.conv.pointwise_out, &b.ff2.down] {
            l.weight.value_mut().iter_mut().for_each(|v| *v = 0.0);
            l.bias.value_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let (t, d) = (6, 8);
    let x = random_var(&mut rng(14), &[1, t, d], 1.0);
    let y = stack.forward(&x, &mut Ctx::eval()).unwrap().to_vec();
    // oracle: layer norm per frame, applied once per block
    let pe = sinusoidal_table(t, d);
    let mut h: Vec<f64> = x.to_vec().iter().zip(&pe).map(|(a, b)| a + b).collect();
    for b in &stack.blocks {
        let (g, beta) = (b.final_norm.gamma.to_vec(), b.final_norm.beta.to_vec());
        for frame in h.chunks_mut(d) {
            let mean = frame.iter().sum::<f64>() / d as f64;
            let var = frame.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            for (i, v) in frame.iter_mut().enumerate() {
                *v = (*v - mean) / (var + b.final_norm.eps).sqrt() * g[i] + beta[i];
            }
        }
    }
    for (a, b) in y.iter().zip(&h) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn conformer_rejects_empty_sequences() {
    let stack = ConformerStack::new(&mut Init::new(1), &ConformerConfig::with_dim(8)).unwrap();
    assert!(matches!(stack.forward(&Var::zeros(&[1, 0, 8]), &mut Ctx::eval()), Err(SeldError::Input(_))));
}

#[test]
fn time_reversal_swaps_bigru_halves_when_directions_share_weights() {
    let mut init = Init::new(15);
    let cell = GruCell::new(&mut init, 3, 4);
    jitter(&cell, &mut rng(16), 0.3);
    let gru = BiGru { layers: vec![(cell.clone(), cell)] };
    let x = random_var(&mut rng(17), &[1, 5, 3], 1.0);
    let rev = x.flip(1).unwrap();
    let y = gru.forward(&x).unwrap().to_vec();
    let yr = gru.forward(&rev).unwrap().flip(1).unwrap().to_vec();
    for (a, b) in y.chunks(8).zip(yr.chunks(8)) {
        for i in 0..4 {
            assert!((a[i] - b[i + 4]).abs() < 1e-12);
            assert!((a[i + 4] - b[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn bigru_output_width_matches_request() {
    let gru = BiGru::new(&mut Init::new(1), 6, 10, 2).unwrap();
    assert_eq!(gru.forward(&Var::zeros(&[2, 4, 6])).unwrap().shape(), [2, 4, 10]);
}

fn scalar_param(v: f64) -> (Var, Vec<NamedTensor>) {
    let p = Var::param(vec![v], &[1]).unwrap();
    let named = vec![NamedTensor { name: "p".into(), var: p.clone(), kind: TensorKind::Param }];
    (p, named)
}

#[test]
fn first_adam_step_matches_the_bias_corrected_formula() {
    let cfg = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
    for g in [0.5, 3.0, 1e-6] {
        let (p, named) = scalar_param(1.0);
        p.square().scale(g / 2.0).sum_all().backward().unwrap();
        let mut adam = Adam::new(cfg);
        adam.step(&named).unwrap();
        // m̂ = g, v̂ = g² after one step
        let want = 1.0 - cfg.lr * g / (g + cfg.eps);
        assert_relative_eq!(p.item(), want, max_relative = 1e-14);
    }
}

#[test]
fn two_adam_steps_follow_a_reference_trajectory() {
    // minimise (p - 3)² from p = 0 with lr 0.1
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
    let (mut p_ref, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
    for t in 1..=2 {
        let g = 2.0 * (p_ref - 3.0);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        p_ref -= lr * mh / (vh.sqrt() + eps);
    }
    let (p, named) = scalar_param(0.0);
    let mut adam = Adam::new(AdamConfig { lr, ..AdamConfig::default() });
    for _ in 0..2 {
        p.zero_grad();
        p.add_scalar(-3.0).square().sum_all().backward().unwrap();
        adam.step(&named).unwrap();
    }
    assert_eq!(adam.step, 2);
    assert_relative_eq!(p.item(), p_ref, max_relative = 1e-14);
    // both steps move by about lr while the gradient sign is fixed
    assert!((p.item() - 0.2).abs() < 1e-3);
}

#[test]
fn schedule_holds_then_decays_five_percent_per_epoch() {
    assert_eq!(lr_schedule(0, 3e-4), 3e-4);
    assert_eq!(lr_schedule(29, 3e-4), 3e-4);
    assert_relative_eq!(lr_schedule(31, 1.0), 0.9025, max_relative = 1e-14);
    for e in 30..60 {
        assert_relative_eq!(lr_schedule(e + 1, 1.0) / lr_schedule(e, 1.0), 0.95, max_relative = 1e-12);
    }
}

#[test]
fn identical_seeds_give_bit_identical_forwards() {
    let cfg = ConformerConfig { dim: 8, heads: 2, layers: 2, kernel: 3, ff_mult: 2, dropout: 0.1, positional_encoding: true };
    let run = || {
        let s = ConformerStack::new(&mut Init::new(20), &cfg).unwrap();
        let x = random_var(&mut rng(21), &[2, 5, 8], 1.0);
        s.forward(&x, &mut Ctx::train(22)).unwrap().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoints_restore_state_at_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = ConformerConfig { dim: 8, heads: 2, layers: 1, kernel: 3, ff_mult: 2, dropout: 0.0, positional_encoding: true };
    let a = ConformerStack::new(&mut Init::new(1), &cfg).unwrap();
    let b = ConformerStack::new(&mut Init::new(2), &cfg).unwrap();
    save_checkpoint(&path, &a.state()).unwrap();
    load_checkpoint(&path, &b.state()).unwrap();
    for (x, y) in a.state().iter().zip(b.state()) {
        for (u, v) in x.var.to_vec().iter().zip(y.var.to_vec()) {
            assert_eq!(*u as f32 as f64, v);
        }
    }
    let entries = read_checkpoint(&path).unwrap();
    assert_eq!(entries.len(), a.state().len());
    assert!(std::fs::read_to_string(dir.path().join("m.ckpt.manifest")).unwrap().lines().count() == entries.len());
}
