//! Finite-difference cases for every differentiable op, layer, fusion
//! kind and model variant, each built from a seeded generator.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use seldkit::autodiff::{concat, stack, Var};
use seldkit::labels::{adpit_loss, Event, EventLabelSet};
use seldkit::model::{
    AccdoaHead, AudioEncoder, CrossModalBlock, Fusion, FusionKind, ModelConfig, ModelInput, ResidualBlock,
    SeldModel, Variant, VisualEmbedder, VisualEncoderKind,
};
use seldkit::nn::{
    BatchNorm, BiGru, ConformerBlock, ConformerConfig, ConformerStack, Conv2d, ConvModule, Ctx, FeedForward,
    GruCell, Init, LayerNorm, Linear, Module, MultiHeadAttention, NamedTensor,
};

use super::{jitter, named, probe, random_param, random_var};

pub type Loss = Box<dyn Fn() -> Var>;
pub type Case = fn(&mut StdRng) -> (Loss, Vec<NamedTensor>);

pub struct GradCase {
    pub name: &'static str,
    pub build: Case,
    /// Entries probed per tensor.
    pub per_tensor: usize,
}

fn unary(rng: &mut StdRng, f: fn(&Var) -> Var, lo: f64, hi: f64) -> (Loss, Vec<NamedTensor>) {
    let n = 12;
    let x = Var::param((0..n).map(|_| rng.gen_range(lo..hi)).collect(), &[3, 4]).unwrap();
    let w = random_var(rng, &[3, 4], 1.0);
    let t = named(&[("x", &x)]);
    (Box::new(move || probe(&f(&x), &w)), t)
}

fn binary(rng: &mut StdRng, f: fn(&Var, &Var) -> Var, rhs_shape: &[usize], lo: f64) -> (Loss, Vec<NamedTensor>) {
    let a = random_param(rng, &[2, 3, 4], 1.0);
    let n: usize = rhs_shape.iter().product();
    let b = Var::param(
        (0..n).map(|_| rng.gen_range(lo..lo + 1.0) * if rng.gen() { 1.0 } else { -1.0 }).collect(),
        rhs_shape,
    )
    .unwrap();
    let w = random_var(rng, f(&a, &b).shape(), 1.0);
    let t = named(&[("lhs", &a), ("rhs", &b)]);
    (Box::new(move || probe(&f(&a, &b), &w)), t)
}

fn shaped(rng: &mut StdRng, shape: &[usize], f: fn(&Var) -> Var) -> (Loss, Vec<NamedTensor>) {
    let x = random_param(rng, shape, 1.0);
    let out_shape = f(&x).shape().to_vec();
    let w = random_var(rng, &out_shape, 1.0);
    let t = named(&[("x", &x)]);
    (Box::new(move || probe(&f(&x), &w)), t)
}

fn with_module<M: Module + 'static>(
    rng: &mut StdRng,
    build: impl FnOnce(&mut Init) -> M,
    input_shape: &[usize],
    f: fn(&M, &Var) -> Var,
) -> (Loss, Vec<NamedTensor>) {
    let module = build(&mut Init::new(rng.gen()));
    jitter(&module, rng, 0.2);
    let x = random_param(rng, input_shape, 1.0);
    let out_shape = f(&module, &x).shape().to_vec();
    let w = random_var(rng, &out_shape, 1.0);
    let mut t = module.parameters();
    t.extend(named(&[("input", &x)]));
    (Box::new(move || probe(&f(&module, &x), &w)), t)
}

fn random_labels(rng: &mut StdRng, frames: usize, max_events: usize) -> EventLabelSet {
    let mut l = EventLabelSet::empty(frames);
    for f in 0..frames {
        for s in 0..rng.gen_range(0..=max_events) {
            let class = rng.gen_range(0..13);
            let source = if rng.gen_bool(0.3) { 0 } else { s as u32 + 1 };
            let e = Event::new(class, source, rng.gen_range(-180.0..180.0), rng.gen_range(-90.0..90.0));
            if l.frames[f].iter().all(|o| (o.class, o.source) != (e.class, e.source)) {
                l.push(f, e);
            }
        }
    }
    l
}

fn tiny_model(variant: Variant, fusion: FusionKind, encoder: VisualEncoderKind) -> ModelConfig {
    ModelConfig {
        variant,
        fusion,
        visual_encoder: encoder,
        embed_dim: 8,
        fusion_layers: 1,
        heads: 2,
        cnn_channels: vec![3, 8],
        conv_kernel: 3,
        ff_mult: 2,
        dropout: 0.0,
        gru_layers: 1,
        mel_bins: 8,
        frame_width: 16,
        frame_height: 8,
        patch: 4,
        cnn_pool: 2,
        visual_channels: vec![3],
        ..ModelConfig::default()
    }
}

fn model_case(rng: &mut StdRng, cfg: ModelConfig) -> (Loss, Vec<NamedTensor>) {
    let seed = rng.gen();
    let model = SeldModel::new(&cfg, seed).unwrap();
    jitter(&model, rng, 0.1);
    let (b, t) = (2, 3);
    let audio = cfg
        .uses_audio()
        .then(|| random_var(rng, &[b, cfg.feature_channels, t * cfg.audio_stride(), cfg.mel_bins], 1.0));
    let visual = cfg.uses_visual().then(|| {
        let frames: Vec<Vec<_>> = (0..b)
            .map(|_| {
                (0..t)
                    .map(|_| {
                        let mut f = seldkit::augment::EquirectFrame::filled(16, 8, [0; 3]).unwrap();
                        f.pixels.iter_mut().for_each(|p| *p = rng.gen());
                        f
                    })
                    .collect()
            })
            .collect();
        model.visual_batch(&frames).unwrap()
    });
    let input = ModelInput { audio, visual };
    let labels: Vec<EventLabelSet> = (0..b).map(|_| random_labels(rng, t, 3)).collect();
    let params = model.parameters();
    let loss = move || {
        let pred = model.forward(&input, &mut Ctx::train(7)).unwrap();
        adpit_loss(&pred, &labels).unwrap()
    };
    (Box::new(loss), params)
}

fn conformer_cfg(dim: usize) -> ConformerConfig {
    ConformerConfig {
        dim,
        heads: 2,
        layers: 2,
        kernel: 3,
        ff_mult: 2,
        dropout: 0.0,
        positional_encoding: true,
    }
}

macro_rules! case {
    ($name:literal, $per:expr, $build:expr) => {
        GradCase { name: $name, build: $build, per_tensor: $per }
    };
}

pub fn op_cases() -> Vec<GradCase> {
    vec![
        case!("add", 10, |r| binary(r, |a, b| a.add(b).unwrap(), &[4], 0.0)),
        case!("sub", 10, |r| binary(r, |a, b| a.sub(b).unwrap(), &[3, 1], 0.0)),
        case!("mul", 10, |r| binary(r, |a, b| a.mul(b).unwrap(), &[2, 3, 4], 0.0)),
        case!("div", 10, |r| binary(r, |a, b| a.div(b).unwrap(), &[1, 4], 0.5)),
        case!("scale", 10, |r| unary(r, |x| x.scale(-1.7), -2.0, 2.0)),
        case!("add_scalar", 10, |r| unary(r, |x| x.add_scalar(0.3).square(), -2.0, 2.0)),
        case!("neg", 10, |r| unary(r, |x| x.neg(), -2.0, 2.0)),
        case!("square", 10, |r| unary(r, |x| x.square(), -2.0, 2.0)),
        case!("exp", 10, |r| unary(r, |x| x.exp(), -2.0, 2.0)),
        case!("relu", 10, |r| unary(r, |x| x.relu(), -2.0, 2.0)),
        case!("sigmoid", 10, |r| unary(r, |x| x.sigmoid(), -3.0, 3.0)),
        case!("tanh", 10, |r| unary(r, |x| x.tanh(), -3.0, 3.0)),
        case!("swish", 10, |r| unary(r, |x| x.swish(), -3.0, 3.0)),
        case!("sum_all", 10, |r| unary(r, |x| x.square().sum_all().reshape(&[1]).unwrap(), -2.0, 2.0)),
        case!("mean_all", 10, |r| unary(r, |x| x.square().mean_all().reshape(&[1]).unwrap(), -2.0, 2.0)),
        case!("sum_axis", 10, |r| shaped(r, &[2, 3, 4], |x| x.sum_axis(1).unwrap())),
        case!("mean_axis", 10, |r| shaped(r, &[2, 3, 4], |x| x.mean_axis(2).unwrap())),
        case!("reshape", 10, |r| shaped(r, &[2, 3, 4], |x| x.reshape(&[6, 4]).unwrap())),
        case!("permute", 10, |r| shaped(r, &[2, 3, 4], |x| x.permute(&[2, 0, 1]).unwrap())),
        case!("transpose", 10, |r| shaped(r, &[2, 3, 4], |x| x.transpose(0, 2).unwrap())),
        case!("slice", 10, |r| shaped(r, &[2, 5, 4], |x| x.slice(1, 1, 4).unwrap())),
        case!("flip", 10, |r| shaped(r, &[2, 5, 4], |x| x.flip(1).unwrap())),
        case!("unsqueeze", 10, |r| shaped(r, &[2, 5], |x| x.unsqueeze(1).unwrap())),
        case!("concat", 10, |r| shaped(r, &[2, 5, 4], |x| concat(&[x.clone(), x.square()], 1).unwrap())),
        case!("stack", 10, |r| shaped(r, &[2, 5], |x| stack(&[x.clone(), x.tanh(), x.square()], 1).unwrap())),
        case!("matmul_shared", 10, |r| binary(r, |a, b| a.matmul(b).unwrap(), &[4, 3], 0.0)),
        case!("matmul_batched", 10, |r| binary(r, |a, b| a.matmul(b).unwrap(), &[2, 4, 5], 0.0)),
        case!("softmax", 10, |r| shaped(r, &[2, 3, 5], |x| x.softmax().unwrap())),
        case!("layer_norm", 10, |r| {
            let g = random_param(r, &[5], 1.0);
            let b = random_param(r, &[5], 1.0);
            let x = random_param(r, &[2, 3, 5], 1.0);
            let w = random_var(r, &[2, 3, 5], 1.0);
            let t = named(&[("x", &x), ("gamma", &g), ("beta", &b)]);
            (Box::new(move || probe(&x.layer_norm(&g, &b, 1e-5).unwrap(), &w)), t)
        }),
        case!("batch_norm_train", 10, |r| {
            let g = random_param(r, &[3], 1.0);
            let b = random_param(r, &[3], 1.0);
            let x = random_param(r, &[2, 3, 4], 1.0);
            let w = random_var(r, &[2, 3, 4], 1.0);
            let t = named(&[("x", &x), ("gamma", &g), ("beta", &b)]);
            (Box::new(move || probe(&x.batch_norm_train(&g, &b, 1, 1e-5).unwrap().0, &w)), t)
        }),
        case!("batch_norm_eval", 10, |r| {
            let g = random_param(r, &[4], 1.0);
            let b = random_param(r, &[4], 1.0);
            let x = random_param(r, &[2, 3, 4], 1.0);
            let w = random_var(r, &[2, 3, 4], 1.0);
            let (m, v): (Vec<f64>, Vec<f64>) = (0..4).map(|_| (r.gen_range(-1.0..1.0), r.gen_range(0.5..2.0))).unzip();
            let t = named(&[("x", &x), ("gamma", &g), ("beta", &b)]);
            (Box::new(move || probe(&x.batch_norm_eval(&g, &b, 2, &m, &v, 1e-5).unwrap(), &w)), t)
        }),
        case!("glu", 10, |r| shaped(r, &[2, 3, 6], |x| x.glu(2).unwrap())),
        case!("dropout", 10, |r| shaped(r, &[4, 6], |x| x.dropout(0.3, &mut StdRng::seed_from_u64(5)).unwrap())),
        case!("conv2d", 10, |r| {
            let x = random_param(r, &[2, 3, 6, 5], 1.0);
            let k = random_param(r, &[4, 3, 3, 3], 0.5);
            let b = random_param(r, &[4], 0.5);
            let out = x.conv2d(&k, Some(&b), (2, 1), (1, 1)).unwrap().shape().to_vec();
            let w = random_var(r, &out, 1.0);
            let t = named(&[("x", &x), ("weight", &k), ("bias", &b)]);
            (Box::new(move || probe(&x.conv2d(&k, Some(&b), (2, 1), (1, 1)).unwrap(), &w)), t)
        }),
        case!("conv2d_unpadded", 10, |r| {
            let x = random_param(r, &[1, 2, 5, 5], 1.0);
            let k = random_param(r, &[3, 2, 2, 3], 0.5);
            let out = x.conv2d(&k, None, (1, 2), (0, 0)).unwrap().shape().to_vec();
            let w = random_var(r, &out, 1.0);
            let t = named(&[("x", &x), ("weight", &k)]);
            (Box::new(move || probe(&x.conv2d(&k, None, (1, 2), (0, 0)).unwrap(), &w)), t)
        }),
        case!("avg_pool2d", 10, |r| shaped(r, &[2, 3, 6, 5], |x| x.avg_pool2d(2, 2).unwrap())),
        case!("depthwise_conv1d", 10, |r| {
            let x = random_param(r, &[2, 6, 3], 1.0);
            let k = random_param(r, &[3, 5], 0.5);
            let b = random_param(r, &[3], 0.5);
            let w = random_var(r, &[2, 6, 3], 1.0);
            let t = named(&[("x", &x), ("weight", &k), ("bias", &b)]);
            (Box::new(move || probe(&x.depthwise_conv1d(&k, &b).unwrap(), &w)), t)
        }),
        case!("adpit_loss", 10, |r| {
            let pred = Var::param((0..2 * 4 * 3 * 13 * 3).map(|_| r.gen_range(-0.9..0.9)).collect(), &[2, 4, 3, 13, 3]).unwrap();
            let labels: Vec<EventLabelSet> = (0..2).map(|_| random_labels(r, 4, 3)).collect();
            let t = named(&[("pred", &pred)]);
            (Box::new(move || adpit_loss(&pred, &labels).unwrap()), t)
        }),
    ]
}

pub fn layer_cases() -> Vec<GradCase> {
    vec![
        case!("linear", 10, |r| with_module(r, |i| Linear::new(i, 5, 4), &[2, 3, 5], |m, x| m.forward(x).unwrap())),
        case!("layer_norm_layer", 10, |r| with_module(r, |i| LayerNorm::new(i, 5), &[2, 3, 5], |m, x| m.forward(x).unwrap())),
        case!("batch_norm_layer", 10, |r| {
            with_module(r, |i| BatchNorm::new(i, 3, 1), &[2, 3, 4, 2], |m, x| m.forward(x, &mut Ctx::train(0)).unwrap())
        }),
        case!("conv2d_layer", 10, |r| {
            with_module(r, |i| Conv2d::new(i, 2, 3, 3), &[2, 2, 4, 5], |m, x| m.forward(x).unwrap())
        }),
        case!("self_attention", 10, |r| {
            with_module(r, |i| MultiHeadAttention::new(i, 6, 2).unwrap(), &[2, 4, 6], |m, x| {
                m.forward(x, x).unwrap()
            })
        }),
        case!("cross_attention", 10, |r| {
            let m = MultiHeadAttention::new(&mut Init::new(r.gen()), 6, 3).unwrap();
            jitter(&m, r, 0.2);
            let q = random_param(r, &[2, 4, 6], 1.0);
            let kv = random_param(r, &[2, 5, 6], 1.0);
            let w = random_var(r, &[2, 4, 6], 1.0);
            let mut t = m.parameters();
            t.extend(named(&[("query_input", &q), ("context_input", &kv)]));
            (Box::new(move || probe(&m.forward(&q, &kv).unwrap(), &w)), t)
        }),
        case!("feed_forward", 10, |r| {
            with_module(r, |i| FeedForward::new(i, 6, 2, 0.0), &[2, 3, 6], |m, x| {
                m.forward(x, &mut Ctx::train(0)).unwrap()
            })
        }),
        case!("conv_module", 10, |r| {
            with_module(r, |i| ConvModule::new(i, 4, 3, 0.0), &[2, 5, 4], |m, x| {
                m.forward(x, &mut Ctx::train(0)).unwrap()
            })
        }),
        case!("conformer_block", 10, |r| {
            with_module(r, |i| ConformerBlock::new(i, &conformer_cfg(4)).unwrap(), &[2, 5, 4], |m, x| {
                m.forward(x, &mut Ctx::train(0)).unwrap()
            })
        }),
        case!("conformer_stack", 10, |r| {
            with_module(r, |i| ConformerStack::new(i, &conformer_cfg(4)).unwrap(), &[2, 5, 4], |m, x| {
                m.forward(x, &mut Ctx::train(0)).unwrap()
            })
        }),
        case!("gru_cell", 10, |r| with_module(r, |i| GruCell::new(i, 3, 4), &[2, 5, 3], |m, x| m.forward(x).unwrap())),
        case!("bigru", 10, |r| {
            with_module(r, |i| BiGru::new(i, 3, 4, 2).unwrap(), &[2, 5, 3], |m, x| m.forward(x).unwrap())
        }),
        case!("residual_block", 10, |r| {
            with_module(r, |i| ResidualBlock::new(i, 2, 3), &[2, 2, 4, 6], |m, x| {
                m.forward(x, &mut Ctx::train(0)).unwrap()
            })
        }),
        case!("audio_encoder", 10, |r| {
            let cfg = tiny_model(Variant::AudioOnly, FusionKind::Cmaf, VisualEncoderKind::PatchProjection);
            with_module(r, |i| AudioEncoder::new(i, &cfg).unwrap(), &[2, 7, 8, 8], |m, x| {
                m.forward(x, &mut Ctx::train(0)).unwrap()
            })
        }),
        case!("patch_embedder", 10, |r| {
            let cfg = tiny_model(Variant::VisualOnly, FusionKind::Cmaf, VisualEncoderKind::PatchProjection);
            with_module(r, |i| VisualEmbedder::new(i, &cfg).unwrap(), &[2, 3, 2, 3, 2, 2], |m, x| {
                m.forward(x, &mut Ctx::train(0)).unwrap()
            })
        }),
        case!("split_pool_cnn_embedder", 10, |r| {
            let cfg = tiny_model(Variant::VisualOnly, FusionKind::Cmaf, VisualEncoderKind::SplitPoolCnn);
            with_module(r, |i| VisualEmbedder::new(i, &cfg).unwrap(), &[2, 3, 2, 3, 4, 4], |m, x| {
                m.forward(x, &mut Ctx::train(0)).unwrap()
            })
        }),
        case!("cmaf_block", 10, |r| cross_block(r, true)),
        case!("ca_block", 10, |r| cross_block(r, false)),
        case!("head", 10, |r| {
            with_module(r, |i| AccdoaHead::new(i, 6, 5, 3, 2), &[2, 3, 6], |m, x| m.forward(x).unwrap())
        }),
    ]
}

fn cross_block(r: &mut StdRng, with_self: bool) -> (Loss, Vec<NamedTensor>) {
    let m = CrossModalBlock::new(&mut Init::new(r.gen()), 6, 2, 2, 0.0, with_self).unwrap();
    jitter(&m, r, 0.2);
    let x = random_param(r, &[2, 4, 6], 1.0);
    let other = random_param(r, &[2, 4, 6], 1.0);
    let w = random_var(r, &[2, 4, 6], 1.0);
    let mut t = m.parameters();
    t.extend(named(&[("stream", &x), ("other_stream", &other)]));
    (Box::new(move || probe(&m.forward(&x, &other, &mut Ctx::train(0)).unwrap(), &w)), t)
}

fn fusion_case(r: &mut StdRng, kind: FusionKind) -> (Loss, Vec<NamedTensor>) {
    let mut cfg = tiny_model(Variant::AudioVisual, kind, VisualEncoderKind::PatchProjection);
    cfg.embed_dim = 6;
    cfg.fusion_layers = 2;
    let f = Fusion::new(&mut Init::new(r.gen()), &cfg).unwrap();
    jitter(&f, r, 0.2);
    let a = random_param(r, &[2, 4, 6], 1.0);
    let v = random_param(r, &[2, 4, 6], 1.0);
    let w = random_var(r, &[2, 4, 12], 1.0);
    let mut t = f.parameters();
    t.extend(named(&[("audio", &a), ("visual", &v)]));
    (Box::new(move || probe(&f.forward(&a, &v, &mut Ctx::train(0)).unwrap(), &w)), t)
}

pub fn fusion_cases() -> Vec<GradCase> {
    vec![
        case!("fusion_av_conformer", 10, |r| fusion_case(r, FusionKind::AvConformer)),
        case!("fusion_cmaf", 10, |r| fusion_case(r, FusionKind::Cmaf)),
        case!("fusion_ca", 10, |r| fusion_case(r, FusionKind::CrossAttention)),
        case!("fusion_gru", 10, |r| fusion_case(r, FusionKind::Gru)),
    ]
}

pub fn model_cases() -> Vec<GradCase> {
    use FusionKind::*;
    use VisualEncoderKind::*;
    vec![
        case!("model_ao", 2, |r| model_case(r, tiny_model(Variant::AudioOnly, Cmaf, PatchProjection))),
        case!("model_vo_patch", 2, |r| model_case(r, tiny_model(Variant::VisualOnly, Cmaf, PatchProjection))),
        case!("model_vo_cnn", 2, |r| model_case(r, tiny_model(Variant::VisualOnly, Cmaf, SplitPoolCnn))),
        case!("model_av_conformer", 2, |r| model_case(r, tiny_model(Variant::AudioVisual, AvConformer, PatchProjection))),
        case!("model_av_cmaf", 2, |r| model_case(r, tiny_model(Variant::AudioVisual, Cmaf, PatchProjection))),
        case!("model_av_ca", 2, |r| model_case(r, tiny_model(Variant::AudioVisual, CrossAttention, SplitPoolCnn))),
        case!("model_av_gru", 2, |r| model_case(r, tiny_model(Variant::AudioVisual, Gru, PatchProjection))),
    ]
}

pub fn all_cases() -> Vec<GradCase> {
    let mut all = op_cases();
    all.extend(layer_cases());
    all.extend(fusion_cases());
    all.extend(model_cases());
    all
}

/// Worst relative error of a case over `seeds` seeds.
pub fn run_case(case: &GradCase, seeds: u64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for seed in 0..seeds {
        let mut r = StdRng::seed_from_u64(seed * 7919 + 1);
        let (loss, tensors) = (case.build)(&mut r);
        let (err, at) = super::check_gradients(&*loss, &tensors, case.per_tensor, &mut r);
        if err >= worst.0 {
            worst = (err, format!("seed {seed}: {at}"));
        }
    }
    worst
}
