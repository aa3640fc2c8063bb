mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seldkit::augment::{augment_example, AvExample, AvcsTransform};
use seldkit::autodiff::no_grad;
use seldkit::features::{estimate_doa, extract_features, FoaClip, StftConfig};
use seldkit::geometry::Doa;
use seldkit::harness::{chunk_dataset, evaluate_clips, model_input, ChunkMode, Clip, RunConfig, Trainer};
use seldkit::labels::{adpit_loss_value, AccdoaTensor, Event, EventLabelSet};
use seldkit::metrics::{match_frame, seld_score};
use seldkit::model::{FusionKind, ModelConfig, SeldModel, Variant};
use seldkit::nn::Ctx;
use seldkit::synth::{blob_centroid, render_scene, ScenarioSpec};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// (ER, F1 %, LE °, LR %, printed SELD) of the published results table.
const PUBLISHED: [(f64, f64, f64, f64, f64); 11] = [
    (0.57, 40.5, 33.2, 55.3, 0.45),
    (0.52, 46.4, 16.9, 60.2, 0.39),
    (0.54, 41.3, 31.6, 53.4, 0.44),
    (0.51, 49.5, 15.8, 60.2, 0.38),
    (0.55, 34.7, 30.4, 47.8, 0.47),
    (0.50, 49.4, 16.2, 56.8, 0.38),
    (0.52, 48.0, 16.2, 60.8, 0.38),
    (1.03, 0.9, 103.0, 11.4, 0.87),
    (0.51, 50.2, 15.4, 56.4, 0.38),
    (0.57, 29.9, 22.0, 47.7, 0.48),
    (1.07, 14.3, 48.0, 35.5, 0.71),
];

fn published_scores_close() -> Outcome {
    let mut worst = 0.0f64;
    for (er, f1, le, lr, printed) in PUBLISHED {
        let s = seld_score(er, f1 / 100.0, le, lr / 100.0).map_err(|e| e.to_string())?;
        worst = worst.max((s - printed).abs());
    }
    check(worst <= 0.005, format!("{} rows, worst |diff| {worst:.4}", PUBLISHED.len()))
}

fn full_size_shapes() -> Outcome {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = 3 * 24_000;
    let noise = |rng: &mut ChaCha8Rng| (0..samples).map(|_| rng.gen_range(-0.1..0.1)).collect::<Vec<f64>>();
    let clip = FoaClip::new([noise(&mut rng), noise(&mut rng), noise(&mut rng), noise(&mut rng)], 24_000).map_err(|e| e.to_string())?;
    let feat = extract_features(&clip, &StftConfig::default()).map_err(|e| e.to_string())?;
    let feat_shape = [feat.channels, feat.frames, feat.mel_bins];
    let model = SeldModel::new(&cfg, 1).map_err(|e| e.to_string())?;
    let frames = vec![seldkit::augment::EquirectFrame::filled(cfg.frame_width, cfg.frame_height, [90, 120, 150]).unwrap(); 30];
    let mut examples = vec![seldkit::harness::Example {
        source: seldkit::harness::ChunkRef { clip: 0, start: 0, transform: AvcsTransform::IDENTITY },
        features: feat,
        frames,
        labels: EventLabelSet::empty(30),
    }];
    let out = no_grad(|| {
        let input = model_input(&model, &mut examples)?;
        model.forward_parts(&input, &mut Ctx::eval())
    })
    .map_err(|e| e.to_string())?;
    let audio = out.audio.as_ref().map(|a| a.shape().to_vec()).unwrap_or_default();
    let fused = out.fused.shape().to_vec();
    let head = out.accdoa.shape().to_vec();
    let ok = feat_shape == [7, 480, 128] && audio == [1, 30, 512] && fused == [1, 30, 1024] && head == [1, 30, 3, 13, 3];
    check(ok, format!("features {feat_shape:?} audio {audio:?} fused {fused:?} head {head:?}"))
}

fn gradient_suite() -> Outcome {
    let cases = common::cases::all_cases();
    let mut worst = (0.0f64, String::new());
    let mut failures = Vec::new();
    for case in &cases {
        let (err, at) = common::cases::run_case(case, 10);
        if !(err < common::TOLERANCE) {
            failures.push(format!("{} {err:.2e} ({at})", case.name));
        }
        if err >= worst.0 {
            worst = (err, case.name.to_string());
        }
    }
    let detail = format!("{} cases x 10 seeds, worst {:.2e} in {}", cases.len(), worst.0, worst.1);
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; failing: {}", failures.join(", ")))
    }
}

fn unit(doa: &Doa) -> [f64; 3] {
    let (a, e) = (doa.azimuth.to_radians(), doa.elevation.to_radians());
    [a.cos() * e.cos(), a.sin() * e.cos(), e.sin()]
}

/// Every map of `tracks` tracks onto `k` events that hits each event.
fn surjections(tracks: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let total = k.pow(tracks as u32);
    for code in 0..total {
        let mut c = code;
        let m: Vec<usize> = (0..tracks)
            .map(|_| {
                let e = c % k;
                c /= k;
                e
            })
            .collect();
        if m.iter().copied().collect::<BTreeSet<_>>().len() == k {
            out.push(m);
        }
    }
    out
}

fn brute_force_adpit(pred: &AccdoaTensor, labels: &EventLabelSet) -> f64 {
    let mut total = 0.0;
    for t in 0..pred.frames {
        for c in 0..pred.classes {
            let mut ev: Vec<&Event> = labels.frames[t].iter().filter(|e| e.class == c).collect();
            ev.sort_by_key(|e| e.source);
            let targets: Vec<[f64; 3]> = ev.iter().map(|e| unit(&e.doa)).collect();
            let mse = |target: &dyn Fn(usize) -> [f64; 3]| -> f64 {
                let s: f64 = (0..pred.tracks)
                    .map(|n| {
                        let (p, q) = (pred.get(t, n, c), target(n));
                        (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>()
                    })
                    .sum();
                s / (3 * pred.tracks) as f64
            };
            total += if targets.is_empty() {
                mse(&|_| [0.0; 3])
            } else {
                surjections(pred.tracks, targets.len()).iter().map(|m| mse(&|n| targets[m[n]])).fold(f64::INFINITY, f64::min)
            };
        }
    }
    total / (pred.frames * pred.classes) as f64
}

fn adpit_matches_enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (tracks, classes) = (3, 13);
    let mut worst = 0.0f64;
    let mut permutation_exact = true;
    for _ in 0..100 {
        let frames = rng.gen_range(1..=3);
        let mut labels = EventLabelSet::empty(frames);
        for t in 0..frames {
            for c in 0..classes {
                if rng.gen_bool(0.3) {
                    for s in 0..rng.gen_range(1..=3u32) {
                        labels.push(t, Event::new(c, s, rng.gen_range(-180.0..180.0), rng.gen_range(-90.0..=90.0)));
                    }
                }
            }
        }
        let data = (0..frames * tracks * classes * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pred = AccdoaTensor::from_vec(frames, tracks, classes, data).unwrap();
        let ours = adpit_loss_value(&pred, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((ours - brute_force_adpit(&pred, &labels)).abs());
        for perm in [[1, 0, 2], [2, 0, 1], [0, 2, 1], [1, 2, 0], [2, 1, 0]] {
            let mut p = AccdoaTensor::zeros(frames, tracks, classes);
            for t in 0..frames {
                for n in 0..tracks {
                    for c in 0..classes {
                        p.set(t, perm[n], c, pred.get(t, n, c));
                    }
                }
            }
            permutation_exact &= adpit_loss_value(&p, &labels).map_err(|e| e.to_string())? == ours;
        }
    }
    check(worst <= 1e-9 && permutation_exact, format!("100 instances, worst |diff| {worst:.1e}, permutation invariant {permutation_exact}"))
}

fn trainability() -> Outcome {
    let budget = Duration::from_secs(15 * 60);
    let mut lines = Vec::new();
    let mut ok = true;
    for fusion in [FusionKind::AvConformer, FusionKind::Cmaf, FusionKind::CrossAttention, FusionKind::Gru] {
        let mut cfg = RunConfig::desk(Variant::AudioVisual, fusion);
        cfg.avcs = false;
        cfg.seed = 1;
        let stft = cfg.stft();
        let clips: Vec<Clip> = (0..4)
            .map(|i| {
                let scene = render_scene(&ScenarioSpec::random(500 + i, 3.0, 2, 40.0)).unwrap();
                Clip::from_scene(&format!("scene{i}"), &scene, &stft).unwrap()
            })
            .collect();
        let examples = chunk_dataset(&clips, &cfg.data, ChunkMode::Train, false, &stft).map_err(|e| e.to_string())?;
        let mut trainer = Trainer::new(SeldModel::new(&cfg.model, cfg.seed).map_err(|e| e.to_string())?, 1e-3, cfg.seed);
        let start = Instant::now();
        let mut reached = None;
        let mut f1 = 0.0;
        for step in 1..=500 {
            trainer.step(&mut examples.clone()).map_err(|e| e.to_string())?;
            if step % 25 == 0 {
                f1 = evaluate_clips(&trainer.model, &clips, &cfg).map_err(|e| e.to_string())?.f1;
                if f1 >= 0.9 {
                    reached = Some(step);
                    break;
                }
            }
        }
        let elapsed = start.elapsed();
        ok &= reached.is_some() && elapsed < budget;
        lines.push(match reached {
            Some(step) => format!("{fusion} F1 {f1:.3} at step {step} in {:.0}s", elapsed.as_secs_f64()),
            None => format!("{fusion} F1 {f1:.3} after 500 steps in {:.0}s", elapsed.as_secs_f64()),
        });
    }
    check(ok, lines.join("; "))
}

fn horizontal_gap(a: f64, b: f64, width: f64) -> f64 {
    let d = (a - b).rem_euclid(width);
    d.min(width - d)
}

fn transforms_are_equivariant() -> Outcome {
    let stft = StftConfig::default();
    let per_label = stft.sample_rate as usize / stft.hop / 10;
    let lead = (stft.window - stft.hop) / 2;
    let (mut worst_deg, mut worst_px, mut doa_checks, mut px_checks) = (0.0f64, 0.0f64, 0, 0);
    for seed in 0..20u64 {
        let spec = ScenarioSpec::random(900 + seed, 3.0, 1, 60.0);
        let e = spec.events[0];
        let scene = render_scene(&spec).map_err(|e| e.to_string())?;
        let ex = AvExample { audio: scene.audio, labels: scene.labels, frames: scene.frames };
        // STFT frames whose windows lie inside the event
        let sr = stft.sample_rate as f64;
        let first = ((e.onset * sr + lead as f64) / stft.hop as f64).ceil() as usize;
        let end = ((e.offset * sr + lead as f64 - stft.window as f64) / stft.hop as f64).floor() as usize + 1;
        for t in AvcsTransform::all() {
            let aug = augment_example(&ex, t).map_err(|e| e.to_string())?;
            let feat = extract_features(&aug.audio, &stft).map_err(|e| e.to_string())?;
            for (i, events) in aug.labels.frames.iter().enumerate() {
                let Some(ev) = events.first() else { continue };
                let (a, b) = (i * per_label, (i + 1) * per_label);
                if a >= first && b <= end {
                    let est = estimate_doa(&feat, a, b).ok_or("no intensity estimate")?;
                    worst_deg = worst_deg.max(est.angle_to(&ev.doa));
                    doa_checks += 1;
                }
                let frame = &aug.frames[i];
                let (x, y) = blob_centroid(frame, [128, 128, 128]).ok_or("no blob")?;
                let (ex_, ey) = frame.doa_to_pixel(&ev.doa);
                worst_px = worst_px.max(horizontal_gap(x, ex_, frame.width as f64).max((y - ey).abs()));
                px_checks += 1;
            }
        }
    }
    check(
        worst_deg < 1.0 && worst_px < 1.0 && doa_checks > 0,
        format!("20 scenes x 8 transforms: worst DOA error {worst_deg:.3} deg over {doa_checks} frames, worst centroid error {worst_px:.3} px over {px_checks} frames"),
    )
}

fn exhaustive_total(refs: &[Doa], preds: &[Doa]) -> f64 {
    let (small, large) = if refs.len() <= preds.len() { (refs, preds) } else { (preds, refs) };
    if small.is_empty() {
        return 0.0;
    }
    // injective maps small -> large enumerated through permutations of `large`
    let mut idx: Vec<usize> = (0..large.len()).collect();
    let mut best = f64::INFINITY;
    permute(&mut idx, 0, &mut |p| {
        let total: f64 = small.iter().zip(p).map(|(s, &j)| s.angle_to(&large[j])).sum();
        best = best.min(total);
    });
    best
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

fn hungarian_matches_exhaustive() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let doa = |rng: &mut ChaCha8Rng| Doa::new(rng.gen_range(-180.0..180.0), rng.gen_range(-90.0..=90.0));
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let refs: Vec<Doa> = (0..rng.gen_range(0..=3)).map(|_| doa(&mut rng)).collect();
        let preds: Vec<Doa> = (0..rng.gen_range(0..=3)).map(|_| doa(&mut rng)).collect();
        let m = match_frame(&refs, &preds);
        if m.pairs.len() != refs.len().min(preds.len()) {
            return Err(format!("{} pairs for {} refs and {} preds", m.pairs.len(), refs.len(), preds.len()));
        }
        worst = worst.max((m.total_angle() - exhaustive_total(&refs, &preds)).abs());
    }
    check(worst <= 1e-9, format!("1000 frames, worst |diff| {worst:.1e} deg"))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, &str, fn() -> Outcome); 7] = [
        ("A1", "published score closure", published_scores_close),
        ("A2", "full-size shape law", full_size_shapes),
        ("A3", "finite-difference gradients", gradient_suite),
        ("A4", "ADPIT against enumeration", adpit_matches_enumeration),
        ("A5", "overfit four scenes per fusion", trainability),
        ("A6", "AVCS equivariance", transforms_are_equivariant),
        ("A7", "Hungarian against exhaustive", hungarian_matches_exhaustive),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(d) => format!("{id} PASS {name}: {d} [{secs:.1}s]"),
            Err(d) => format!("{id} FAIL {name}: {d} [{secs:.1}s]"),
        };
        // straight to the handle so the lines survive output capture
        let _ = writeln!(std::io::stderr(), "{line}");
        if outcome.is_err() {
            failed.push(line);
        }
    }
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}
