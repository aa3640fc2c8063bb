use seldkit::augment::{augment_example, transform_foa, AvExample, AvcsTransform};
use seldkit::features::{estimate_doa, extract_features, StftConfig, W, X, Y, Z};
use seldkit::geometry::Doa;
use seldkit::synth::{
    blob_centroid, render_audio, render_audio_parts, render_frames, render_labels, render_scene,
    ScenarioSpec, SceneEvent,
};

const BG: [u8; 3] = [128, 128, 128];

fn event(class: usize, onset: f64, offset: f64, az: f64, rate: f64, el: f64) -> SceneEvent {
    SceneEvent { class, onset, offset, azimuth: az, azimuth_rate: rate, elevation: el }
}

/// STFT frames whose windows lie inside `[onset, offset)`.
fn active_stft_frames(onset: f64, offset: f64) -> (usize, usize) {
    let cfg = StftConfig::default();
    let lead = (cfg.window - cfg.hop) / 2;
    let sr = cfg.sample_rate as f64;
    let first = ((onset * sr + lead as f64) / cfg.hop as f64).ceil() as usize;
    let last = ((offset * sr + lead as f64 - cfg.window as f64) / cfg.hop as f64).floor() as usize;
    (first, last + 1)
}

fn horizontal_gap(a: f64, b: f64, width: f64) -> f64 {
    let d = (a - b).rem_euclid(width);
    d.min(width - d)
}

#[test]
fn static_event_is_localized_by_intensity() {
    for (az, el, class) in [(40.0, 10.0, 0), (-135.0, -30.0, 6), (170.0, 45.0, 12)] {
        let spec = ScenarioSpec::new(3, 3.0).with_event(event(class, 0.5, 2.5, az, 0.0, el));
        let feat = extract_features(&render_audio(&spec).unwrap(), &StftConfig::default()).unwrap();
        let (a, b) = active_stft_frames(0.5, 2.5);
        let est = estimate_doa(&feat, a, b).unwrap();
        assert!(est.angle_to(&Doa::new(az, el)) < 2.0, "{est:?} vs ({az}, {el})");
    }
}

#[test]
fn empty_scene_is_noise_without_direction() {
    let spec = ScenarioSpec::new(4, 3.0);
    let clip = render_audio(&spec).unwrap();
    let feat = extract_features(&clip, &StftConfig::default()).unwrap();
    // mean intensity vector over the whole clip and all bands
    let iv: Vec<f64> = (4..7).map(|c| feat.channel(c).iter().sum::<f64>() / feat.channel(c).len() as f64).collect();
    let norm = iv.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 0.02, "mean IV norm {norm}");
    assert!(render_labels(&spec).unwrap().frames.iter().all(Vec::is_empty));
    let frames = render_frames(&spec).unwrap();
    assert_eq!(frames.len(), 30);
    assert!(frames.iter().all(|f| f.pixels.iter().all(|&p| p == 128)));
}

#[test]
fn rendering_is_deterministic_per_seed() {
    let spec = ScenarioSpec::random(12, 3.0, 4, 60.0);
    assert_eq!(render_scene(&spec).unwrap(), render_scene(&spec).unwrap());
    let mut other = spec.clone();
    other.seed += 1;
    assert_ne!(render_audio(&spec).unwrap(), render_audio(&other).unwrap());
}

#[test]
fn measured_snr_matches_request() {
    for snr in [0.0, 10.0, 30.0] {
        let mut spec = ScenarioSpec::new(8, 3.0).with_event(event(3, 0.4, 2.9, 20.0, 10.0, 5.0));
        spec.snr_db = snr;
        let parts = render_audio_parts(&spec).unwrap();
        let (a, b) = (9_600, 69_600);
        let p = |v: &[f64]| v[a..b].iter().map(|x| x * x).sum::<f64>();
        let measured = 10.0 * (p(parts.clean.channel(W)) / p(parts.noise.channel(W))).log10();
        assert!((measured - snr).abs() < 1.0, "requested {snr}, measured {measured}");
        // isotropic noise: each first-order channel carries a third of W
        for c in [X, Y, Z] {
            let ratio = p(parts.noise.channel(c)) / p(parts.noise.channel(W));
            assert!((ratio - 1.0 / 3.0).abs() < 0.02);
        }
    }
}

#[test]
fn label_frames_follow_centre_time_rule() {
    let spec = ScenarioSpec::new(1, 3.0).with_event(event(2, 0.95, 1.25, 0.0, 0.0, 0.0));
    let labels = render_labels(&spec).unwrap();
    assert_eq!(labels.num_frames(), 30);
    let active: Vec<usize> = (0..30).filter(|&k| !labels.frames[k].is_empty()).collect();
    assert_eq!(active, vec![9, 10, 11, 12]);
    assert!(render_labels(&ScenarioSpec::new(1, 3.0)).unwrap().num_events() == 0);
}

#[test]
fn front_blob_sits_at_frame_centre() {
    let spec = ScenarioSpec::new(1, 1.0).with_event(event(4, 0.0, 1.0, 0.0, 0.0, 0.0));
    let frames = render_frames(&spec).unwrap();
    let (x, y) = blob_centroid(&frames[3], BG).unwrap();
    assert!(horizontal_gap(x, 224.0, 448.0) < 1.0 && (y - 112.0).abs() < 1.0, "({x}, {y})");
}

#[test]
fn blob_tracks_moving_source_across_the_seam() {
    let spec = ScenarioSpec::new(1, 3.0).with_event(event(9, 0.0, 3.0, 150.0, 40.0, -20.0));
    let frames = render_frames(&spec).unwrap();
    let labels = render_labels(&spec).unwrap();
    for (f, l) in frames.iter().zip(&labels.frames) {
        let doa = l[0].doa;
        let (x, y) = blob_centroid(f, BG).unwrap();
        let (ex, ey) = f.doa_to_pixel(&doa);
        assert!(horizontal_gap(x, ex, 448.0) < 1.0 && (y - ey).abs() < 1.0, "{doa:?}: ({x}, {y}) vs ({ex}, {ey})");
    }
    // the trajectory wraps past +180°
    assert!(labels.frames[0][0].doa.azimuth > 150.0 && labels.frames[29][0].doa.azimuth < -90.0);
}

#[test]
fn modalities_agree_on_random_single_event_scenes() {
    for seed in 0..6 {
        let mut spec = ScenarioSpec::random(seed, 3.0, 1, 60.0);
        spec.events[0].azimuth_rate = 0.0;
        let scene = render_scene(&spec).unwrap();
        let e = spec.events[0];
        for (f, l) in scene.frames.iter().zip(&scene.labels.frames) {
            if let Some(ev) = l.first() {
                let (x, y) = blob_centroid(f, BG).unwrap();
                let (ex, ey) = f.doa_to_pixel(&ev.doa);
                assert!(horizontal_gap(x, ex, 448.0) < 1.0 && (y - ey).abs() < 1.0);
            }
        }
        let feat = extract_features(&scene.audio, &StftConfig::default()).unwrap();
        let (a, b) = active_stft_frames(e.onset, e.offset);
        let est = estimate_doa(&feat, a, b).unwrap();
        assert!(est.angle_to(&Doa::new(e.azimuth, e.elevation)) < 2.0, "seed {seed}");
    }
}

#[test]
fn augmenting_a_scene_equals_rendering_the_transformed_scene() {
    let spec = ScenarioSpec::random(31, 3.0, 3, 60.0);
    let scene = render_scene(&spec).unwrap();
    let parts = render_audio_parts(&spec).unwrap();
    let ex = AvExample { audio: scene.audio, labels: scene.labels, frames: scene.frames };
    for t in AvcsTransform::all() {
        let aug = augment_example(&ex, t).unwrap();
        let direct = render_scene(&spec.transformed(t)).unwrap();
        // the event mixture matches sample for sample; the isotropic noise
        // only in distribution
        let clean = transform_foa(&parts.clean, t);
        let direct_parts = render_audio_parts(&spec.transformed(t)).unwrap();
        let power = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        for c in 0..4 {
            let diff = clean.channel(c).iter().zip(direct_parts.clean.channel(c)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-9, "{t} channel {c}: {diff}");
            let ratio = power(transform_foa(&parts.noise, t).channel(c)) / power(direct_parts.noise.channel(c));
            assert!((ratio - 1.0).abs() < 0.03, "{t} channel {c}: noise power ratio {ratio}");
        }
        assert_eq!(aug.audio.channel(W), direct.audio.channel(W));
        for (a, b) in aug.labels.frames.iter().zip(&direct.labels.frames) {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                assert_eq!((x.class, x.source), (y.class, y.source));
                assert!(x.doa.angle_to(&y.doa) < 1e-9);
            }
        }
        for (a, b) in aug.frames.iter().zip(&direct.frames) {
            assert!(a.pixels.iter().zip(&b.pixels).all(|(p, q)| p.abs_diff(*q) <= 1), "{t}");
        }
    }
}
