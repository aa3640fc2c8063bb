use super::accdoa::AccdoaTensor;
use super::EventLabelSet;
use crate::autodiff::Var;
use crate::error::{Result, SeldError};

/// All maps from `tracks` tracks onto `events` events that hit every event,
/// in lexicographic order. `events == 0` yields no maps.
pub fn surjections(tracks: usize, events: usize) -> Vec<Vec<usize>> {
    if events == 0 || events > tracks {
        return Vec::new();
    }
    let total = events.pow(tracks as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut map = vec![0; tracks];
        let mut rest = code;
        for slot in map.iter_mut().rev() {
            *slot = rest % events;
            rest /= events;
        }
        let mut hit = vec![false; events];
        map.iter().for_each(|&e| hit[e] = true);
        if hit.iter().all(|&h| h) {
            out.push(map);
        }
    }
    out
}

/// Target tensor chosen by the per-(frame, class) minimum over candidate
/// assignments, with the scaled sum of the minimum costs.
fn best_targets(pred: &[f64], tracks: usize, classes: usize, labels: &EventLabelSet) -> Result<(Vec<f64>, f64)> {
    let frames = labels.num_frames();
    let mut target = vec![0.0; pred.len()];
    let mut total = 0.0;
    let mut cache: Vec<Vec<Vec<usize>>> = (0..=tracks).map(|k| surjections(tracks, k)).collect();
    cache[0] = vec![Vec::new()];
    let at = |t: usize, n: usize, c: usize| ((t * tracks + n) * classes + c) * 3;
    for t in 0..frames {
        for c in 0..classes {
            let events = labels.class_events(t, c);
            if events.len() > tracks {
                return Err(SeldError::Capacity {
                    frame: t,
                    class: c,
                    count: events.len(),
                    tracks,
                });
            }
            let dirs: Vec<[f64; 3]> = events.iter().map(|e| e.doa.unit_vector()).collect();
            let sq = |n: usize, y: [f64; 3]| -> f64 {
                let o = at(t, n, c);
                (0..3).map(|a| (pred[o + a] - y[a]).powi(2)).sum()
            };
            if dirs.is_empty() {
                total += sorted_sum((0..tracks).map(|n| sq(n, [0.0; 3])).collect());
                continue;
            }
            // dist[n][e]: squared error of track n against event e
            let dist: Vec<Vec<f64>> = (0..tracks).map(|n| dirs.iter().map(|&y| sq(n, y)).collect()).collect();
            let mut best = (f64::INFINITY, 0);
            for (i, map) in cache[dirs.len()].iter().enumerate() {
                let cost = sorted_sum(map.iter().enumerate().map(|(n, &e)| dist[n][e]).collect());
                if cost < best.0 {
                    best = (cost, i);
                }
            }
            if !best.0.is_finite() {
                // non-finite prediction: keep the first candidate so the loss is NaN, not hidden
                best.1 = 0;
                best.0 = f64::NAN;
            }
            total += best.0;
            for (n, &e) in cache[dirs.len()][best.1].iter().enumerate() {
                let o = at(t, n, c);
                target[o..o + 3].copy_from_slice(&dirs[e]);
            }
        }
    }
    Ok((target, total / (3 * tracks * frames * classes) as f64))
}

/// Order-independent sum, so relabelling tracks cannot change the rounding.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn check_shape(frames: usize, batch: usize, labels: &[EventLabelSet]) -> Result<()> {
    if labels.len() != batch {
        return Err(SeldError::shape("adpit", format!("{} label sets for batch {batch}", labels.len())));
    }
    if let Some(l) = labels.iter().find(|l| l.num_frames() != frames) {
        return Err(SeldError::shape(
            "adpit",
            format!("labels have {} frames, prediction {frames}", l.num_frames()),
        ));
    }
    Ok(())
}

/// Class-wise permutation-invariant loss for a `[B, T, N, C, 3]` or
/// `[T, N, C, 3]` prediction. Each (frame, class) cell costs the mean squared
/// error against its best surjective track assignment; the result is the
/// mean over batch, frames and classes. Gradients follow the chosen
/// assignment only.
pub fn adpit_loss(pred: &Var, labels: &[EventLabelSet]) -> Result<Var> {
    let shape = pred.shape().to_vec();
    let (batch, dims) = match shape.len() {
        4 => (1, &shape[..]),
        5 => (shape[0], &shape[1..]),
        r => return Err(SeldError::shape("adpit", format!("rank {r} prediction"))),
    };
    if dims[3] != 3 || batch == 0 || dims[0] == 0 {
        return Err(SeldError::shape("adpit", format!("prediction shape {shape:?}")));
    }
    let (frames, tracks, classes) = (dims[0], dims[1], dims[2]);
    check_shape(frames, batch, labels)?;
    let per = frames * tracks * classes * 3;
    let mut target = Vec::with_capacity(per * batch);
    let mut total = 0.0;
    {
        let values = pred.value();
        for (b, l) in labels.iter().enumerate() {
            let (t, cost) = best_targets(&values[b * per..(b + 1) * per], tracks, classes, l)?;
            target.extend(t);
            total += cost;
        }
    }
    let scale = 2.0 / (3 * tracks * frames * classes * batch) as f64;
    Ok(Var::from_op(
        vec![total / batch as f64],
        Vec::new(),
        vec![pred.clone()],
        Box::new(move |g, _, parents| {
            let pv = parents[0].value();
            let gp: Vec<f64> = pv.iter().zip(&target).map(|(p, y)| g[0] * scale * (p - y)).collect();
            drop(pv);
            parents[0].accumulate(&gp);
        }),
    ))
}

/// Loss value for a plain tensor, without building a graph.
pub fn adpit_loss_value(pred: &AccdoaTensor, labels: &EventLabelSet) -> Result<f64> {
    check_shape(pred.frames, 1, std::slice::from_ref(labels))?;
    Ok(best_targets(&pred.data, pred.tracks, pred.classes, labels)?.1)
}
