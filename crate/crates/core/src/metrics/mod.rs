//! Location-aware detection and class-aware localization metrics at label
//! frame resolution, with the combined SELD score.

mod hungarian;

pub use hungarian::hungarian;

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SeldError};
use crate::geometry::Doa;
use crate::labels::{EventLabelSet, NUM_CLASSES};

pub const DEFAULT_THRESHOLD: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
        })
    }
}

impl FromStr for Averaging {
    type Err = SeldError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Averaging::Macro),
            "micro" => Ok(Averaging::Micro),
            _ => Err(SeldError::Config(format!("averaging `{s}`: expected macro or micro"))),
        }
    }
}

/// Result of matching one frame's same-class events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    /// `(ref index, pred index, angle in degrees)`
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_refs: Vec<usize>,
    pub unmatched_preds: Vec<usize>,
}

impl FrameMatch {
    pub fn total_angle(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

/// Minimum total great-circle distance assignment between two direction sets.
pub fn match_frame(refs: &[Doa], preds: &[Doa]) -> FrameMatch {
    let cost: Vec<f64> = refs
        .iter()
        .flat_map(|r| preds.iter().map(move |p| r.angle_to(p)))
        .collect();
    let assignment = hungarian(&cost, refs.len(), preds.len());
    let mut out = FrameMatch::default();
    let mut taken = vec![false; preds.len()];
    for (r, a) in assignment.into_iter().enumerate() {
        match a {
            Some(p) => {
                taken[p] = true;
                out.pairs.push((r, p, cost[r * preds.len() + p]));
            }
            None => out.unmatched_refs.push(r),
        }
    }
    out.unmatched_preds = (0..preds.len()).filter(|&p| !taken[p]).collect();
    out
}

/// Raw per-class tallies.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassCounts {
    pub refs: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub matched: usize,
    pub angle_sum: f64,
}

impl ClassCounts {
    fn add(&mut self, o: &ClassCounts) {
        self.refs += o.refs;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.matched += o.matched;
        self.angle_sum += o.angle_sum;
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// Mean matched angle; 180° with no matches.
    pub fn le(&self) -> f64 {
        if self.matched == 0 {
            180.0
        } else {
            self.angle_sum / self.matched as f64
        }
    }

    pub fn lr(&self) -> f64 {
        if self.refs == 0 {
            0.0
        } else {
            self.matched as f64 / self.refs as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub counts: ClassCounts,
    pub f1: f64,
    pub le: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub er: f64,
    pub f1: f64,
    pub le: f64,
    pub lr: f64,
    pub seld: f64,
    pub averaging: Averaging,
    pub threshold: f64,
    pub frames: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub total_refs: usize,
    pub per_class: Vec<ClassMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub threshold: f64,
    pub averaging: Averaging,
    pub classes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            averaging: Averaging::Macro,
            classes: NUM_CLASSES,
        }
    }
}

/// `mean(ER, 1 − F1, LE / 180, 1 − LR)`.
pub fn seld_score(er: f64, f1: f64, le: f64, lr: f64) -> Result<f64> {
    if !(0.0..=180.0).contains(&le) {
        return Err(SeldError::Input(format!("localization error {le} outside [0, 180]")));
    }
    Ok((er + (1.0 - f1) + le / 180.0 + (1.0 - lr)) / 4.0)
}

/// Scores predictions against references frame by frame. A frame missing
/// from the shorter set counts as empty.
pub fn evaluate(refs: &EventLabelSet, preds: &EventLabelSet, cfg: &EvalConfig) -> Result<MetricsReport> {
    refs.validate(cfg.classes)?;
    preds.validate(cfg.classes)?;
    let frames = refs.num_frames().max(preds.num_frames());
    let mut counts = vec![ClassCounts::default(); cfg.classes];
    let (mut subs, mut dels, mut ins, mut total_refs) = (0, 0, 0, 0);
    let empty = Vec::new();
    for f in 0..frames {
        let r_ev = refs.frames.get(f).unwrap_or(&empty);
        let p_ev = preds.frames.get(f).unwrap_or(&empty);
        let (mut fn_f, mut fp_f) = (0, 0);
        for (c, cc) in counts.iter_mut().enumerate() {
            let r: Vec<Doa> = r_ev.iter().filter(|e| e.class == c).map(|e| e.doa).collect();
            let p: Vec<Doa> = p_ev.iter().filter(|e| e.class == c).map(|e| e.doa).collect();
            if r.is_empty() && p.is_empty() {
                continue;
            }
            let m = match_frame(&r, &p);
            let close = m.pairs.iter().filter(|x| x.2 <= cfg.threshold).count();
            let far = m.pairs.len() - close;
            let fp = m.unmatched_preds.len() + far;
            let fn_ = m.unmatched_refs.len() + far;
            cc.refs += r.len();
            cc.tp += close;
            cc.fp += fp;
            cc.fn_ += fn_;
            cc.matched += m.pairs.len();
            cc.angle_sum += m.total_angle();
            fn_f += fn_;
            fp_f += fp;
            total_refs += r.len();
        }
        subs += fn_f.min(fp_f);
        dels += fn_f.saturating_sub(fp_f);
        ins += fp_f.saturating_sub(fn_f);
    }
    if total_refs == 0 {
        return Err(SeldError::Evaluation("reference set has no events".into()));
    }
    let er = (subs + dels + ins) as f64 / total_refs as f64;
    let per_class: Vec<ClassMetrics> = counts
        .iter()
        .enumerate()
        .map(|(class, c)| ClassMetrics {
            class,
            counts: *c,
            f1: c.f1(),
            le: c.le(),
            lr: c.lr(),
        })
        .collect();
    let (f1, le, lr) = match cfg.averaging {
        Averaging::Macro => {
            let active: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.counts.refs > 0).collect();
            let n = active.len() as f64;
            (
                active.iter().map(|c| c.f1).sum::<f64>() / n,
                active.iter().map(|c| c.le).sum::<f64>() / n,
                active.iter().map(|c| c.lr).sum::<f64>() / n,
            )
        }
        Averaging::Micro => {
            let mut pooled = ClassCounts::default();
            counts.iter().for_each(|c| pooled.add(c));
            (pooled.f1(), pooled.le(), pooled.lr())
        }
    };
    Ok(MetricsReport {
        er,
        f1,
        le,
        lr,
        seld: seld_score(er, f1, le, lr)?,
        averaging: cfg.averaging,
        threshold: cfg.threshold,
        frames,
        substitutions: subs,
        deletions: dels,
        insertions: ins,
        total_refs,
        per_class,
    })
}

impl MetricsReport {
    /// Summary row, per-class rows, then `key=value` lines.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<8} {:>6} {:>6} {:>7} {:>6} {:>6}\n",
            "avg", "ER", "F1", "LE", "LR", "SELD"
        ));
        s.push_str(&format!(
            "{:<8} {:>6.3} {:>6.3} {:>7.2} {:>6.3} {:>6.3}\n",
            self.averaging.to_string(),
            self.er,
            self.f1,
            self.le,
            self.lr,
            self.seld
        ));
        s.push('\n');
        s.push_str(&format!(
            "{:<8} {:>5} {:>5} {:>5} {:>5} {:>6} {:>7} {:>6}\n",
            "class", "refs", "TP", "FP", "FN", "F1", "LE", "LR"
        ));
        for c in &self.per_class {
            s.push_str(&format!(
                "{:<8} {:>5} {:>5} {:>5} {:>5} {:>6.3} {:>7.2} {:>6.3}\n",
                c.class, c.counts.refs, c.counts.tp, c.counts.fp, c.counts.fn_, c.f1, c.le, c.lr
            ));
        }
        s.push('\n');
        s.push_str(&self.key_values());
        s
    }

    pub fn key_values(&self) -> String {
        format!(
            "averaging={}\nthreshold={}\nframes={}\nrefs={}\nsubstitutions={}\ndeletions={}\ninsertions={}\ner={:.6}\nf1={:.6}\nle={:.6}\nlr={:.6}\nseld={:.6}\n",
            self.averaging,
            self.threshold,
            self.frames,
            self.total_refs,
            self.substitutions,
            self.deletions,
            self.insertions,
            self.er,
            self.f1,
            self.le,
            self.lr,
            self.seld
        )
    }
}
