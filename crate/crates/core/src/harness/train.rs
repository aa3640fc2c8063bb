use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::info;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::dataset::{chunk_index, load_clips, materialize_all, ChunkMode, ChunkRef, Clip, Example};
use super::RunConfig;
use crate::autodiff::no_grad;
use crate::error::{Result, SeldError};
use crate::labels::{adpit_loss, decode_predictions, AccdoaTensor, EventLabelSet};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{features_batch, ModelInput, SeldModel, Variant};
use crate::nn::{load_checkpoint, lr_schedule, save_checkpoint, Adam, AdamConfig, Ctx, Module, NamedTensor};

const PRETRAIN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Stacks examples into model input. Video frames are moved out of the
/// examples.
pub fn model_input(model: &SeldModel, examples: &mut [Example]) -> Result<ModelInput> {
    let cfg = &model.config;
    let audio = match cfg.uses_audio() {
        true => Some(features_batch(&examples.iter().map(|e| &e.features).collect::<Vec<_>>())?),
        false => None,
    };
    let visual = match cfg.uses_visual() {
        true => {
            let frames: Vec<_> = examples.iter_mut().map(|e| std::mem::take(&mut e.frames)).collect();
            Some(model.visual_batch(&frames)?)
        }
        false => None,
    };
    Ok(ModelInput { audio, visual })
}

/// A model with its optimizer; each step is one Adam update on one batch.
pub struct Trainer {
    pub model: SeldModel,
    pub optimizer: Adam,
    params: Vec<NamedTensor>,
    seed: u64,
}

impl Trainer {
    pub fn new(model: SeldModel, lr: f64, seed: u64) -> Self {
        let params = model.parameters();
        Self {
            model,
            optimizer: Adam::new(AdamConfig { lr, ..AdamConfig::default() }),
            params,
            seed,
        }
    }

    pub fn steps(&self) -> u64 {
        self.optimizer.step
    }

    /// Returns the batch loss before the update.
    pub fn step(&mut self, batch: &mut [Example]) -> Result<f64> {
        let labels: Vec<EventLabelSet> = batch.iter().map(|e| e.labels.clone()).collect();
        let input = model_input(&self.model, batch)?;
        self.model.zero_grad();
        let mut ctx = Ctx::train(self.seed.wrapping_mul(PRETRAIN_SALT).wrapping_add(self.optimizer.step));
        let out = self.model.forward(&input, &mut ctx)?;
        let loss = adpit_loss(&out, &labels)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(SeldError::Diverged(format!(
                "loss {value} at step {} (lr {})",
                self.optimizer.step + 1,
                self.optimizer.config.lr
            )));
        }
        loss.backward()?;
        self.optimizer.step(&self.params).map_err(|e| match e {
            SeldError::Optimizer { param } => SeldError::Diverged(format!(
                "non-finite gradient for `{param}` at step {} with loss {value}",
                self.optimizer.step + 1
            )),
            e => e,
        })?;
        Ok(value)
    }
}

/// Per-clip predictions from non-overlapping test chunks, trimmed to each
/// clip's length.
pub fn predict_clips(model: &SeldModel, clips: &[Clip], cfg: &RunConfig) -> Result<Vec<EventLabelSet>> {
    let stft = cfg.stft();
    let chunk = cfg.data.chunk_frames();
    let refs = chunk_index(clips, &cfg.data, ChunkMode::Test, false);
    let mut out: Vec<EventLabelSet> = clips.iter().map(|c| EventLabelSet::empty(c.label_frames())).collect();
    for batch_refs in refs.chunks(cfg.optim.batch) {
        let mut batch = materialize_all(clips, batch_refs, chunk, &stft, cfg.data.workers)?;
        let input = model_input(model, &mut batch)?;
        let y = no_grad(|| model.forward(&input, &mut Ctx::eval()))?;
        for (r, tensor) in batch_refs.iter().zip(AccdoaTensor::from_var(&y)?) {
            let decoded = decode_predictions(&tensor, &cfg.decode);
            let dst = &mut out[r.clip].frames;
            let end = (r.start + chunk).min(dst.len());
            for (t, events) in (r.start..end).zip(decoded.frames) {
                dst[t] = events;
            }
        }
    }
    Ok(out)
}

fn concatenated(sets: impl IntoIterator<Item = EventLabelSet>) -> EventLabelSet {
    EventLabelSet {
        frames: sets.into_iter().flat_map(|s| s.frames).collect(),
    }
}

/// Scores every label frame of `clips` as one sequence.
pub fn evaluate_clips(model: &SeldModel, clips: &[Clip], cfg: &RunConfig) -> Result<MetricsReport> {
    let preds = predict_clips(model, clips, cfg)?;
    let refs = concatenated(clips.iter().map(|c| c.labels.clone()));
    evaluate(&refs, &concatenated(preds), &cfg.eval)
}

/// Copies tensors under `prefix` whose names and shapes match. Returns the
/// number copied.
pub fn copy_matching(src: &[NamedTensor], dst: &[NamedTensor], prefix: &str) -> usize {
    let mut copied = 0;
    for s in src.iter().filter(|t| t.name.starts_with(prefix)) {
        if let Some(d) = dst.iter().find(|d| d.name == s.name && d.var.shape() == s.var.shape()) {
            d.var.value_mut().copy_from_slice(&s.var.value());
            copied += 1;
        }
    }
    copied
}

struct EpochStats {
    loss: f64,
    steps: usize,
}

/// One shuffled pass; stops early once `max_steps` updates have been made.
fn run_epoch(
    trainer: &mut Trainer,
    clips: &[Clip],
    index: &mut [ChunkRef],
    cfg: &RunConfig,
    rng: &mut StdRng,
    epoch: usize,
) -> Result<EpochStats> {
    let stft = cfg.stft();
    let chunk = cfg.data.chunk_frames();
    index.shuffle(rng);
    let (mut sum, mut steps) = (0.0, 0);
    for batch_refs in index.chunks(cfg.optim.batch) {
        if cfg.optim.max_steps.is_some_and(|m| trainer.steps() >= m as u64) {
            break;
        }
        let mut batch = materialize_all(clips, batch_refs, chunk, &stft, cfg.data.workers)?;
        let loss = trainer.step(&mut batch).map_err(|e| match e {
            SeldError::Diverged(msg) => {
                let names: Vec<String> = batch_refs
                    .iter()
                    .map(|r| format!("{}@{}[{}]", clips[r.clip].name, r.start, r.transform))
                    .collect();
                SeldError::Diverged(format!("epoch {epoch}: {msg}; batch {}", names.join(" ")))
            }
            e => e,
        })?;
        sum += loss;
        steps += 1;
    }
    Ok(EpochStats {
        loss: if steps > 0 { sum / steps as f64 } else { f64::NAN },
        steps,
    })
}

fn training_index(clips: &[Clip], cfg: &RunConfig) -> Result<Vec<ChunkRef>> {
    let index = chunk_index(clips, &cfg.data, ChunkMode::Train, cfg.avcs);
    if index.is_empty() {
        return Err(SeldError::Input(format!(
            "no clip is at least {} s long",
            cfg.data.chunk_seconds
        )));
    }
    Ok(index)
}

/// Trains an audio-only copy of the model on the pre-training clips and
/// moves its audio encoder into `model`.
fn pretrain_audio(model: &SeldModel, dir: &Path, cfg: &RunConfig) -> Result<()> {
    if !cfg.model.uses_audio() {
        return Err(SeldError::Config("pre-training needs a model with an audio branch".into()));
    }
    let clips = load_clips(dir, &cfg.stft(), false)?;
    let mut aux_cfg = cfg.model.clone();
    aux_cfg.variant = Variant::AudioOnly;
    let seed = cfg.seed ^ PRETRAIN_SALT;
    let mut trainer = Trainer::new(SeldModel::new(&aux_cfg, seed)?, cfg.optim.base_lr, seed);
    let mut index = training_index(&clips, cfg)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let run = RunConfig {
        optim: crate::harness::OptimConfig { max_steps: None, ..cfg.optim.clone() },
        ..cfg.clone()
    };
    for epoch in 1..=cfg.optim.pretrain_epochs {
        let stats = run_epoch(&mut trainer, &clips, &mut index, &run, &mut rng, epoch)?;
        info!("pretrain epoch {epoch}: loss {:.6} over {} steps", stats.loss, stats.steps);
    }
    let copied = copy_matching(&trainer.model.state(), &model.state(), "audio.");
    info!("copied {copied} pre-trained audio tensors");
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    pub steps: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch number with the lowest SELD score; earliest on ties.
    pub best_epoch: usize,
    /// Metrics of the best epoch.
    pub metrics: MetricsReport,
    pub wall_clock: Duration,
    /// The run configuration as INI text.
    pub config: String,
}

impl RunReport {
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>5} {:>10} {:>9} {:>6} {:>6} {:>7} {:>6} {:>6}",
            "epoch", "loss", "lr", "ER", "F1", "LE", "LR", "SELD"
        );
        for e in &self.epochs {
            let m = &e.metrics;
            let _ = writeln!(
                s,
                "{:>5} {:>10.6} {:>9.2e} {:>6.3} {:>6.3} {:>7.2} {:>6.3} {:>6.3}{}",
                e.epoch,
                e.loss,
                e.lr,
                m.er,
                m.f1,
                m.le,
                m.lr,
                m.seld,
                if e.epoch == self.best_epoch { " *" } else { "" }
            );
        }
        let _ = writeln!(s, "\nbest epoch {}", self.best_epoch);
        s.push_str(&self.metrics.render());
        let _ = writeln!(s, "best_epoch={}", self.best_epoch);
        let _ = writeln!(s, "epochs={}", self.epochs.len());
        let _ = writeln!(s, "wall_clock_s={:.3}", self.wall_clock.as_secs_f64());
        for e in &self.epochs {
            let _ = writeln!(s, "loss.{}={:.6}", e.epoch, e.loss);
        }
        for e in &self.epochs {
            let _ = writeln!(s, "seld.{}={:.6}", e.epoch, e.metrics.seld);
        }
        let _ = writeln!(s, "\n# config");
        s.push_str(&self.config);
        s
    }
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.ckpt"))
}

/// Trains on `train_clips`, scoring `test_clips` after every epoch. The
/// returned model holds the weights of the best epoch.
pub fn train_on(cfg: &RunConfig, train_clips: &[Clip], test_clips: &[Clip]) -> Result<(RunReport, SeldModel)> {
    cfg.validate()?;
    let started = Instant::now();
    let model = SeldModel::new(&cfg.model, cfg.seed)?;
    if let Some(dir) = &cfg.optim.pretrain_dir {
        pretrain_audio(&model, dir, cfg)?;
    }
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|e| SeldError::io(dir, e))?;
    }
    let mut trainer = Trainer::new(model, cfg.optim.base_lr, cfg.seed);
    let mut index = training_index(train_clips, cfg)?;
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    for epoch in 1..=cfg.optim.epochs {
        let lr = lr_schedule(epoch - 1, cfg.optim.base_lr);
        trainer.optimizer.set_lr(lr);
        let stats = run_epoch(&mut trainer, train_clips, &mut index, cfg, &mut rng, epoch)?;
        if stats.steps == 0 {
            break;
        }
        let metrics = evaluate_clips(&trainer.model, test_clips, cfg)?;
        info!(
            "epoch {epoch}: loss {:.6} lr {lr:.2e} seld {:.4} ({} steps)",
            stats.loss, metrics.seld, stats.steps
        );
        let state = trainer.model.state();
        if let Some(dir) = &cfg.output_dir {
            save_checkpoint(&checkpoint_path(dir, epoch), &state)?;
        }
        if best.as_ref().map_or(true, |b| metrics.seld < b.1) {
            best = Some((epoch, metrics.seld, state.iter().map(|t| t.var.to_vec()).collect()));
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            loss: stats.loss,
            steps: stats.steps,
            metrics,
        });
    }
    let (best_epoch, _, weights) = best.ok_or_else(|| SeldError::Config("no training step was taken".into()))?;
    for (t, w) in trainer.model.state().iter().zip(weights) {
        t.var.value_mut().copy_from_slice(&w);
    }
    let report = RunReport {
        metrics: epochs[best_epoch - 1].metrics.clone(),
        epochs,
        best_epoch,
        wall_clock: started.elapsed(),
        config: cfg.to_ini_string(),
    };
    if let Some(dir) = &cfg.output_dir {
        save_checkpoint(&dir.join("best.ckpt"), &trainer.model.state())?;
        let path = dir.join("report.txt");
        fs::write(&path, report.render()).map_err(|e| SeldError::io(&path, e))?;
    }
    Ok((report, trainer.model))
}

/// Loads the configured clips and trains. Test clips default to the
/// training directory.
pub fn train(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let stft = cfg.stft();
    let with_frames = cfg.model.uses_visual();
    let train_clips = load_clips(&cfg.data.train_dir, &stft, with_frames)?;
    let test_clips = match &cfg.data.test_dir {
        Some(dir) => load_clips(dir, &stft, with_frames)?,
        None => train_clips.clone(),
    };
    Ok(train_on(cfg, &train_clips, &test_clips)?.0)
}

/// Scores a checkpoint on the configured test clips.
pub fn evaluate_run(checkpoint: &Path, cfg: &RunConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let model = SeldModel::new(&cfg.model, cfg.seed)?;
    load_checkpoint(checkpoint, &model.state())?;
    let clips = load_clips(cfg.data.test_dir(), &cfg.stft(), cfg.model.uses_visual())?;
    evaluate_clips(&model, &clips, cfg)
}
