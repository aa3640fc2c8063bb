use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::error::{Result, SeldError};
use crate::features::StftConfig;
use crate::labels::{DecodeConfig, LABEL_RATE};
use crate::metrics::EvalConfig;
use crate::model::{FusionKind, ModelConfig, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_dir: PathBuf,
    /// Falls back to `train_dir` when unset.
    pub test_dir: Option<PathBuf>,
    pub chunk_seconds: f64,
    pub train_hop: f64,
    pub test_hop: f64,
    /// Threads preparing batches; 0 uses the available parallelism.
    pub workers: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_dir: PathBuf::from("data/train"),
            test_dir: None,
            chunk_seconds: 3.0,
            train_hop: 0.5,
            test_hop: 3.0,
            workers: 0,
        }
    }
}

impl DataConfig {
    pub fn test_dir(&self) -> &Path {
        self.test_dir.as_deref().unwrap_or(&self.train_dir)
    }

    pub fn chunk_frames(&self) -> usize {
        to_label_frames(self.chunk_seconds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Stops training after this many updates when set.
    pub max_steps: Option<usize>,
    /// Clips used to pre-train the audio branch before the main run.
    pub pretrain_dir: Option<PathBuf>,
    pub pretrain_epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 3e-4,
            batch: 32,
            epochs: 50,
            max_steps: None,
            pretrain_dir: None,
            pretrain_epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Checkpoints and reports go here when set.
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub avcs: bool,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            avcs: true,
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn to_label_frames(seconds: f64) -> usize {
    (seconds * LABEL_RATE).round() as usize
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| SeldError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(SeldError::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn optional_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Desk-scale run: reduced model widths, small batches.
    pub fn desk(variant: Variant, fusion: FusionKind) -> Self {
        Self {
            model: ModelConfig::desk(variant, fusion),
            optim: OptimConfig {
                batch: 4,
                ..OptimConfig::default()
            },
            ..Self::default()
        }
    }

    /// Sets one field from a `section.key` name; top-level keys have no
    /// section.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "output_dir" => self.output_dir = optional_path(v),
            "data.train_dir" => self.data.train_dir = PathBuf::from(v),
            "data.test_dir" => self.data.test_dir = optional_path(v),
            "data.chunk_seconds" => self.data.chunk_seconds = parse(key, v)?,
            "data.train_hop" => self.data.train_hop = parse(key, v)?,
            "data.test_hop" => self.data.test_hop = parse(key, v)?,
            "data.workers" => self.data.workers = parse(key, v)?,
            "model.preset" => {
                let (variant, fusion) = (m.variant, m.fusion);
                *m = match v {
                    "full" => ModelConfig { variant, fusion, ..ModelConfig::default() },
                    "desk" => ModelConfig::desk(variant, fusion),
                    _ => return Err(SeldError::Config(format!("`{key}`: expected full or desk, got `{v}`"))),
                };
            }
            "model.variant" => m.variant = v.parse()?,
            "model.fusion" => m.fusion = v.parse()?,
            "model.visual_encoder" => m.visual_encoder = v.parse()?,
            "model.embed_dim" => m.embed_dim = parse(key, v)?,
            "model.fusion_layers" => m.fusion_layers = parse(key, v)?,
            "model.heads" => m.heads = parse(key, v)?,
            "model.tracks" => m.tracks = parse(key, v)?,
            "model.classes" => m.classes = parse(key, v)?,
            "model.cnn_channels" => m.cnn_channels = parse_list(key, v)?,
            "model.conv_kernel" => m.conv_kernel = parse(key, v)?,
            "model.ff_mult" => m.ff_mult = parse(key, v)?,
            "model.dropout" => m.dropout = parse(key, v)?,
            "model.gru_layers" => m.gru_layers = parse(key, v)?,
            "model.mel_bins" => m.mel_bins = parse(key, v)?,
            "model.frame_width" => m.frame_width = parse(key, v)?,
            "model.frame_height" => m.frame_height = parse(key, v)?,
            "model.patch" => m.patch = parse(key, v)?,
            "model.cnn_pool" => m.cnn_pool = parse(key, v)?,
            "model.visual_channels" => m.visual_channels = parse_list(key, v)?,
            "optim.base_lr" => self.optim.base_lr = parse(key, v)?,
            "optim.batch" => self.optim.batch = parse(key, v)?,
            "optim.epochs" => self.optim.epochs = parse(key, v)?,
            "optim.max_steps" => self.optim.max_steps = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "optim.pretrain_dir" => self.optim.pretrain_dir = optional_path(v),
            "optim.pretrain_epochs" => self.optim.pretrain_epochs = parse(key, v)?,
            "augment.avcs" => self.avcs = parse_bool(key, v)?,
            "decode.activity_threshold" => self.decode.activity_threshold = parse(key, v)?,
            "decode.merge_angle" => self.decode.merge_angle = parse(key, v)?,
            "eval.threshold" => self.eval.threshold = parse(key, v)?,
            "eval.averaging" => self.eval.averaging = v.parse()?,
            _ => return Err(SeldError::Config(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    /// Applies `section.key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| SeldError::Config(format!("override `{o}`: expected section.key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Parses INI text over the defaults. A `preset` in `[model]` is applied
    /// before the other model keys.
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| SeldError::Config(e.to_string()))?;
        let mut cfg = RunConfig::default();
        let key_of = |section: Option<&str>, k: &str| match section {
            None => k.to_string(),
            Some(s) => format!("{s}.{k}"),
        };
        for (section, props) in ini.iter() {
            if let Some(p) = props.get("preset") {
                cfg.set(&key_of(section, "preset"), p)?;
            }
        }
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                if k != "preset" {
                    cfg.set(&key_of(section, k), v)?;
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SeldError::io(path, e))?;
        Self::from_ini_str(&text)
    }

    pub fn to_ini_string(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let m = &self.model;
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output_dir = {}", path(&self.output_dir));
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "train_dir = {}", self.data.train_dir.display());
        let _ = writeln!(s, "test_dir = {}", path(&self.data.test_dir));
        let _ = writeln!(s, "chunk_seconds = {}", self.data.chunk_seconds);
        let _ = writeln!(s, "train_hop = {}", self.data.train_hop);
        let _ = writeln!(s, "test_hop = {}", self.data.test_hop);
        let _ = writeln!(s, "workers = {}", self.data.workers);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "variant = {}", m.variant);
        let _ = writeln!(s, "fusion = {}", m.fusion);
        let _ = writeln!(s, "visual_encoder = {}", m.visual_encoder);
        let _ = writeln!(s, "embed_dim = {}", m.embed_dim);
        let _ = writeln!(s, "fusion_layers = {}", m.fusion_layers);
        let _ = writeln!(s, "heads = {}", m.heads);
        let _ = writeln!(s, "tracks = {}", m.tracks);
        let _ = writeln!(s, "classes = {}", m.classes);
        let _ = writeln!(s, "cnn_channels = {}", join_list(&m.cnn_channels));
        let _ = writeln!(s, "conv_kernel = {}", m.conv_kernel);
        let _ = writeln!(s, "ff_mult = {}", m.ff_mult);
        let _ = writeln!(s, "dropout = {}", m.dropout);
        let _ = writeln!(s, "gru_layers = {}", m.gru_layers);
        let _ = writeln!(s, "mel_bins = {}", m.mel_bins);
        let _ = writeln!(s, "frame_width = {}", m.frame_width);
        let _ = writeln!(s, "frame_height = {}", m.frame_height);
        let _ = writeln!(s, "patch = {}", m.patch);
        let _ = writeln!(s, "cnn_pool = {}", m.cnn_pool);
        let _ = writeln!(s, "visual_channels = {}", join_list(&m.visual_channels));
        let _ = writeln!(s, "\n[optim]");
        let _ = writeln!(s, "base_lr = {}", self.optim.base_lr);
        let _ = writeln!(s, "batch = {}", self.optim.batch);
        let _ = writeln!(s, "epochs = {}", self.optim.epochs);
        let _ = writeln!(s, "max_steps = {}", self.optim.max_steps.map(|v| v.to_string()).unwrap_or_default());
        let _ = writeln!(s, "pretrain_dir = {}", path(&self.optim.pretrain_dir));
        let _ = writeln!(s, "pretrain_epochs = {}", self.optim.pretrain_epochs);
        let _ = writeln!(s, "\n[augment]");
        let _ = writeln!(s, "avcs = {}", self.avcs);
        let _ = writeln!(s, "\n[decode]");
        let _ = writeln!(s, "activity_threshold = {}", self.decode.activity_threshold);
        let _ = writeln!(s, "merge_angle = {}", self.decode.merge_angle);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "threshold = {}", self.eval.threshold);
        let _ = writeln!(s, "averaging = {}", self.eval.averaging);
        s
    }

    /// Feature extraction settings matching the model's mel resolution.
    pub fn stft(&self) -> StftConfig {
        StftConfig {
            mel_bins: self.model.mel_bins,
            ..StftConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SeldError::Config(m));
        let d = &self.data;
        for (name, secs) in [("chunk_seconds", d.chunk_seconds), ("train_hop", d.train_hop), ("test_hop", d.test_hop)] {
            if !(secs > 0.0) {
                return bad(format!("{name} must be positive, got {secs}"));
            }
            let frames = secs * LABEL_RATE;
            if (frames - frames.round()).abs() > 1e-9 {
                return bad(format!("{name} {secs} s is not a whole number of label frames"));
            }
        }
        if self.optim.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if self.optim.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(1e-4..=1e-3).contains(&self.optim.base_lr) {
            return bad(format!("base_lr {} outside [1e-4, 1e-3]", self.optim.base_lr));
        }
        if self.model.classes != self.eval.classes {
            return bad(format!(
                "model predicts {} classes, evaluation expects {}",
                self.model.classes, self.eval.classes
            ));
        }
        if !(self.eval.threshold > 0.0) {
            return bad(format!("eval threshold {} must be positive", self.eval.threshold));
        }
        self.decode.validate()?;
        self.model.validate()?;
        let ratio = crate::harness::dataset::feature_ratio(&self.stft())?;
        if self.model.uses_audio() && self.model.audio_stride() != ratio {
            return bad(format!(
                "audio encoder stride {} must equal the {ratio} feature frames per label frame",
                self.model.audio_stride()
            ));
        }
        Ok(())
    }
}
