use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use seldkit::augment::{augment_example, load_frame_sequence, save_frame_sequence, AvExample, AvcsTransform};
use seldkit::error::SeldError;
use seldkit::features::{extract_features, read_wav, write_wav};
use seldkit::harness::dataset::frames_dir;
use seldkit::harness::{evaluate_run, train, write_scene, RunConfig};
use seldkit::labels::{read_label_csv, write_label_csv};
use seldkit::metrics::{evaluate, Averaging, EvalConfig};
use seldkit::synth::{render_scene, ScenarioSpec};

#[derive(Parser)]
#[command(name = "seldkit", version, about = "Audio-visual sound event localization and detection toolkit")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic scenes: WAV, frames, label CSV and a spec sidecar.
    Synth(SynthArgs),
    /// Extract 7-channel log-mel and intensity features from WAV files.
    Features(FeaturesArgs),
    /// Write rotated or flipped copies of a clip.
    Augment(AugmentArgs),
    /// Train a model and report per-epoch metrics.
    Train(RunArgs),
    /// Score a checkpoint on the test clips.
    Eval(EvalArgs),
    /// Compare a prediction CSV with a reference CSV.
    Score(ScoreArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameFormat {
    Png,
    Rgb,
}

impl FrameFormat {
    fn ext(self) -> &'static str {
        match self {
            FrameFormat::Png => "png",
            FrameFormat::Rgb => "rgb",
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seconds per scene.
    #[arg(long, default_value_t = 3.0)]
    duration: f64,
    #[arg(long, default_value_t = 3)]
    max_events: usize,
    /// Degrees.
    #[arg(long, default_value_t = 45.0)]
    max_elevation: f64,
    /// Frame width in pixels; the height is half.
    #[arg(long)]
    frame_width: Option<usize>,
    /// Render this spec file instead of random scenes.
    #[arg(long, conflicts_with_all = ["count", "seed", "duration", "max_events", "max_elevation"])]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "scene")]
    prefix: String,
    #[arg(long, value_enum, default_value_t = FrameFormat::Png)]
    frame_format: FrameFormat,
}

#[derive(Args)]
struct ConfigArgs {
    /// INI run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `-s optim.epochs=5`.
    #[arg(short = 's', long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.set)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Defaults to each input's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct AugmentArgs {
    /// Directory holding `<stem>.wav`, `<stem>.csv` and optionally `<stem>_frames/`.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    stem: String,
    #[arg(long)]
    out: PathBuf,
    /// `k,flip`: k quarter turns of azimuth, flip 0 or 1.
    #[arg(long, required_unless_present = "all_8", conflicts_with = "all_8")]
    transform: Option<AvcsTransform>,
    /// Write all eight transforms.
    #[arg(long = "all-8")]
    all_8: bool,
    #[arg(long, value_enum, default_value_t = FrameFormat::Png)]
    frame_format: FrameFormat,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    train_dir: Option<PathBuf>,
    #[arg(long)]
    test_dir: Option<PathBuf>,
    /// Checkpoint and report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = self.config.load()?;
        if let Some(d) = &self.train_dir {
            cfg.data.train_dir = d.clone();
        }
        if let Some(d) = &self.test_dir {
            cfg.data.test_dir = Some(d.clone());
        }
        if let Some(d) = &self.out {
            cfg.output_dir = Some(d.clone());
        }
        if let Some(e) = self.epochs {
            cfg.optim.epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Pool counts over classes instead of averaging per class.
    #[arg(long)]
    micro: bool,
    /// Localization threshold in degrees.
    #[arg(long, default_value_t = EvalConfig::default().threshold)]
    threshold: f64,
}

fn synth(a: &SynthArgs) -> Result<()> {
    let specs: Vec<(String, ScenarioSpec)> = match &a.spec {
        Some(path) => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string();
            vec![(stem, ScenarioSpec::load(path)?)]
        }
        None => (0..a.count)
            .map(|i| {
                let spec = ScenarioSpec::random(a.seed + i, a.duration, a.max_events, a.max_elevation);
                (format!("{}{:03}", a.prefix, i), spec)
            })
            .collect(),
    };
    for (stem, mut spec) in specs {
        if let Some(w) = a.frame_width {
            spec.frame_width = w;
            spec.frame_height = w / 2;
        }
        spec.validate()?;
        let scene = render_scene(&spec)?;
        write_scene(&a.out, &stem, &scene, a.frame_format.ext())?;
        info!("{stem}: {} events, {} frames", scene.labels.num_events(), scene.frames.len());
        println!("{}", a.out.join(&stem).display());
    }
    Ok(())
}

fn features(a: &FeaturesArgs) -> Result<()> {
    let stft = a.config.load()?.stft();
    for input in &a.inputs {
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| SeldError::Input(format!("no file name in {}", input.display())))?;
        let dir = a.out.clone().unwrap_or_else(|| input.parent().unwrap_or(Path::new(".")).to_path_buf());
        std::fs::create_dir_all(&dir).map_err(|e| SeldError::Io { path: dir.clone(), source: e })?;
        let feat = extract_features(&read_wav(input)?, &stft)?;
        let path = dir.join(format!("{stem}.feat"));
        feat.save(&path)?;
        println!("{}\tchannels={} frames={} mel_bins={}", path.display(), feat.channels, feat.frames, feat.mel_bins);
    }
    Ok(())
}

fn augment(a: &AugmentArgs) -> Result<()> {
    let frames_in = frames_dir(&a.dir, &a.stem);
    let example = AvExample {
        audio: read_wav(&a.dir.join(format!("{}.wav", a.stem)))?,
        labels: read_label_csv(&a.dir.join(format!("{}.csv", a.stem)))?,
        frames: if frames_in.is_dir() { load_frame_sequence(&frames_in)? } else { Vec::new() },
    };
    let spec_path = a.dir.join(format!("{}.ini", a.stem));
    let spec = if spec_path.exists() { Some(ScenarioSpec::load(&spec_path)?) } else { None };
    let transforms = match a.transform {
        Some(t) => vec![t],
        None => AvcsTransform::all().to_vec(),
    };
    std::fs::create_dir_all(&a.out).map_err(|e| SeldError::Io { path: a.out.clone(), source: e })?;
    for t in transforms {
        let stem = format!("{}_r{}f{}", a.stem, t.rotation_k, u8::from(t.elev_flip));
        let out = augment_example(&example, t)?;
        write_wav(&a.out.join(format!("{stem}.wav")), &out.audio)?;
        write_label_csv(&a.out.join(format!("{stem}.csv")), &out.labels)?;
        if !out.frames.is_empty() {
            save_frame_sequence(&frames_dir(&a.out, &stem), &out.frames, a.frame_format.ext())?;
        }
        if let Some(s) = &spec {
            s.transformed(t).save(&a.out.join(format!("{stem}.ini")))?;
        }
        println!("{}\ttransform={t}", a.out.join(&stem).display());
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(d) = &a.test_dir {
        cfg.data.test_dir = Some(d.clone());
    }
    print!("{}", evaluate_run(&a.checkpoint, &cfg)?.render());
    Ok(())
}

fn score(a: &ScoreArgs) -> Result<()> {
    let refs = read_label_csv(&a.reference)?;
    let preds = read_label_csv(&a.pred)?;
    if !(a.threshold > 0.0 && a.threshold <= 180.0) {
        bail!(SeldError::Input(format!("threshold {} outside (0, 180]", a.threshold)));
    }
    let cfg = EvalConfig {
        threshold: a.threshold,
        averaging: if a.micro { Averaging::Micro } else { Averaging::Macro },
        ..EvalConfig::default()
    };
    print!("{}", evaluate(&refs, &preds, &cfg)?.render());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Features(a) => features(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => {
            print!("{}", train(&a.load()?)?.render());
            Ok(())
        }
        Command::Eval(a) => eval(a),
        Command::Score(a) => score(a),
    }
}

/// 1 for bad input, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<SeldError>()) {
        Some(e) if e.is_input_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runtime_failures_exit_with_two() {
        assert_eq!(exit_code(&SeldError::Diverged("nan".into()).into()), 2);
        assert_eq!(exit_code(&SeldError::Evaluation("x".into()).into()), 2);
        assert_eq!(exit_code(&SeldError::Config("x".into()).into()), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 2);
    }
}
