//! Command-line front end for the separation pipeline.

use std::ffi::OsString;
use std::path::PathBuf;

use avsep_core::train::Ablation;
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

mod commands;
pub mod config;

pub use config::RunConfig;

/// Environment variable naming the fixture cache directory.
pub const CACHE_ENV: &str = "AVSEP_CACHE";

#[derive(Debug, Parser)]
#[command(name = "avsep", version, about = "Audio-visual speech separation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Preset name (paper, desk, tiny) or JSON file of dotted keys.
    #[arg(long)]
    pub config: Option<String>,
    /// Override one setting, e.g. `--set train.learning_rate=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_set)]
    pub sets: Vec<(String, Value)>,
    /// Seed for all randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Upper bound on data-loading threads.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub no_cross_modal_loss: bool,
    #[arg(long)]
    pub no_consistency_loss: bool,
    /// Drop the lip-motion stream.
    #[arg(long, conflicts_with = "lip_motion_only")]
    pub static_face_only: bool,
    /// Drop the static face stream and its loss.
    #[arg(long)]
    pub lip_motion_only: bool,
    /// Pick each window's face frame at random with this seed instead of the
    /// central frame.
    #[arg(long, value_name = "SEED")]
    pub random_face_frame: Option<u64>,
}

impl Common {
    /// Effective configuration; flags override the file and `--set` values.
    pub fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::resolve(self.config.as_deref(), &self.sets)?;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.train.workers = w;
        }
        if self.static_face_only {
            cfg.apply_ablation(Ablation::StaticFaceOnly);
        }
        if self.lip_motion_only {
            cfg.apply_ablation(Ablation::LipMotionOnly);
        }
        if self.no_cross_modal_loss {
            cfg.train.loss.cross_modal = false;
        }
        if self.no_consistency_loss {
            cfg.train.loss.consistency = false;
        }
        if self.random_face_frame.is_some() {
            cfg.window.face_frame_seed = self.random_face_frame;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic audio-visual corpus and its manifest.
    Fixture(FixtureArgs),
    /// Draw training tuples and write their audio for inspection.
    Sample(SampleArgs),
    /// Train a separator, writing a JSON Lines log and checkpoints.
    Train(TrainArgs),
    /// Separate every visible speaker of one clip.
    Separate(SeparateArgs),
    /// Extract one target speaker from a noisy or mixed clip.
    Enhance(SeparateArgs),
    /// Score separation on seeded two-speaker test mixtures.
    EvalSep(EvalSepArgs),
    /// Cross-modal face/voice verification AUC and EER.
    EvalVerify(EvalVerifyArgs),
    /// Write face and voice embeddings of every clip as CSV.
    ExportEmbeddings(ExportArgs),
    /// Gradient check and DSP round trip self-test.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Output directory; defaults to a cache entry under $AVSEP_CACHE.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
    #[arg(long, default_value_t = 2)]
    pub clips: usize,
    #[arg(long, default_value_t = 3.0)]
    pub seconds: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for the log and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `train.max_steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Directory of noise `.wav` files for enhancement training.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Continue from a training checkpoint; its settings take precedence.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Mixture WAV file.
    #[arg(long)]
    pub audio: PathBuf,
    /// Mouth ROI frame directory, one per speaker.
    #[arg(long)]
    pub roi_dir: Vec<PathBuf>,
    /// Face crop directory, one per speaker, in the same order.
    #[arg(long)]
    pub face_dir: Vec<PathBuf>,
    /// Output file stem; defaults to the audio file name.
    #[arg(long)]
    pub clip_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("estimator").required(true).args(["checkpoint", "oracle_masks", "mixture"]))]
pub struct EvalSepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Ground-truth masks through the inference pipeline.
    #[arg(long)]
    pub oracle_masks: bool,
    /// The unprocessed mixture as the estimate.
    #[arg(long)]
    pub mixture: bool,
    #[arg(long, default_value_t = 50)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub snr_db: f64,
    #[arg(long)]
    pub no_stoi: bool,
    /// Report path (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalVerifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Position of the voice segment within each clip, 0 to 1.
    #[arg(long, default_value_t = 0.5)]
    pub offset: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub offset: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Parameters sampled by the gradient check.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[command(flatten)]
    pub common: Common,
}

/// A bad combination of arguments that clap cannot express.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 1 on a pipeline error and 2 on a usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}
