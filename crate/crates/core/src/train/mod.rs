//! Training harness: configuration, optimizer state, the step function,
//! checkpoints and a finite-difference gradient check.

mod gradcheck;
pub(crate) mod graph;
mod state;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::data::CorruptionLimits;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objectives::LossWeights;

pub use gradcheck::{gradient_check, gradient_check_with, synthetic_tuple, GradCheckOptions, GradCheckReport};
pub use graph::effective_weights;
pub use state::{load_checkpoint, save_checkpoint, TrainState};
pub use trainer::{evaluate_loss, train_step, validation_split, LogRecord, Trainer};

/// Multiplies the learning rate by `factor` every `every` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub every: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub loss: LossWeights,
    /// Sample lip shifts and occlusions per training track.
    pub corruption: Option<CorruptionLimits>,
    /// Add background noise to both mixtures.
    pub enhancement: bool,
    pub enhancement_snr_db: (f64, f64),
    pub random_face: bool,
    pub checkpoint_interval: u64,
    /// Share of videos held out, by hash of `video_id`.
    pub validation_fraction: f64,
    pub validation_tuples: usize,
    pub lr_decay: Option<StepDecay>,
    /// A total loss above this aborts the run.
    pub divergence_threshold: f64,
    /// Threads used for tuple sampling.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 128,
            max_steps: 100_000,
            seed: 0,
            loss: LossWeights::default(),
            corruption: None,
            enhancement: false,
            enhancement_snr_db: (-5.0, 5.0),
            random_face: true,
            checkpoint_interval: 1000,
            validation_fraction: 0.1,
            validation_tuples: 16,
            lr_decay: None,
            divergence_threshold: 1e6,
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Laptop-sized defaults.
    pub fn desk() -> Self {
        Self {
            batch_size: 8,
            checkpoint_interval: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        if self.enhancement_snr_db.0 > self.enhancement_snr_db.1 {
            return bad("enhancement_snr_db range is reversed".into());
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.factor > 0.0) {
                return bad("lr_decay needs every > 0 and factor > 0".into());
            }
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        match self.lr_decay {
            Some(d) => self.learning_rate * d.factor.powi((step / d.every) as i32),
            None => self.learning_rate,
        }
    }
}

/// Model and loss variants compared in the visual-cue ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    StaticFaceOnly,
    LipMotionOnly,
    MaskLossOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::StaticFaceOnly,
        Ablation::LipMotionOnly,
        Ablation::MaskLossOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::StaticFaceOnly => "static_face_only",
            Ablation::LipMotionOnly => "lip_motion_only",
            Ablation::MaskLossOnly => "mask_loss_only",
        }
    }

    pub fn apply(self, model: &mut ModelConfig, train: &mut TrainConfig) {
        match self {
            Ablation::Full => {}
            Ablation::StaticFaceOnly => model.use_lip = false,
            Ablation::LipMotionOnly => {
                model.use_face = false;
                train.loss.cross_modal = false;
            }
            Ablation::MaskLossOnly => {
                train.loss.cross_modal = false;
                train.loss.consistency = false;
            }
        }
    }
}
