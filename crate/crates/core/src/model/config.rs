use serde::{Deserialize, Serialize};

use crate::dsp::{StftConfig, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationMode {
    /// One mask per pass, conditioned on one speaker's visuals.
    GeneralSingleSpeaker,
    /// Two masks per pass, for speakers A then B.
    DedicatedTwoSpeaker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    None,
    Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Visual time steps per segment (N).
    pub n_frames: usize,
    /// Lip feature channels before `channel_scale` (V_l).
    pub lip_channels: usize,
    /// Face embedding size (V_f).
    pub face_dim: usize,
    pub embed_dim: usize,
    /// Audio bottleneck channels before `channel_scale` (D).
    pub audio_channels: usize,
    pub mask_bound: f64,
    pub mode: SeparationMode,
    pub channel_scale: f64,
    pub norm: NormKind,
    pub use_lip: bool,
    pub use_face: bool,
    pub roi_size: usize,
    pub face_size: usize,
    pub fps: f64,
    pub sample_rate: u32,
    pub stft: StftConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            n_frames: 64,
            lip_channels: 512,
            face_dim: 128,
            embed_dim: 128,
            audio_channels: 512,
            mask_bound: 5.0,
            mode: SeparationMode::GeneralSingleSpeaker,
            channel_scale: 1.0,
            norm: NormKind::Group,
            use_lip: true,
            use_face: true,
            roi_size: 88,
            face_size: 224,
            fps: 25.0,
            sample_rate: SAMPLE_RATE,
            stft: StftConfig::default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            channel_scale: 0.25,
            ..Self::paper()
        }
    }

    /// Small enough for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            n_frames: 4,
            face_dim: 16,
            embed_dim: 16,
            channel_scale: 0.1,
            roi_size: 24,
            face_size: 32,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn scaled(&self, base: usize) -> usize {
        ((base as f64 * self.channel_scale).round() as usize).max(2)
    }

    /// Effective lip feature width.
    pub fn v_l(&self) -> usize {
        self.scaled(self.lip_channels)
    }

    /// Effective audio bottleneck width.
    pub fn d(&self) -> usize {
        self.scaled(self.audio_channels)
    }

    /// Visual feature width per speaker (V).
    pub fn v(&self) -> usize {
        (if self.use_lip { self.v_l() } else { 0 }) + (if self.use_face { self.face_dim } else { 0 })
    }

    pub fn audio_only(&self) -> bool {
        !self.use_lip && !self.use_face
    }

    /// Channels entering the decoder.
    pub fn fusion_channels(&self) -> usize {
        match self.mode {
            SeparationMode::GeneralSingleSpeaker => self.v() + self.d(),
            SeparationMode::DedicatedTwoSpeaker => 2 * self.v() + self.d(),
        }
    }

    /// Masks produced by one decoder pass.
    pub fn masks_per_pass(&self) -> usize {
        match self.mode {
            SeparationMode::GeneralSingleSpeaker => 1,
            SeparationMode::DedicatedTwoSpeaker => 2,
        }
    }

    /// Visual streams expected by one prediction.
    pub fn visual_inputs(&self) -> usize {
        if self.audio_only() {
            0
        } else {
            self.masks_per_pass()
        }
    }

    /// STFT frames per segment; four per visual step.
    pub fn time_frames(&self) -> usize {
        4 * self.n_frames
    }

    pub fn segment_samples(&self) -> usize {
        self.stft.hop * (self.time_frames() - 1)
    }

    pub fn segment_seconds(&self) -> f64 {
        self.segment_samples() as f64 / self.sample_rate as f64
    }

    pub fn freq_bins(&self) -> usize {
        self.stft.freq_bins()
    }

    /// Frequency extents after the first and second stride-2 stages.
    pub fn stage_freqs(&self) -> (usize, usize) {
        let f1 = (self.freq_bins() - 2) / 2 + 1;
        (f1, (f1 - 2) / 2 + 1)
    }

    /// Number of frequency-halving blocks between the stride-2 stages and
    /// the bottleneck.
    pub fn freq_blocks(&self) -> usize {
        self.stage_freqs().1.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.n_frames < 2 {
            return bad(format!("n_frames must be >= 2, got {}", self.n_frames));
        }
        if !(self.channel_scale > 0.0) || !self.channel_scale.is_finite() {
            return bad(format!("channel_scale must be positive, got {}", self.channel_scale));
        }
        if !(self.mask_bound > 0.0) || !self.mask_bound.is_finite() {
            return bad(format!("mask_bound must be positive, got {}", self.mask_bound));
        }
        if self.embed_dim != self.face_dim {
            return bad(format!(
                "embed_dim ({}) must equal face_dim ({})",
                self.embed_dim, self.face_dim
            ));
        }
        if self.face_dim == 0 || self.lip_channels == 0 || self.audio_channels == 0 {
            return bad("feature widths must be positive".into());
        }
        if self.audio_only() && self.mode != SeparationMode::DedicatedTwoSpeaker {
            return bad("a model without visual cues must use dedicated_two_speaker mode".into());
        }
        if self.freq_bins() < 257 {
            return bad(format!(
                "fft_size {} gives fewer than 257 frequency bins",
                self.stft.fft_size
            ));
        }
        let (_, f2) = self.stage_freqs();
        if !f2.is_power_of_two() {
            return bad(format!(
                "frequency extent {f2} after the stride-2 stages is not a power of two"
            ));
        }
        if self.roi_size < 16 || self.face_size < 32 {
            return bad("roi_size must be >= 16 and face_size >= 32".into());
        }
        if !(self.fps > 0.0) || self.sample_rate == 0 {
            return bad("fps and sample_rate must be positive".into());
        }
        let spf = self.sample_rate as f64 / self.fps;
        if (spf - spf.round()).abs() > 1e-9 {
            return bad(format!("sample_rate / fps = {spf} is not an integer"));
        }
        Ok(())
    }

    /// Audio samples per visual frame.
    pub fn samples_per_frame(&self) -> usize {
        (self.sample_rate as f64 / self.fps).round() as usize
    }

    pub fn digest(&self) -> String {
        crate::util::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
