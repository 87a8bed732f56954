//! Sliding-window separation and enhancement of arbitrary-length clips.

use std::time::Instant;

use ndarray::{s, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClipMedia, CorruptionSpec, FaceTrackInput};
use crate::dsp::{apply_mask, compute_cirm, istft, stft, ComplexMask, ComplexSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::metrics::bss_eval;
use crate::model::{ModelCheckpoint, ModelConfig, ModelParams, SeparationMode, Separator};
use crate::util::{mix_seed, permutations};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    CrossfadeHann,
    OverlapAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// Seconds.
    pub window: f64,
    /// Seconds.
    pub hop: f64,
    pub blend: Blend,
    /// Pick each window's face crop at random with this seed instead of
    /// the crop aligned with the window's central frame.
    #[serde(default)]
    pub face_frame_seed: Option<u64>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: 2.55,
            hop: 1.275,
            blend: Blend::CrossfadeHann,
            face_frame_seed: None,
        }
    }
}

impl WindowConfig {
    /// One model segment per window, half-window hop.
    pub fn for_model(cfg: &ModelConfig) -> Self {
        let window = cfg.segment_seconds();
        Self {
            window,
            hop: window / 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0) || !(self.hop > 0.0) || self.hop > self.window {
            return Err(Error::Config(format!(
                "window config needs 0 < hop <= window, got window {} hop {}",
                self.window, self.hop
            )));
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ((self.hop * sample_rate as f64).round() as usize).max(1)
    }
}

/// Window starts at hop intervals; the last window is right-aligned.
pub fn window_starts(total: usize, window: usize, hop: usize) -> Result<Vec<usize>> {
    if total < window {
        return Err(Error::ClipTooShort { samples: total, window });
    }
    let mut starts: Vec<usize> = (0..).map(|k| k * hop).take_while(|&s| s + window <= total).collect();
    let last = total - window;
    if *starts.last().expect("at least one window") != last {
        starts.push(last);
    }
    Ok(starts)
}

/// Per-window blending weights (each `window` long); at every sample they
/// sum to one over the windows covering it.
pub fn blend_weights(starts: &[usize], window: usize, total: usize, blend: Blend) -> Vec<Vec<f64>> {
    let base: Vec<f64> = match blend {
        // half-sample offset keeps the taper positive at both ends
        Blend::CrossfadeHann => (0..window)
            .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / window as f64).sin().powi(2))
            .collect(),
        Blend::OverlapAverage => vec![1.0; window],
    };
    let mut norm = vec![0.0; total];
    for &s in starts {
        for (n, b) in norm[s..s + window].iter_mut().zip(&base) {
            *n += b;
        }
    }
    starts
        .iter()
        .map(|&s| base.iter().zip(&norm[s..s + window]).map(|(b, n)| b / n).collect())
        .collect()
}

/// One speaker's visual stream over a whole clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVisuals {
    /// `(frames, H, W)` in `[0, 1]`.
    pub mouth_rois: Array3<f32>,
    /// Face crops spread evenly over the clip, `(3, S, S)` in `[0, 1]`.
    pub faces: Vec<Array3<f32>>,
}

impl SpeakerVisuals {
    pub fn from_clip(clip: &ClipMedia) -> Self {
        Self {
            mouth_rois: clip.rois.mapv(|v| v as f32 / 255.0),
            faces: clip.faces.iter().map(|f| f.mapv(|v| v as f32 / 255.0)).collect(),
        }
    }

    pub fn frames(&self) -> usize {
        self.mouth_rois.dim().0
    }

    fn face_index(&self, frame: usize) -> usize {
        let n = self.frames().max(1);
        (frame.min(n - 1) * self.faces.len() / n).min(self.faces.len() - 1)
    }

    fn window(&self, start: usize, n: usize, face: usize) -> FaceTrackInput {
        FaceTrackInput {
            mouth_rois: self.mouth_rois.slice(s![start..start + n, .., ..]).to_owned(),
            face_image: self.faces[face].clone(),
            corruption: CorruptionSpec::disabled(),
        }
    }
}

/// What a mask predictor sees for one window.
pub struct WindowInput<'a> {
    pub spec: &'a ComplexSpectrogram,
    /// One track per conditioned speaker.
    pub tracks: &'a [FaceTrackInput],
    pub start_sample: usize,
    pub len: usize,
}

pub trait MaskPredictor {
    fn model_config(&self) -> &ModelConfig;

    /// Outputs produced for `visual_streams` conditioning streams.
    fn outputs(&self, visual_streams: usize) -> Result<usize>;

    /// Whether output order is arbitrary (no visual conditioning).
    fn unassigned(&self) -> bool {
        false
    }

    fn predict(&self, w: &WindowInput<'_>) -> Result<Vec<ComplexMask>>;
}

/// Network-backed predictor.
pub struct NeuralPredictor {
    sep: Separator,
    params: ModelParams<f32>,
}

impl NeuralPredictor {
    pub fn new(cfg: ModelConfig, params: ModelParams<f32>) -> Result<Self> {
        let sep = Separator::new(cfg)?;
        sep.check_params(&params)?;
        Ok(Self { sep, params })
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        Self::new(ckpt.config.clone(), ckpt.params.clone())
    }

    pub fn separator(&self) -> &Separator {
        &self.sep
    }
}

impl MaskPredictor for NeuralPredictor {
    fn model_config(&self) -> &ModelConfig {
        self.sep.config()
    }

    fn outputs(&self, visual_streams: usize) -> Result<usize> {
        let cfg = self.sep.config();
        match (cfg.mode, cfg.audio_only()) {
            (_, true) if visual_streams == 0 => Ok(2),
            (SeparationMode::GeneralSingleSpeaker, false) if (1..=2).contains(&visual_streams) => Ok(visual_streams),
            (SeparationMode::DedicatedTwoSpeaker, false) if visual_streams == 2 => Ok(2),
            _ => Err(Error::Config(format!(
                "{:?} model{} cannot take {visual_streams} visual stream(s)",
                cfg.mode,
                if cfg.audio_only() { " without visual cues" } else { "" }
            ))),
        }
    }

    fn unassigned(&self) -> bool {
        self.sep.config().audio_only()
    }

    fn predict(&self, w: &WindowInput<'_>) -> Result<Vec<ComplexMask>> {
        let tracks: Vec<&FaceTrackInput> = w.tracks.iter().collect();
        match self.sep.config().mode {
            SeparationMode::GeneralSingleSpeaker => self.sep.predict_each(&self.params, w.spec, &tracks),
            SeparationMode::DedicatedTwoSpeaker => self.sep.predict_masks(&self.params, w.spec, &tracks),
        }
    }
}

/// Stub predictor emitting ground-truth cIRMs from known sources.
pub struct OracleMasks {
    cfg: ModelConfig,
    sources: Vec<Waveform>,
}

impl OracleMasks {
    pub fn new(cfg: ModelConfig, sources: Vec<Waveform>) -> Self {
        Self { cfg, sources }
    }
}

impl MaskPredictor for OracleMasks {
    fn model_config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn outputs(&self, _visual_streams: usize) -> Result<usize> {
        Ok(self.sources.len())
    }

    fn predict(&self, w: &WindowInput<'_>) -> Result<Vec<ComplexMask>> {
        self.sources
            .iter()
            .map(|s| compute_cirm(&stft(&s.slice(w.start_sample, w.len)?, &self.cfg.stft)?, w.spec, self.cfg.mask_bound))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    /// One waveform per output, each as long as the input.
    pub sources: Vec<Waveform>,
    pub window_starts: Vec<usize>,
    pub window_samples: usize,
    /// Per-window masks, kept only on request.
    pub window_masks: Option<Vec<Vec<ComplexMask>>>,
    pub elapsed_ms: u64,
}

/// Separation with optional retention of per-window masks.
pub fn separate_clip_with(
    predictor: &dyn MaskPredictor,
    mixture: &Waveform,
    visuals: &[SpeakerVisuals],
    wcfg: &WindowConfig,
    keep_masks: bool,
) -> Result<SeparationResult> {
    let t0 = Instant::now();
    wcfg.validate()?;
    let cfg = predictor.model_config().clone();
    if mixture.sample_rate() != cfg.sample_rate {
        return Err(Error::InvalidInput(format!(
            "mixture at {} Hz, model expects {} Hz",
            mixture.sample_rate(),
            cfg.sample_rate
        )));
    }
    let window = wcfg.window_samples(cfg.sample_rate);
    let hop = wcfg.hop_samples(cfg.sample_rate);
    let total = mixture.len();
    let starts = window_starts(total, window, hop)?;
    let outputs = predictor.outputs(visuals.len())?;
    let n = cfg.n_frames;
    let spf = cfg.samples_per_frame();
    if !visuals.is_empty() {
        if window != cfg.segment_samples() {
            return Err(Error::Config(format!(
                "window of {window} samples does not match the model segment of {}",
                cfg.segment_samples()
            )));
        }
        for (k, v) in visuals.iter().enumerate() {
            let covered = v.frames() * spf;
            if covered.abs_diff(total) > hop || v.frames() < n || v.faces.is_empty() {
                return Err(Error::Alignment(format!(
                    "speaker {k}: {} visual frames ({covered} samples) against {total} audio samples",
                    v.frames()
                )));
            }
        }
    }
    let weights = blend_weights(&starts, window, total, wcfg.blend);
    let mut acc = vec![vec![0.0; total]; outputs];
    let mut kept = keep_masks.then(Vec::new);
    let mut prev: Option<(usize, Vec<Waveform>)> = None;
    for (wi, &start) in starts.iter().enumerate() {
        let seg = mixture.slice(start, window)?;
        let spec = stft(&seg, &cfg.stft)?;
        let tracks: Vec<FaceTrackInput> = visuals
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let f0 = ((start as f64 / spf as f64).round() as usize).min(v.frames() - n);
                let face = match wcfg.face_frame_seed {
                    Some(seed) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[wi as u64, k as u64]));
                        rng.gen_range(v.face_index(f0)..=v.face_index(f0 + n - 1))
                    }
                    None => v.face_index(f0 + n / 2),
                };
                v.window(f0, n, face)
            })
            .collect();
        let masks = predictor.predict(&WindowInput {
            spec: &spec,
            tracks: &tracks,
            start_sample: start,
            len: window,
        })?;
        if masks.len() != outputs {
            return Err(Error::Shape(format!("predictor returned {} masks, expected {outputs}", masks.len())));
        }
        let mut outs = masks
            .iter()
            .map(|m| istft(&apply_mask(&spec, m)?, &cfg.stft, window))
            .collect::<Result<Vec<_>>>()?;
        if predictor.unassigned() {
            if let Some((ps, pouts)) = &prev {
                outs = align_to_previous(*ps, pouts, start, outs, window);
            }
        }
        for (k, o) in outs.iter().enumerate() {
            for (i, (&y, &w)) in o.samples().iter().zip(&weights[wi]).enumerate() {
                acc[k][start + i] += w * y;
            }
        }
        if let Some(kept) = kept.as_mut() {
            kept.push(masks);
        }
        prev = Some((start, outs));
    }
    let sources = acc
        .into_iter()
        .map(|a| Waveform::new(a, cfg.sample_rate))
        .collect::<Result<Vec<_>>>()?;
    if let Some((k, _)) = sources.iter().enumerate().find(|(_, w)| w.samples().iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical {
            term: format!("separated output {k}"),
            value: f64::NAN,
        });
    }
    Ok(SeparationResult {
        sources,
        window_starts: starts,
        window_samples: window,
        window_masks: kept,
        elapsed_ms: t0.elapsed().as_millis() as u64,
    })
}

/// Per-speaker separation: output `k` follows `visuals[k]` (for models
/// without visual cues, pass no visuals and get two outputs).
pub fn separate_clip(
    predictor: &dyn MaskPredictor,
    mixture: &Waveform,
    visuals: &[SpeakerVisuals],
    wcfg: &WindowConfig,
) -> Result<SeparationResult> {
    separate_clip_with(predictor, mixture, visuals, wcfg, false)
}

/// Target-speaker enhancement: a single output guided by one stream.
pub fn enhance_clip(
    predictor: &dyn MaskPredictor,
    mixture: &Waveform,
    target: &SpeakerVisuals,
    wcfg: &WindowConfig,
) -> Result<SeparationResult> {
    if predictor.model_config().mode != SeparationMode::GeneralSingleSpeaker {
        return Err(Error::Config("enhancement needs a general_single_speaker model".into()));
    }
    separate_clip(predictor, mixture, std::slice::from_ref(target), wcfg)
}

/// Reorders `outs` so each output continues the matching output of the
/// previous window across their overlap.
fn align_to_previous(prev_start: usize, prev: &[Waveform], start: usize, outs: Vec<Waveform>, window: usize) -> Vec<Waveform> {
    let overlap = (prev_start + window).saturating_sub(start);
    if overlap == 0 {
        return outs;
    }
    let off = start - prev_start;
    let score = |p: &[usize]| -> f64 {
        p.iter()
            .enumerate()
            .map(|(k, &j)| {
                let a = &prev[k].samples()[off..off + overlap];
                let b = &outs[j].samples()[..overlap];
                a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
            })
            .sum()
    };
    let best = permutations(outs.len())
        .into_iter()
        .max_by(|a, b| score(a).total_cmp(&score(b)))
        .expect("non-empty");
    best.iter().map(|&j| outs[j].clone()).collect()
}

/// Permutation `p` maximizing mean SDR when estimate `p[i]` is scored
/// against reference `i`.
pub fn assign_best_permutation(estimates: &[Waveform], references: &[Waveform]) -> Result<Vec<usize>> {
    if estimates.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} references",
            estimates.len(),
            references.len()
        )));
    }
    if references.is_empty() || references.len() > 3 {
        return Err(Error::InvalidInput(format!("permutation search supports 1 to 3 sources, got {}", references.len())));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(references.len()) {
        let ordered: Vec<Waveform> = p.iter().map(|&j| estimates[j].clone()).collect();
        let m = bss_eval(references, &ordered)?;
        let mean = m.iter().map(|x| x.sdr).sum::<f64>() / m.len() as f64;
        if best.as_ref().is_none_or(|(b, _)| mean > *b) {
            best = Some((mean, p));
        }
    }
    Ok(best.expect("at least one permutation").1)
}
