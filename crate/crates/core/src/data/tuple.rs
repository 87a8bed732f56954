use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::corrupt::{corrupt_rois, CorruptionSpec, FaceTrackInput};
use crate::dsp::{compute_cirm, mix_waveforms, stft, ComplexMask, ComplexSpectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::util::{mix_seed, sha256_hex};

/// Upper bounds (seconds) for sampled lip corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionLimits {
    pub max_shift: f64,
    pub max_occlusion: f64,
}

impl Default for CorruptionLimits {
    fn default() -> Self {
        Self {
            max_shift: 1.0,
            max_occlusion: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TupleOptions {
    pub n_frames: usize,
    pub fps: f64,
    pub sample_rate: u32,
    pub segment_samples: usize,
    pub stft: StftConfig,
    pub mask_bound: f64,
    /// Speech-on-speech mixing SNR range in dB.
    pub snr_range_db: (f64, f64),
    pub max_attempts: usize,
    pub corruption: Option<CorruptionLimits>,
    /// Pick the face crop at random from the segment; otherwise the one
    /// aligned with the central frame.
    pub random_face: bool,
}

impl TupleOptions {
    pub fn for_model(cfg: &ModelConfig) -> Self {
        Self {
            n_frames: cfg.n_frames,
            fps: cfg.fps,
            sample_rate: cfg.sample_rate,
            segment_samples: cfg.segment_samples(),
            stft: cfg.stft,
            mask_bound: cfg.mask_bound,
            snr_range_db: (-2.5, 2.5),
            max_attempts: 32,
            corruption: None,
            random_face: true,
        }
    }

    pub fn samples_per_frame(&self) -> usize {
        (self.sample_rate as f64 / self.fps).round() as usize
    }
}

/// Where a tuple's segments came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TupleOrigin {
    pub video_a: String,
    pub video_b: String,
    /// Clip ids for A1, A2, B.
    pub clips: [String; 3],
    /// First ROI frame of each segment.
    pub start_frames: [usize; 3],
    pub seed: u64,
}

/// Two mixtures sharing speaker B: `x1 = sA1 + g1 sB`, `x2 = sA2 + g2 sB`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTuple {
    pub x1: Waveform,
    pub x2: Waveform,
    pub s_a1: Waveform,
    pub s_a2: Waveform,
    pub s_b: Waveform,
    /// `g1 * sB` and `g2 * sB`, B as it occurs in each mixture.
    pub s_b1: Waveform,
    pub s_b2: Waveform,
    pub snr_db: [f64; 2],
    pub spec1: ComplexSpectrogram,
    pub spec2: ComplexSpectrogram,
    /// Ground-truth masks for A1, A2 (on X1, X2) and B1, B2 (on X1, X2).
    pub gt_masks: [ComplexMask; 4],
    pub visual_a1: FaceTrackInput,
    pub visual_a2: FaceTrackInput,
    pub visual_b: FaceTrackInput,
    /// Scaled noise added to x1 and x2.
    pub noise: Option<[Waveform; 2]>,
    pub origin: TupleOrigin,
}

impl TrainingTuple {
    /// Hash over every sample, mask and pixel.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        let mut put = |v: &[f64]| bytes.extend(v.iter().flat_map(|x| x.to_le_bytes()));
        for w in [&self.x1, &self.x2, &self.s_a1, &self.s_a2, &self.s_b, &self.s_b1, &self.s_b2] {
            put(w.samples());
        }
        for s in [&self.spec1, &self.spec2] {
            put(s.real.as_slice().expect("standard layout"));
            put(s.imag.as_slice().expect("standard layout"));
        }
        for m in &self.gt_masks {
            put(m.real.as_slice().expect("standard layout"));
            put(m.imag.as_slice().expect("standard layout"));
        }
        if let Some(n) = &self.noise {
            put(n[0].samples());
            put(n[1].samples());
        }
        for v in [&self.visual_a1, &self.visual_a2, &self.visual_b] {
            bytes.extend(v.mouth_rois.iter().flat_map(|x| x.to_le_bytes()));
            bytes.extend(v.face_image.iter().flat_map(|x| x.to_le_bytes()));
        }
        bytes.extend(self.snr_db.iter().flat_map(|x| x.to_le_bytes()));
        sha256_hex(&bytes)
    }

    pub fn mixtures(&self) -> [&Waveform; 2] {
        [&self.x1, &self.x2]
    }

    /// Sources in mask order: A1, A2, B1, B2.
    pub fn sources(&self) -> [&Waveform; 4] {
        [&self.s_a1, &self.s_a2, &self.s_b1, &self.s_b2]
    }

    fn recompute_targets(&mut self, opts_bound: f64) -> Result<()> {
        let cfg = self.spec1.config;
        self.spec1 = stft(&self.x1, &cfg)?;
        self.spec2 = stft(&self.x2, &cfg)?;
        self.gt_masks = gt_masks(
            [&self.spec1, &self.spec2],
            [&self.s_a1, &self.s_a2, &self.s_b1, &self.s_b2],
            &cfg,
            opts_bound,
        )?;
        Ok(())
    }
}

fn gt_masks(specs: [&ComplexSpectrogram; 2], sources: [&Waveform; 4], cfg: &StftConfig, k: f64) -> Result<[ComplexMask; 4]> {
    let mix = [specs[0], specs[1], specs[0], specs[1]];
    let mut out = Vec::with_capacity(4);
    for (s, x) in sources.iter().zip(mix) {
        out.push(compute_cirm(&stft(s, cfg)?, x, k)?);
    }
    Ok(out.try_into().expect("four masks"))
}

/// Number of frame-aligned segment starts available in a clip.
fn valid_starts(corpus: &Corpus, clip: usize, opts: &TupleOptions) -> usize {
    let c = corpus.clip(clip);
    let spf = opts.samples_per_frame();
    let by_frames = c.frames().saturating_sub(opts.n_frames - 1);
    let by_audio = if c.audio.len() >= opts.segment_samples {
        (c.audio.len() - opts.segment_samples) / spf + 1
    } else {
        0
    };
    by_frames.min(by_audio)
}

struct Segment {
    clip: usize,
    start: usize,
    audio: Waveform,
    visual: FaceTrackInput,
}

fn cut(corpus: &Corpus, clip: usize, start: usize, opts: &TupleOptions, rng: &mut ChaCha8Rng) -> Result<Segment> {
    let c = corpus.clip(clip);
    let audio = c.audio.slice(start * opts.samples_per_frame(), opts.segment_samples)?;
    let face = if opts.random_face {
        let lo = c.face_index_for_frame(start);
        let hi = c.face_index_for_frame(start + opts.n_frames - 1);
        rng.gen_range(lo..=hi)
    } else {
        c.face_index_for_frame(start + opts.n_frames / 2)
    };
    let mut visual = c.track(start, opts.n_frames, face)?;
    if let Some(lim) = opts.corruption {
        let spec = CorruptionSpec::sample(rng, opts.n_frames, opts.fps, lim.max_shift, lim.max_occlusion);
        visual = corrupt_rois(&visual, &spec, opts.fps, rng.gen())?;
    }
    Ok(Segment {
        clip,
        start,
        audio,
        visual,
    })
}

/// Draws a two-mixture tuple: two segments of video A and one of video B.
/// Deterministic in `(corpus, rng_seed, opts)`.
pub fn sample_training_tuple(corpus: &Corpus, rng_seed: u64, opts: &TupleOptions) -> Result<TrainingTuple> {
    let videos: Vec<(&String, &Vec<usize>)> = corpus.manifest().videos().iter().collect();
    if videos.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 videos, manifest has {}",
            videos.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut last = String::new();
    for _ in 0..opts.max_attempts.max(1) {
        let ia = rng.gen_range(0..videos.len());
        let mut ib = rng.gen_range(0..videos.len() - 1);
        if ib >= ia {
            ib += 1;
        }
        let (va, clips_a) = videos[ia];
        let (vb, clips_b) = videos[ib];
        let ca1 = *clips_a.choose(&mut rng).expect("videos have clips");
        let ca2 = *clips_a.choose(&mut rng).expect("videos have clips");
        let cb = *clips_b.choose(&mut rng).expect("videos have clips");
        let (n1, n2, nb) = (
            valid_starts(corpus, ca1, opts),
            valid_starts(corpus, ca2, opts),
            valid_starts(corpus, cb, opts),
        );
        if n1 == 0 || n2 == 0 || nb == 0 {
            last = format!("a clip of {va} or {vb} is shorter than one segment");
            continue;
        }
        let k1 = rng.gen_range(0..n1);
        let mut k2 = rng.gen_range(0..n2);
        if ca1 == ca2 {
            // same clip: the two A segments must not overlap
            let n = opts.n_frames;
            let free: Vec<usize> = (0..n2).filter(|&k| k + n <= k1 || k >= k1 + n).collect();
            match free.choose(&mut rng) {
                Some(&k) => k2 = k,
                None => {
                    last = format!("clip {} too short for two disjoint segments", corpus.manifest().entries()[ca1].clip_id);
                    continue;
                }
            }
        }
        let kb = rng.gen_range(0..nb);
        let a1 = cut(corpus, ca1, k1, opts, &mut rng)?;
        let a2 = cut(corpus, ca2, k2, opts, &mut rng)?;
        let b = cut(corpus, cb, kb, opts, &mut rng)?;
        let snr = [
            rng.gen_range(opts.snr_range_db.0..=opts.snr_range_db.1),
            rng.gen_range(opts.snr_range_db.0..=opts.snr_range_db.1),
        ];
        let mixed = mix_waveforms(&a1.audio, &b.audio, snr[0]).and_then(|m1| {
            mix_waveforms(&a2.audio, &b.audio, snr[1]).map(|m2| (m1, m2))
        });
        let ((x1, g1), (x2, g2)) = match mixed {
            Ok(v) if a1.audio.rms() > 0.0 && a2.audio.rms() > 0.0 => v,
            Ok(_) | Err(Error::DegenerateSource(_)) => {
                last = "silent segment".into();
                continue;
            }
            Err(e) => return Err(e),
        };
        let spec1 = stft(&x1, &opts.stft)?;
        let spec2 = stft(&x2, &opts.stft)?;
        let s_b1 = b.audio.scaled(g1);
        let s_b2 = b.audio.scaled(g2);
        let gt = gt_masks(
            [&spec1, &spec2],
            [&a1.audio, &a2.audio, &s_b1, &s_b2],
            &opts.stft,
            opts.mask_bound,
        )?;
        let ids = |c: usize| corpus.manifest().entries()[c].clip_id.clone();
        return Ok(TrainingTuple {
            x1,
            x2,
            s_a1: a1.audio,
            s_a2: a2.audio,
            s_b: b.audio,
            s_b1,
            s_b2,
            snr_db: snr,
            spec1,
            spec2,
            gt_masks: gt,
            visual_a1: a1.visual,
            visual_a2: a2.visual,
            visual_b: b.visual,
            noise: None,
            origin: TupleOrigin {
                video_a: va.clone(),
                video_b: vb.clone(),
                clips: [ids(a1.clip), ids(a2.clip), ids(b.clip)],
                start_frames: [a1.start, a2.start, b.start],
                seed: rng_seed,
            },
        });
    }
    Err(Error::SamplingExhausted {
        attempts: opts.max_attempts.max(1),
        reason: last,
    })
}

/// Adds an independently drawn noise segment to each mixture at `snr_db`
/// relative to that mixture and recomputes the ground-truth masks. `+inf`
/// returns the tuple unchanged.
pub fn add_enhancement_noise(t: &TrainingTuple, noise_pool: &[Waveform], snr_db: f64, rng_seed: u64) -> Result<TrainingTuple> {
    if noise_pool.is_empty() {
        return Err(Error::InvalidInput("empty noise pool".into()));
    }
    let len = t.x1.len();
    if let Some(short) = noise_pool.iter().position(|n| n.len() < len) {
        return Err(Error::InvalidInput(format!(
            "noise clip {short} has {} samples, segments need {len}",
            noise_pool[short].len()
        )));
    }
    if snr_db == f64::INFINITY {
        return Ok(t.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rng_seed, &[0x6e6f]));
    let mut out = t.clone();
    let mut noise = Vec::with_capacity(2);
    for x in [&mut out.x1, &mut out.x2] {
        let clip = &noise_pool[rng.gen_range(0..noise_pool.len())];
        let off = rng.gen_range(0..=clip.len() - len);
        let seg = clip.slice(off, len)?;
        let (noisy, g) = mix_waveforms(x, &seg, snr_db)?;
        *x = noisy;
        noise.push(seg.scaled(g));
    }
    out.noise = Some(noise.try_into().expect("two mixtures"));
    let k = t.gt_masks[0].bound;
    out.recompute_targets(k)?;
    Ok(out)
}
