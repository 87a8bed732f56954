//! Synthetic audio-visual corpus: each speaker is a harmonic source shaped by
//! its own formant set, each clip has its own syllable envelope, and the
//! mouth frames open with that envelope.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{write_manifest, ManifestEntry};
use crate::dsp::{write_wav, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::util::mix_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    pub clip_seconds: f64,
    pub fps: f64,
    pub roi_px: u32,
    pub face_px: u32,
    pub faces_per_clip: usize,
    pub noise_clips: usize,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            clip_seconds: 3.0,
            fps: 25.0,
            roi_px: 96,
            face_px: 224,
            faces_per_clip: 3,
            noise_clips: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureInfo {
    pub manifest_path: PathBuf,
    pub noise_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

struct Voice {
    f0: f64,
    formants: [(f64, f64); 3],
    vibrato_hz: f64,
    lip_width: f64,
    skin: f64,
    lip_tone: f64,
    face_rgb: [f64; 3],
    face_freq: (f64, f64),
}

impl Voice {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self {
            f0: rng.gen_range(90.0..260.0),
            formants: [
                (rng.gen_range(300.0..900.0), rng.gen_range(60.0..140.0)),
                (rng.gen_range(1000.0..2400.0), rng.gen_range(90.0..200.0)),
                (rng.gen_range(2600.0..3800.0), rng.gen_range(120.0..260.0)),
            ],
            vibrato_hz: rng.gen_range(3.0..6.0),
            lip_width: rng.gen_range(18.0..30.0),
            skin: rng.gen_range(150.0..210.0),
            lip_tone: rng.gen_range(70.0..120.0),
            face_rgb: [rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9)],
            face_freq: (rng.gen_range(1.0..6.0), rng.gen_range(1.0..6.0)),
        }
    }

    fn gain(&self, f: f64) -> f64 {
        let g: f64 = self
            .formants
            .iter()
            .map(|&(c, bw)| (-(f - c).powi(2) / (2.0 * bw * bw)).exp())
            .sum();
        g + 0.02
    }
}

/// Syllable envelope in `[0, 1]`, one value per sample.
fn envelope(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut env = vec![0.0; len];
    let mut t = rng.gen_range(0.0..0.1);
    while t < len as f64 / sr {
        let dur = rng.gen_range(0.10..0.25);
        let amp = rng.gen_range(0.5..1.0);
        let (a, b) = ((t * sr) as usize, (((t + dur) * sr) as usize).min(len));
        for (i, e) in env[a..b].iter_mut().enumerate() {
            let phase = i as f64 / (b - a).max(1) as f64;
            *e += amp * (0.5 - 0.5 * (2.0 * PI * phase).cos());
        }
        t += dur + rng.gen_range(0.03..0.15);
    }
    env.iter().map(|v| v.min(1.0)).collect()
}

fn speech(voice: &Voice, env: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let drift = rng.gen_range(-0.08..0.08);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let harmonics = ((7000.0 / voice.f0) as usize).max(1);
    let mut phases = vec![0.0f64; harmonics];
    let mut out = Vec::with_capacity(env.len());
    for (n, &e) in env.iter().enumerate() {
        let t = n as f64 / sr;
        let f0 = voice.f0 * (1.0 + drift * t / 3.0 + 0.03 * (2.0 * PI * voice.vibrato_hz * t + vib_phase).sin());
        let mut v = 0.0;
        for (h, ph) in phases.iter_mut().enumerate() {
            let f = f0 * (h + 1) as f64;
            *ph = (*ph + 2.0 * PI * f / sr) % (2.0 * PI);
            v += voice.gain(f) * ph.sin();
        }
        out.push(e * v + 1e-3 * rng.gen_range(-1.0..1.0));
    }
    normalize(out, 0.08)
}

fn normalize(mut v: Vec<f64>, target_rms: f64) -> Vec<f64> {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = target_rms / rms;
        v.iter_mut().for_each(|x| *x *= g);
    }
    v
}

fn mouth_frame(voice: &Voice, opening: f64, px: u32, rng: &mut ChaCha8Rng) -> GrayImage {
    let c = px as f64 / 2.0;
    let scale = px as f64 / 96.0;
    let (rx, ry) = (voice.lip_width * scale, (3.0 + 20.0 * opening) * scale);
    let lip = 4.0 * scale;
    GrayImage::from_fn(px, px, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
        let inner = (dx / rx).powi(2) + (dy / ry).powi(2);
        let outer = (dx / (rx + lip)).powi(2) + (dy / (ry + lip)).powi(2);
        let base = if inner <= 1.0 {
            35.0
        } else if outer <= 1.0 {
            voice.lip_tone
        } else {
            voice.skin
        };
        image::Luma([(base + rng.gen_range(-4.0..4.0)).clamp(0.0, 255.0) as u8])
    })
}

fn face_image(voice: &Voice, px: u32, jitter: f64) -> RgbImage {
    let (fx, fy) = voice.face_freq;
    RgbImage::from_fn(px, px, |x, y| {
        let (u, v) = (x as f64 / px as f64, y as f64 / px as f64);
        let pattern = (2.0 * PI * (fx * u + fy * v)).sin();
        let mut rgb = [0u8; 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            let val = voice.face_rgb[c] + 0.15 * pattern * (c as f64 - 1.0) + jitter;
            *out = (val.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        image::Rgb(rgb)
    })
}

fn noise_clip(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let alpha = rng.gen_range(0.05..0.6);
    let tones: Vec<(f64, f64)> = (0..2)
        .map(|_| (rng.gen_range(50.0..4000.0), rng.gen_range(0.1..0.5)))
        .collect();
    let mut lp = 0.0;
    let v = (0..len)
        .map(|n| {
            lp += alpha * (rng.gen_range(-1.0..1.0) - lp);
            let t = n as f64 / sr;
            lp + tones.iter().map(|&(f, a)| a * (2.0 * PI * f * t).sin()).sum::<f64>() * 0.2
        })
        .collect();
    normalize(v, 0.08)
}

fn save_png<P: image::PixelWithColorType>(img: &image::ImageBuffer<P, Vec<P::Subpixel>>, path: &Path) -> Result<()>
where
    [P::Subpixel]: image::EncodableLayout,
{
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other}", path.display())),
    })
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes `n_speakers * clips_per_speaker` clips plus a noise pool under
/// `dir`; every speaker is its own video. Paths in the manifest are relative
/// to it.
pub fn make_synthetic_fixture(dir: &Path, rng_seed: u64, n_speakers: usize, clips_per_speaker: usize) -> Result<FixtureInfo> {
    make_synthetic_fixture_with(dir, rng_seed, n_speakers, clips_per_speaker, &FixtureOptions::default())
}

pub fn make_synthetic_fixture_with(
    dir: &Path,
    rng_seed: u64,
    n_speakers: usize,
    clips_per_speaker: usize,
    opts: &FixtureOptions,
) -> Result<FixtureInfo> {
    if n_speakers < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 speakers, got {n_speakers}")));
    }
    if clips_per_speaker == 0 {
        return Err(Error::InvalidInput("clips_per_speaker must be positive".into()));
    }
    let len = (opts.clip_seconds * SAMPLE_RATE as f64).round() as usize;
    let n_frames = (opts.clip_seconds * opts.fps).floor() as usize;
    let spf = SAMPLE_RATE as f64 / opts.fps;
    mkdir(&dir.join("audio"))?;
    let mut entries = Vec::new();
    for s in 0..n_speakers {
        let voice = Voice::draw(&mut ChaCha8Rng::seed_from_u64(mix_seed(rng_seed, &[1, s as u64])));
        for c in 0..clips_per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rng_seed, &[2, s as u64, c as u64]));
            let clip_id = format!("spk{s:02}_clip{c:02}");
            let env = envelope(&mut rng, len);
            let audio = speech(&voice, &env, &mut rng);
            let audio_rel = PathBuf::from("audio").join(format!("{clip_id}.wav"));
            write_wav(&dir.join(&audio_rel), &Waveform::new(audio, SAMPLE_RATE)?)?;

            let roi_rel = PathBuf::from("rois").join(&clip_id);
            mkdir(&dir.join(&roi_rel))?;
            for f in 0..n_frames {
                let (a, b) = ((f as f64 * spf) as usize, (((f + 1) as f64 * spf) as usize).min(len));
                let opening = env[a..b].iter().sum::<f64>() / (b - a).max(1) as f64;
                let img = mouth_frame(&voice, opening, opts.roi_px, &mut rng);
                save_png(&img, &dir.join(&roi_rel).join(format!("{f:05}.png")))?;
            }

            let face_rel = PathBuf::from("faces").join(&clip_id);
            mkdir(&dir.join(&face_rel))?;
            for k in 0..opts.faces_per_clip.max(1) {
                let img = face_image(&voice, opts.face_px, rng.gen_range(-0.05..0.05));
                save_png(&img, &dir.join(&face_rel).join(format!("{k:04}.png")))?;
            }
            entries.push(ManifestEntry {
                clip_id,
                audio_path: audio_rel,
                roi_dir: roi_rel,
                face_dir: face_rel,
                video_id: format!("video{s:02}"),
            });
        }
    }
    let noise_dir = dir.join("noise");
    mkdir(&noise_dir)?;
    for k in 0..opts.noise_clips {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rng_seed, &[3, k as u64]));
        let w = Waveform::new(noise_clip(&mut rng, len), SAMPLE_RATE)?;
        write_wav(&noise_dir.join(format!("noise{k:02}.wav")), &w)?;
    }
    let manifest_path = dir.join("manifest.jsonl");
    write_manifest(&manifest_path, &entries)?;
    Ok(FixtureInfo {
        manifest_path,
        noise_dir,
        entries,
    })
}
