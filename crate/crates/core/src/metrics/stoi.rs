//! Short-time objective intelligibility, following the reference
//! implementation's constants and frame handling.

use std::f64::consts::PI;

use realfft::RealFftPlanner;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

const FS: usize = 10_000;
const N_FRAME: usize = 256;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per intermediate intelligibility segment.
const SEG: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = 1e-12;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polyphase rational resampling with a Blackman-windowed sinc low-pass.
pub fn resample(x: &[f64], from: usize, to: usize) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let g = gcd(from, to);
    let (up, down) = (to / g, from / g);
    let m = up.max(down);
    let half = 10 * m;
    let cutoff = 1.0 / (2.0 * m as f64);
    let taps: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let n = k as f64 - half as f64;
            let sinc = if n == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * n).sin() / (PI * n)
            };
            let w = 0.42 - 0.5 * (2.0 * PI * k as f64 / (2 * half) as f64).cos()
                + 0.08 * (4.0 * PI * k as f64 / (2 * half) as f64).cos();
            up as f64 * sinc * w
        })
        .collect();
    let out_len = (x.len() * up).div_ceil(down);
    (0..out_len)
        .map(|n| {
            // position in the zero-stuffed signal, centered on the filter
            let u = (n * down + half) as isize;
            let mut acc = 0.0;
            let first = (u - 2 * half as isize).max(0);
            let mut j = first + (up as isize - first % up as isize) % up as isize;
            while j <= u {
                let idx = (j / up as isize) as usize;
                if idx < x.len() {
                    acc += taps[(u - j) as usize] * x[idx];
                }
                j += up as isize;
            }
            acc
        })
        .collect()
}

/// Periodic-free Hann of `n` points, as `hanning(n + 2)[1:-1]`.
fn hann(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize, frame: usize, hop: usize) -> Vec<usize> {
    if len < frame {
        return Vec::new();
    }
    (0..=(len - frame)).step_by(hop).collect()
}

/// Drops frames of `x` more than `DYN_RANGE_DB` below its loudest frame, and
/// the same frames of `y`, then overlap-adds the rest.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = N_FRAME / 2;
    let w = hann(N_FRAME);
    let starts = frame_starts(x.len(), N_FRAME, hop);
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..N_FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - e < DYN_RANGE_DB)
        .map(|(&s, _)| s)
        .collect();
    let out_len = if keep.is_empty() { 0 } else { (keep.len() - 1) * hop + N_FRAME };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (k, &s) in keep.iter().enumerate() {
        for i in 0..N_FRAME {
            xs[k * hop + i] += w[i] * x[s + i];
            ys[k * hop + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// One-third octave band matrix over the `NFFT / 2 + 1` bins.
fn octave_bands() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let f: Vec<f64> = (0..bins).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    (0..NUM_BANDS)
        .map(|i| {
            let lo = MIN_FREQ * 2f64.powf((2.0 * i as f64 - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * i as f64 + 1.0) / 6.0);
            let nearest = |target: f64| {
                (0..bins)
                    .min_by(|&a, &b| (f[a] - target).powi(2).total_cmp(&(f[b] - target).powi(2)))
                    .expect("bins")
            };
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// `(bands, frames)` one-third octave envelopes.
fn band_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann(N_FRAME);
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(NFFT);
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let bands = octave_bands();
    let starts = frame_starts(x.len(), N_FRAME, N_FRAME / 2);
    let mut out = vec![Vec::with_capacity(starts.len()); NUM_BANDS];
    for &s in &starts {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..N_FRAME {
            buf[i] = w[i] * x[s + i];
        }
        fft.process(&mut buf, &mut spec).expect("fft sizes match");
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = spec[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[b].push(e.sqrt());
        }
    }
    out
}

/// STOI of `processed` against `clean`; both at the same rate and length.
pub fn stoi(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    if clean.len() != processed.len() || clean.sample_rate() != processed.sample_rate() {
        return Err(Error::Shape(format!(
            "stoi inputs differ: {} @{} Hz vs {} @{} Hz",
            clean.len(),
            clean.sample_rate(),
            processed.len(),
            processed.sample_rate()
        )));
    }
    if clean.energy() == 0.0 {
        return Err(Error::SilentReference("clean signal is all zeros".into()));
    }
    let sr = clean.sample_rate() as usize;
    let x = resample(clean.samples(), sr, FS);
    let y = resample(processed.samples(), sr, FS);
    let (x, y) = remove_silent_frames(&x, &y);
    let xe = band_envelopes(&x);
    let ye = band_envelopes(&y);
    let frames = xe[0].len();
    if frames < SEG {
        return Err(Error::InvalidInput(format!(
            "{frames} non-silent frames, STOI needs at least {SEG} (about 384 ms)"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEG..=frames {
        for b in 0..NUM_BANDS {
            let xs = &xe[b][m - SEG..m];
            let ys = &ye[b][m - SEG..m];
            let nx = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = nx / (ny + EPS);
            let yp: Vec<f64> = ys.iter().zip(xs).map(|(&yv, &xv)| (yv * alpha).min(xv * clip)).collect();
            let mx = xs.iter().sum::<f64>() / SEG as f64;
            let my = yp.iter().sum::<f64>() / SEG as f64;
            let xc: Vec<f64> = xs.iter().map(|v| v - mx).collect();
            let yc: Vec<f64> = yp.iter().map(|v| v - my).collect();
            let dx = xc.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS;
            let dy = yc.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS;
            total += xc.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>() / (dx * dy);
            count += 1;
        }
    }
    Ok(total / count as f64)
}
