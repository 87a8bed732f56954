use ndarray::Array2;
use realfft::num_complex::Complex;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use super::{ComplexSpectrogram, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann.
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: WindowKind,
    pub center_pad: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_length: 400,
            hop: 160,
            fft_size: 512,
            window: WindowKind::Hann,
            center_pad: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_length || self.window_length > self.fft_size {
            return Err(Error::Config(format!(
                "stft needs 0 < hop <= window_length <= fft_size, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if self.center_pad {
            1 + len / self.hop
        } else if len < self.window_length {
            0
        } else {
            1 + (len - self.window_length) / self.hop
        }
    }

    pub fn window_values(&self) -> Vec<f64> {
        let n = self.window_length as f64;
        match self.window {
            WindowKind::Hann => (0..self.window_length)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
                .collect(),
        }
    }

    fn pad(&self) -> usize {
        if self.center_pad {
            self.window_length / 2
        } else {
            0
        }
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(Error::InvalidInput("stft of an empty waveform".into()));
    }
    if let Some(i) = w.samples().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
    }
    let pad = cfg.pad();
    if cfg.center_pad && w.len() <= pad {
        return Err(Error::InvalidInput(format!(
            "{} samples is too short for reflect padding of {pad}",
            w.len()
        )));
    }
    let padded = if pad > 0 {
        reflect_pad(w.samples(), pad)
    } else {
        w.samples().to_vec()
    };
    let frames = cfg.frames_for(w.len());
    if frames == 0 {
        return Err(Error::InvalidInput(format!(
            "{} samples is shorter than one window",
            w.len()
        )));
    }
    let window = cfg.window_values();
    let bins = cfg.freq_bins();
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let mut real = Array2::zeros((bins, frames));
    let mut imag = Array2::zeros((bins, frames));
    for t in 0..frames {
        let start = t * cfg.hop;
        buf.iter_mut().for_each(|v| *v = 0.0);
        for (i, (b, &wv)) in buf.iter_mut().zip(&window).enumerate() {
            *b = padded[start + i] * wv;
        }
        fft.process(&mut buf, &mut spec)
            .expect("buffer sizes come from the plan");
        for (k, c) in spec.iter().enumerate() {
            real[(k, t)] = c.re;
            imag[(k, t)] = c.im;
        }
    }
    Ok(ComplexSpectrogram {
        real,
        imag,
        config: *cfg,
    })
}

/// Least-squares overlap-add inverse: windowed frames are summed and divided
/// by the accumulated squared window.
pub fn istft(s: &ComplexSpectrogram, cfg: &StftConfig, out_length: usize) -> Result<Waveform> {
    cfg.validate()?;
    let bins = cfg.freq_bins();
    if s.freq_bins() != bins || s.imag.dim() != s.real.dim() {
        return Err(Error::Shape(format!(
            "spectrogram {:?} does not match fft size {}",
            s.shape(),
            cfg.fft_size
        )));
    }
    let frames = s.frames();
    if out_length > frames * cfg.hop {
        return Err(Error::Shape(format!(
            "out_length {out_length} exceeds {frames} frames x hop {}",
            cfg.hop
        )));
    }
    let pad = cfg.pad();
    let span = (frames.max(1) - 1) * cfg.hop + cfg.window_length;
    let window = cfg.window_values();
    let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(cfg.fft_size);
    let mut spec = ifft.make_input_vec();
    let mut buf = ifft.make_output_vec();
    let mut acc = vec![0.0; span];
    let mut wsum = vec![0.0; span];
    let norm = 1.0 / cfg.fft_size as f64;
    for t in 0..frames {
        for (k, c) in spec.iter_mut().enumerate() {
            *c = Complex::new(s.real[(k, t)], s.imag[(k, t)]);
        }
        // a real signal has no imaginary part at DC and Nyquist
        spec[0].im = 0.0;
        if cfg.fft_size % 2 == 0 {
            spec[bins - 1].im = 0.0;
        }
        ifft.process(&mut spec, &mut buf)
            .expect("buffer sizes come from the plan");
        let start = t * cfg.hop;
        for (i, &wv) in window.iter().enumerate() {
            acc[start + i] += buf[i] * norm * wv;
            wsum[start + i] += wv * wv;
        }
    }
    let mut out = vec![0.0; out_length];
    for (n, o) in out.iter_mut().enumerate() {
        let p = n + pad;
        if p >= span {
            break;
        }
        if wsum[p] < 1e-12 {
            if p >= cfg.hop && p + cfg.hop < span {
                return Err(Error::Synthesis(format!(
                    "window power {} at sample {n}",
                    wsum[p]
                )));
            }
            continue;
        }
        *o = acc[p] / wsum[p];
    }
    Waveform::new(out, super::SAMPLE_RATE)
}
