//! Waveforms, STFT/ISTFT, mixing and complex ratio masks.

mod mask;
mod stft;
mod wav;

pub use mask::{apply_mask, compute_cirm, crop_for_embedding, ComplexMask, CIRM_EPS};
pub use stft::{istft, stft, StftConfig, WindowKind};
pub use wav::{read_wav, write_wav};

use ndarray::Array2;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    /// Copy of `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.samples.len() {
            return Err(Error::Shape(format!(
                "slice {start}+{len} beyond {} samples",
                self.samples.len()
            )));
        }
        Ok(Self {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| gain * v).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Real and imaginary `F × T` grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub real: Array2<f64>,
    pub imag: Array2<f64>,
    pub config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn new(real: Array2<f64>, imag: Array2<f64>, config: StftConfig) -> Result<Self> {
        if real.dim() != imag.dim() {
            return Err(Error::Shape(format!(
                "real {:?} vs imag {:?}",
                real.dim(),
                imag.dim()
            )));
        }
        Ok(Self { real, imag, config })
    }

    pub fn zeros(freq_bins: usize, frames: usize, config: StftConfig) -> Self {
        Self {
            real: Array2::zeros((freq_bins, frames)),
            imag: Array2::zeros((freq_bins, frames)),
            config,
        }
    }

    pub fn freq_bins(&self) -> usize {
        self.real.nrows()
    }

    pub fn frames(&self) -> usize {
        self.real.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.real.dim()
    }

    /// `(2, F, T)` planes, real first, in row-major order.
    pub fn to_planes<T: avsep_tensor::Element>(&self) -> Vec<T> {
        self.real
            .iter()
            .chain(self.imag.iter())
            .map(|&v| T::from_f64_lossy(v))
            .collect()
    }

    pub fn from_planes<T: avsep_tensor::Element>(
        data: &[T],
        freq_bins: usize,
        frames: usize,
        config: StftConfig,
    ) -> Result<Self> {
        let plane = freq_bins * frames;
        if data.len() != 2 * plane {
            return Err(Error::Shape(format!(
                "{} values for a 2x{freq_bins}x{frames} grid",
                data.len()
            )));
        }
        let conv = |s: &[T]| {
            Array2::from_shape_vec(
                (freq_bins, frames),
                s.iter().map(|v| v.to_f64_lossy()).collect(),
            )
            .expect("length checked")
        };
        Ok(Self {
            real: conv(&data[..plane]),
            imag: conv(&data[plane..]),
            config,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.real.iter().chain(self.imag.iter()).all(|v| v.is_finite())
    }
}

/// Returns `(a + scale_b * b, scale_b)` with `scale_b` chosen so that
/// `rms(a) / rms(scale_b * b)` equals `10^(snr_db / 20)`. `+inf` drops `b`.
pub fn mix_waveforms(a: &Waveform, b: &Waveform, snr_db: f64) -> Result<(Waveform, f64)> {
    if a.len() != b.len() || a.sample_rate != b.sample_rate {
        return Err(Error::Shape(format!(
            "cannot mix {} samples @{} Hz with {} samples @{} Hz",
            a.len(),
            a.sample_rate,
            b.len(),
            b.sample_rate
        )));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::InvalidInput(format!("snr {snr_db} dB")));
    }
    let scale = if snr_db == f64::INFINITY {
        0.0
    } else {
        let rb = b.rms();
        if rb == 0.0 {
            return Err(Error::DegenerateSource(
                "second source is silent at a finite SNR".into(),
            ));
        }
        a.rms() / (rb * 10f64.powf(snr_db / 20.0))
    };
    let samples = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(&x, &y)| x + scale * y)
        .collect();
    Ok((
        Waveform {
            samples,
            sample_rate: a.sample_rate,
        },
        scale,
    ))
}
