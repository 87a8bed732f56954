use ndarray::{s, Array2, Zip};

use super::ComplexSpectrogram;
use crate::error::{Error, Result};

/// Regularizer added to `|X|^2` in ratio masks.
pub const CIRM_EPS: f64 = 1e-8;

/// Complex ratio mask with every component bounded by `bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMask {
    pub real: Array2<f64>,
    pub imag: Array2<f64>,
    pub bound: f64,
}

impl ComplexMask {
    pub fn new(real: Array2<f64>, imag: Array2<f64>, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidInput(format!("mask bound {bound}")));
        }
        if real.dim() != imag.dim() {
            return Err(Error::Shape(format!(
                "mask real {:?} vs imag {:?}",
                real.dim(),
                imag.dim()
            )));
        }
        if let Some(v) = real
            .iter()
            .chain(imag.iter())
            .find(|v| !(v.abs() <= bound))
        {
            return Err(Error::InvalidInput(format!(
                "mask component {v} outside [-{bound}, {bound}]"
            )));
        }
        Ok(Self { real, imag, bound })
    }

    /// Mask of `1 + 0j` everywhere.
    pub fn identity(freq_bins: usize, frames: usize, bound: f64) -> Self {
        Self {
            real: Array2::ones((freq_bins, frames)),
            imag: Array2::zeros((freq_bins, frames)),
            bound: bound.max(1.0),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.real.dim()
    }

    pub fn max_abs(&self) -> f64 {
        self.real
            .iter()
            .chain(self.imag.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(2, F, T)` planes, real first.
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
        bound: f64,
    ) -> Result<Self> {
        let plane = freq_bins * frames;
        if data.len() != 2 * plane {
            return Err(Error::Shape(format!(
                "{} values for a 2x{freq_bins}x{frames} mask",
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
        Self::new(conv(&data[..plane]), conv(&data[plane..]), bound)
    }
}

fn check_same(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// `S / X` with `CIRM_EPS` added to `|X|^2`, components clamped to `[-k, k]`.
pub fn compute_cirm(
    source: &ComplexSpectrogram,
    mixture: &ComplexSpectrogram,
    k: f64,
) -> Result<ComplexMask> {
    check_same(source.shape(), mixture.shape(), "cirm")?;
    if !(k > 0.0) {
        return Err(Error::InvalidInput(format!("mask bound {k}")));
    }
    let shape = source.shape();
    let mut real = Array2::zeros(shape);
    let mut imag = Array2::zeros(shape);
    Zip::from(&mut real)
        .and(&mut imag)
        .and(&source.real)
        .and(&source.imag)
        .and(&mixture.real)
        .and(&mixture.imag)
        .for_each(|mr, mi, &sr, &si, &xr, &xi| {
            let den = xr * xr + xi * xi + CIRM_EPS;
            *mr = ((sr * xr + si * xi) / den).clamp(-k, k);
            *mi = ((si * xr - sr * xi) / den).clamp(-k, k);
        });
    Ok(ComplexMask {
        real,
        imag,
        bound: k,
    })
}

pub fn apply_mask(x: &ComplexSpectrogram, m: &ComplexMask) -> Result<ComplexSpectrogram> {
    check_same(x.shape(), m.shape(), "apply_mask")?;
    let shape = x.shape();
    let mut real = Array2::zeros(shape);
    let mut imag = Array2::zeros(shape);
    Zip::from(&mut real)
        .and(&mut imag)
        .and(&x.real)
        .and(&x.imag)
        .and(&m.real)
        .and(&m.imag)
        .for_each(|or, oi, &xr, &xi, &mr, &mi| {
            *or = xr * mr - xi * mi;
            *oi = xr * mi + xi * mr;
        });
    Ok(ComplexSpectrogram {
        real,
        imag,
        config: x.config,
    })
}

/// Drops the highest frequency bin.
pub fn crop_for_embedding(s: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    let f = s.freq_bins();
    if f < 257 {
        return Err(Error::Shape(format!(
            "crop_for_embedding needs at least 257 bins, got {f}"
        )));
    }
    Ok(ComplexSpectrogram {
        real: s.real.slice(s![..f - 1, ..]).to_owned(),
        imag: s.imag.slice(s![..f - 1, ..]).to_owned(),
        config: s.config,
    })
}
