use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lip-stream augmentation: a circular time shift plus an occluded span.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    /// Seconds.
    pub time_shift: f64,
    /// Seconds.
    pub occlusion_duration: f64,
    /// First occluded frame.
    pub occlusion_start: usize,
    pub enabled: bool,
}

impl CorruptionSpec {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn shift_frames(&self, fps: f64) -> usize {
        (self.time_shift * fps).round() as usize
    }

    pub fn occluded_frames(&self, fps: f64) -> usize {
        (self.occlusion_duration * fps).round() as usize
    }

    /// Checks the spec against a segment of `n_frames` at `fps`.
    pub fn validate(&self, n_frames: usize, fps: f64) -> Result<()> {
        let seg = n_frames as f64 / fps;
        for (name, v) in [
            ("time_shift", self.time_shift),
            ("occlusion_duration", self.occlusion_duration),
        ] {
            if !(0.0..=seg).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "{name} {v} s outside the {seg} s segment"
                )));
            }
        }
        if self.occlusion_start + self.occluded_frames(fps) > n_frames {
            return Err(Error::InvalidInput(format!(
                "occlusion of {} frames from frame {} exceeds {n_frames} frames",
                self.occluded_frames(fps),
                self.occlusion_start
            )));
        }
        Ok(())
    }

    /// Draws a spec with the shift uniform in `[0, max_shift]` seconds and a
    /// whole number of occluded frames spanning at most `max_occlusion`.
    pub fn sample(rng: &mut impl Rng, n_frames: usize, fps: f64, max_shift: f64, max_occlusion: f64) -> Self {
        let seg = n_frames as f64 / fps;
        let time_shift = rng.gen_range(0.0..=max_shift.min(seg));
        let max_occ = ((max_occlusion.min(seg) * fps).floor() as usize).min(n_frames);
        let occ = rng.gen_range(0..=max_occ);
        let occlusion_start = rng.gen_range(0..=n_frames - occ);
        Self {
            time_shift,
            occlusion_duration: occ as f64 / fps,
            occlusion_start,
            enabled: true,
        }
    }
}

/// Visual input for one speaker over one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTrackInput {
    /// `(N, H, W)` grayscale in `[0, 1]`.
    pub mouth_rois: Array3<f32>,
    /// `(3, S, S)` RGB in `[0, 1]`.
    pub face_image: Array3<f32>,
    pub corruption: CorruptionSpec,
}

impl FaceTrackInput {
    pub fn frames(&self) -> usize {
        self.mouth_rois.len_of(Axis(0))
    }
}

/// Circularly shifts the ROI frames by `round(time_shift * fps)` and replaces
/// the occluded span with the mean frame. `rng_seed` picks the shift
/// direction.
pub fn corrupt_rois(f: &FaceTrackInput, spec: &CorruptionSpec, fps: f64, rng_seed: u64) -> Result<FaceTrackInput> {
    if !spec.enabled {
        return Ok(f.clone());
    }
    let n = f.frames();
    spec.validate(n, fps)?;
    let mean: Array2<f32> = f
        .mouth_rois
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::InvalidInput("no ROI frames".into()))?;
    let shift = spec.shift_frames(fps) % n.max(1);
    let forward = ChaCha8Rng::seed_from_u64(rng_seed).gen_bool(0.5);
    let mut out = f.mouth_rois.clone();
    for i in 0..n {
        let src = if forward { (i + n - shift) % n } else { (i + shift) % n };
        out.index_axis_mut(Axis(0), i)
            .assign(&f.mouth_rois.index_axis(Axis(0), src));
    }
    let occ = spec.occluded_frames(fps);
    for i in spec.occlusion_start..spec.occlusion_start + occ {
        out.index_axis_mut(Axis(0), i).assign(&mean);
    }
    Ok(FaceTrackInput {
        mouth_rois: out,
        face_image: f.face_image.clone(),
        corruption: *spec,
    })
}
