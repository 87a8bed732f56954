use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use ndarray::{s, Array3};

use super::corrupt::{CorruptionSpec, FaceTrackInput};
use super::manifest::Manifest;
use crate::dsp::{read_wav, Waveform};
use crate::error::{Error, Result};

/// Fraction of an ROI frame kept by the center crop (88 of 96 pixels).
const ROI_CROP: f64 = 88.0 / 96.0;

/// How media is brought to model resolution on load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediaConfig {
    pub roi_size: usize,
    pub face_size: usize,
    pub fps: f64,
}

/// Decoded media for one manifest entry.
#[derive(Debug, Clone)]
pub struct ClipMedia {
    pub audio: Waveform,
    /// `(frames, roi, roi)` grayscale.
    pub rois: Array3<u8>,
    /// `(3, face, face)` RGB per face crop.
    pub faces: Vec<Array3<u8>>,
}

impl ClipMedia {
    pub fn frames(&self) -> usize {
        self.rois.dim().0
    }

    /// Face crop aligned with ROI frame `frame`.
    pub fn face_index_for_frame(&self, frame: usize) -> usize {
        let n = self.frames().max(1);
        (frame.min(n - 1) * self.faces.len() / n).min(self.faces.len() - 1)
    }

    /// Visual input covering frames `[start, start + n)`.
    pub fn track(&self, start: usize, n: usize, face: usize) -> Result<FaceTrackInput> {
        if start + n > self.frames() {
            return Err(Error::Shape(format!(
                "frames {start}..{} beyond {} ROI frames",
                start + n,
                self.frames()
            )));
        }
        let mouth_rois = self
            .rois
            .slice(s![start..start + n, .., ..])
            .mapv(|v| v as f32 / 255.0);
        let face_image = self.faces[face].mapv(|v| v as f32 / 255.0);
        Ok(FaceTrackInput {
            mouth_rois,
            face_image,
            corruption: CorruptionSpec::disabled(),
        })
    }
}

/// Manifest plus all decoded media, held in memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    manifest: Manifest,
    clips: Vec<ClipMedia>,
    media: MediaConfig,
}

impl Corpus {
    pub fn load(manifest: Manifest, media: MediaConfig) -> Result<Self> {
        let clips = manifest
            .entries()
            .iter()
            .map(|e| {
                let audio = read_wav(&e.audio_path)?;
                let roi_frames = image_files(&e.roi_dir)?
                    .iter()
                    .map(|p| load_roi(p, media.roi_size))
                    .collect::<Result<Vec<_>>>()?;
                if roi_frames.is_empty() {
                    return Err(Error::MissingAsset(vec![e.roi_dir.clone()]));
                }
                let mut rois = Array3::zeros((roi_frames.len(), media.roi_size, media.roi_size));
                for (i, f) in roi_frames.iter().enumerate() {
                    rois.slice_mut(s![i, .., ..]).assign(f);
                }
                let faces = image_files(&e.face_dir)?
                    .iter()
                    .map(|p| load_face(p, media.face_size))
                    .collect::<Result<Vec<_>>>()?;
                if faces.is_empty() {
                    return Err(Error::MissingAsset(vec![e.face_dir.clone()]));
                }
                Ok(ClipMedia { audio, rois, faces })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest,
            clips,
            media,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn clips(&self) -> &[ClipMedia] {
        &self.clips
    }

    pub fn clip(&self, i: usize) -> &ClipMedia {
        &self.clips[i]
    }

    pub fn media(&self) -> MediaConfig {
        self.media
    }

    /// Clips whose video passes `keep`, without reloading media.
    pub fn restrict(&self, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let selected: Vec<usize> = (0..self.clips.len())
            .filter(|&i| keep(&self.manifest.entries()[i].video_id))
            .collect();
        let entries = selected.iter().map(|&i| self.manifest.entries()[i].clone()).collect();
        Ok(Self {
            manifest: Manifest::from_entries(entries)?,
            clips: selected.iter().map(|&i| self.clips[i].clone()).collect(),
            media: self.media,
        })
    }
}

/// Image files in `dir`, sorted by file name.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| x.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other}", path.display())),
    })
}

/// Center-crops the frame and resizes it to `size` if needed.
fn load_roi(path: &Path, size: usize) -> Result<ndarray::Array2<u8>> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let side = ((w.min(h) as f64 * ROI_CROP).round() as u32).max(1);
    let cropped = imageops::crop_imm(&img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    let img = if side as usize == size {
        cropped
    } else {
        imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle)
    };
    Ok(ndarray::Array2::from_shape_fn((size, size), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0]
    }))
}

fn load_face(path: &Path, size: usize) -> Result<Array3<u8>> {
    let img = open(path)?.to_rgb8();
    let img = if img.dimensions() == (size as u32, size as u32) {
        img
    } else {
        imageops::resize(&img, size as u32, size as u32, FilterType::Triangle)
    };
    Ok(Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32)[c]
    }))
}

/// Every `.wav` file in `dir`, sorted by name.
pub fn load_noise_pool(dir: &Path) -> Result<Vec<Waveform>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    files.sort();
    files.iter().map(|p| read_wav(p)).collect()
}
