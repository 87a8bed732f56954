use avsep_tensor::{Element, Tensor};
use ndarray::{Array2, Array3};

use super::config::{ModelConfig, SeparationMode};
use super::nets::{AudioUnet, Encoded, LipNet, ResNet};
use super::params::{Binder, ModelParams, ParamSpec};
use crate::data::FaceTrackInput;
use crate::dsp::{ComplexMask, ComplexSpectrogram};
use crate::embedding::{Embedding, Modality};
use crate::error::{Error, Result};

/// The audio-visual separator: lip, face and voice encoders plus the
/// spectrogram mask predictor.
#[derive(Debug, Clone)]
pub struct Separator {
    cfg: ModelConfig,
    lip: Option<LipNet>,
    face: Option<ResNet>,
    vocal: ResNet,
    unet: AudioUnet,
    specs: Vec<ParamSpec>,
}

impl Separator {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let lip = cfg.use_lip.then(|| LipNet::new(&cfg));
        let face = cfg.use_face.then(|| ResNet::new("face", 3, cfg.face_dim, &cfg));
        let vocal = ResNet::new("vocal", 2, cfg.embed_dim, &cfg);
        let unet = AudioUnet::new(&cfg, 2 * cfg.masks_per_pass());
        let mut specs = Vec::new();
        if let Some(l) = &lip {
            l.specs(&mut specs);
        }
        if let Some(f) = &face {
            f.specs(&mut specs);
        }
        unet.specs(&mut specs);
        vocal.specs(&mut specs);
        Ok(Self {
            cfg,
            lip,
            face,
            vocal,
            unet,
            specs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn init_params<T: Element>(&self, seed: u64) -> ModelParams<T> {
        ModelParams::init(&self.specs, seed, &self.cfg.digest())
    }

    /// Rejects parameter sets built for a different configuration.
    pub fn check_params<T: Element>(&self, params: &ModelParams<T>) -> Result<()> {
        let digest = self.cfg.digest();
        if params.config_digest() != digest {
            return Err(Error::IncompatibleCheckpoint(format!(
                "parameter digest {} does not match model digest {digest}",
                params.config_digest()
            )));
        }
        params.validate(&self.specs)
    }

    pub fn has_face_encoder(&self) -> bool {
        self.face.is_some()
    }

    pub fn has_lip_encoder(&self) -> bool {
        self.lip.is_some()
    }

    // ---- graph level -------------------------------------------------

    pub(crate) fn lip_graph<T: Element>(&self, b: &Binder<T>, rois: &Tensor<T>) -> Option<Tensor<T>> {
        self.lip.as_ref().map(|l| l.forward(b, rois))
    }

    pub(crate) fn face_graph<T: Element>(&self, b: &Binder<T>, images: &Tensor<T>) -> Option<Tensor<T>> {
        self.face
            .as_ref()
            .map(|f| f.forward(b, &images.add_scalar(T::from_f64_lossy(-0.5))))
    }

    pub(crate) fn voice_graph<T: Element>(&self, b: &Binder<T>, specs: &Tensor<T>) -> Tensor<T> {
        self.vocal.forward(b, specs)
    }

    pub(crate) fn encode_graph<T: Element>(&self, b: &Binder<T>, x: &Tensor<T>) -> Encoded<T> {
        self.unet.encode(b, x)
    }

    pub(crate) fn decode_graph<T: Element>(
        &self,
        b: &Binder<T>,
        enc: &Encoded<T>,
        rows: &[usize],
        visual: Option<&Tensor<T>>,
    ) -> Tensor<T> {
        self.unet.decode(b, enc, rows, visual)
    }

    /// Per-speaker fused visual feature `(R, V, 1, N)`: lip features with the
    /// face embedding replicated along time.
    pub(crate) fn visual_graph<T: Element>(&self, lip: Option<&Tensor<T>>, face: Option<&Tensor<T>>) -> Option<Tensor<T>> {
        let n = self.cfg.n_frames;
        let mut parts = Vec::new();
        if let Some(l) = lip {
            parts.push(l.reshape(&[l.dim(0), l.dim(1), 1, n]));
        }
        if let Some(f) = face {
            parts.push(f.reshape(&[f.dim(0), f.dim(1), 1, 1]).repeat_axis(3, n));
        }
        match parts.len() {
            0 => None,
            1 => parts.pop(),
            _ => Some(Tensor::concat(&parts, 1)),
        }
    }

    /// Visual features for the given tracks, `(R, V, 1, N)`.
    pub(crate) fn visual_for<T: Element>(&self, b: &Binder<T>, tracks: &[&FaceTrackInput]) -> Result<Option<Tensor<T>>> {
        if self.cfg.audio_only() {
            return Ok(None);
        }
        let lip = match &self.lip {
            Some(_) => self.lip_graph(b, &rois_tensor(tracks, &self.cfg)?),
            None => None,
        };
        let face = match &self.face {
            Some(_) => self.face_graph(b, &faces_tensor(tracks, &self.cfg)?),
            None => None,
        };
        Ok(self.visual_graph(lip.as_ref(), face.as_ref()))
    }

    // ---- value level -------------------------------------------------

    /// `(N, H, W)` mouth ROIs to a `V_l x N` feature map.
    pub fn lip_motion_encoder<T: Element>(&self, params: &ModelParams<T>, rois: &Array3<f32>) -> Result<Array2<f64>> {
        if self.lip.is_none() {
            return Err(Error::Config("model was built without the lip encoder".into()));
        }
        let track = FaceTrackInput {
            mouth_rois: rois.clone(),
            face_image: Array3::zeros((3, self.cfg.face_size, self.cfg.face_size)),
            corruption: Default::default(),
        };
        let x = rois_tensor::<T>(&[&track], &self.cfg)?;
        let b = Binder::new(params, false);
        let y = self.lip_graph(&b, &x).expect("lip encoder present");
        let (v, n) = (y.dim(1), y.dim(2));
        Ok(Array2::from_shape_vec((v, n), y.data().iter().map(|v| v.to_f64_lossy()).collect())
            .expect("shape from tensor"))
    }

    /// `(3, S, S)` RGB face crop to a unit face embedding.
    pub fn face_attr_encoder<T: Element>(&self, params: &ModelParams<T>, image: &Array3<f32>) -> Result<Embedding> {
        if self.face.is_none() {
            return Err(Error::Config("model was built without the face encoder".into()));
        }
        let s = self.cfg.face_size;
        if image.dim() != (3, s, s) {
            return Err(Error::Shape(format!(
                "face image {:?}, expected (3, {s}, {s})",
                image.dim()
            )));
        }
        let x = Tensor::<T>::constant(image.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(), &[1, 3, s, s]);
        let b = Binder::new(params, false);
        let y = self.face_graph(&b, &x).expect("face encoder present");
        Embedding::new(y.data().iter().map(|v| v.to_f64_lossy()).collect(), Modality::Face)
    }

    /// Cropped `(256, T)` spectrogram to a unit voice embedding.
    pub fn vocal_attr_encoder<T: Element>(&self, params: &ModelParams<T>, spec: &ComplexSpectrogram) -> Result<Embedding> {
        let (f, t) = spec.shape();
        if f != self.cfg.freq_bins() - 1 {
            return Err(Error::Shape(format!(
                "voice encoder takes {} frequency bins, got {f}; apply crop_for_embedding first",
                self.cfg.freq_bins() - 1
            )));
        }
        let x = Tensor::<T>::constant(spec.to_planes(), &[1, 2, f, t]);
        let b = Binder::new(params, false);
        let y = self.voice_graph(&b, &x);
        Embedding::new(y.data().iter().map(|v| v.to_f64_lossy()).collect(), Modality::Voice)
    }

    /// Voice embedding plus the gradient of `<cotangent, embedding>` with
    /// respect to the cropped input spectrogram.
    pub fn vocal_attr_encoder_vjp<T: Element>(
        &self,
        params: &ModelParams<T>,
        spec: &ComplexSpectrogram,
        cotangent: &[f64],
    ) -> Result<(Embedding, ComplexSpectrogram)> {
        let (f, t) = spec.shape();
        if f != self.cfg.freq_bins() - 1 {
            return Err(Error::Shape(format!(
                "voice encoder takes {} frequency bins, got {f}; apply crop_for_embedding first",
                self.cfg.freq_bins() - 1
            )));
        }
        if cotangent.len() != self.cfg.embed_dim {
            return Err(Error::Shape(format!(
                "cotangent has {} entries, embedding has {}",
                cotangent.len(),
                self.cfg.embed_dim
            )));
        }
        let x = Tensor::<T>::param(spec.to_planes(), &[1, 2, f, t]);
        let b = Binder::new(params, false);
        let y = self.voice_graph(&b, &x);
        let grads = y.backward_with(cotangent.iter().map(|&v| T::from_f64_lossy(v)).collect());
        let g = grads.get(&x).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); 2 * f * t]);
        let emb = Embedding::new(y.data().iter().map(|v| v.to_f64_lossy()).collect(), Modality::Voice)?;
        Ok((emb, ComplexSpectrogram::from_planes(&g, f, t, spec.config.clone())?))
    }

    /// Bottleneck feature `D x 1 x N`.
    pub fn audio_encoder<T: Element>(&self, params: &ModelParams<T>, spec: &ComplexSpectrogram) -> Result<Array3<f64>> {
        let x = spec_tensor::<T>(&[spec], &self.cfg)?;
        let b = Binder::new(params, false);
        let enc = self.encode_graph(&b, &x);
        let y = &enc.bottleneck;
        Ok(
            Array3::from_shape_vec((y.dim(1), y.dim(2), y.dim(3)), y.data().iter().map(|v| v.to_f64_lossy()).collect())
                .expect("shape from tensor"),
        )
    }

    /// Activation shapes through the audio encoder, without the batch axis:
    /// both stride-2 stages, each frequency block before pooling, then the
    /// bottleneck.
    pub fn audio_encoder_trace<T: Element>(
        &self,
        params: &ModelParams<T>,
        spec: &ComplexSpectrogram,
    ) -> Result<Vec<Vec<usize>>> {
        let x = spec_tensor::<T>(&[spec], &self.cfg)?;
        let b = Binder::new(params, false);
        let enc = self.encode_graph(&b, &x);
        let mut out = vec![enc.stage1.shape()[1..].to_vec(), enc.stage2.shape()[1..].to_vec()];
        out.extend(enc.blocks.iter().map(|t| t.shape()[1..].to_vec()));
        out.push(enc.bottleneck.shape()[1..].to_vec());
        Ok(out)
    }

    /// One mask (general mode, one track), two masks (dedicated mode, tracks
    /// for A then B) or two unassigned masks (no visual cues, no tracks).
    pub fn predict_masks<T: Element>(
        &self,
        params: &ModelParams<T>,
        x: &ComplexSpectrogram,
        visuals: &[&FaceTrackInput],
    ) -> Result<Vec<ComplexMask>> {
        if visuals.len() != self.cfg.visual_inputs() {
            return Err(Error::Config(format!(
                "{:?} model{} expects {} visual stream(s), got {}",
                self.cfg.mode,
                if self.cfg.audio_only() { " without visual cues" } else { "" },
                self.cfg.visual_inputs(),
                visuals.len()
            )));
        }
        if self.cfg.mode == SeparationMode::GeneralSingleSpeaker {
            return self.predict_each(params, x, visuals);
        }
        let xt = spec_tensor::<T>(&[x], &self.cfg)?;
        let b = Binder::new(params, false);
        let vis = match self.visual_for(&b, visuals)? {
            // (2, V, 1, N) -> (1, 2V, 1, N), speaker A first
            Some(v) => Some(Tensor::concat(&[v.narrow(0, 0, 1), v.narrow(0, 1, 1)], 1)),
            None => None,
        };
        let enc = self.encode_graph(&b, &xt);
        let out = self.decode_graph(&b, &enc, &[0], vis.as_ref());
        split_masks(&out, &self.cfg)
    }

    /// General mode: one mask per track, sharing a single encoder pass.
    pub fn predict_each<T: Element>(
        &self,
        params: &ModelParams<T>,
        x: &ComplexSpectrogram,
        tracks: &[&FaceTrackInput],
    ) -> Result<Vec<ComplexMask>> {
        if self.cfg.mode != SeparationMode::GeneralSingleSpeaker {
            return Err(Error::Config("per-speaker prediction needs general_single_speaker mode".into()));
        }
        if tracks.is_empty() {
            return Err(Error::Config("at least one visual stream is required".into()));
        }
        let xt = spec_tensor::<T>(&[x], &self.cfg)?;
        let b = Binder::new(params, false);
        let vis = self.visual_for(&b, tracks)?;
        let enc = self.encode_graph(&b, &xt);
        let rows = vec![0; tracks.len()];
        let out = self.decode_graph(&b, &enc, &rows, vis.as_ref());
        split_masks(&out, &self.cfg)
    }
}

/// `(R, 2k, F, T)` mask tensor to `R * k` masks in row-major order.
pub(crate) fn split_masks<T: Element>(out: &Tensor<T>, cfg: &ModelConfig) -> Result<Vec<ComplexMask>> {
    let (f, t) = (out.dim(2), out.dim(3));
    let per = 2 * f * t;
    out.data()
        .chunks(per)
        .map(|c| ComplexMask::from_planes(c, f, t, cfg.mask_bound))
        .collect()
}

pub(crate) fn spec_tensor<T: Element>(specs: &[&ComplexSpectrogram], cfg: &ModelConfig) -> Result<Tensor<T>> {
    let (f, t) = (cfg.freq_bins(), cfg.time_frames());
    let mut data = Vec::with_capacity(specs.len() * 2 * f * t);
    for s in specs {
        if s.shape() != (f, t) {
            return Err(Error::Shape(format!(
                "spectrogram {:?}, model expects ({f}, {t})",
                s.shape()
            )));
        }
        data.extend(s.to_planes::<T>());
    }
    Ok(Tensor::constant(data, &[specs.len(), 2, f, t]))
}

pub(crate) fn rois_tensor<T: Element>(tracks: &[&FaceTrackInput], cfg: &ModelConfig) -> Result<Tensor<T>> {
    let (n, r) = (cfg.n_frames, cfg.roi_size);
    let mut data = Vec::with_capacity(tracks.len() * n * r * r);
    for tr in tracks {
        if tr.mouth_rois.dim() != (n, r, r) {
            return Err(Error::Shape(format!(
                "mouth ROIs {:?}, model expects ({n}, {r}, {r})",
                tr.mouth_rois.dim()
            )));
        }
        data.extend(tr.mouth_rois.iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    Ok(Tensor::constant(data, &[tracks.len(), 1, n, r, r]))
}

pub(crate) fn faces_tensor<T: Element>(tracks: &[&FaceTrackInput], cfg: &ModelConfig) -> Result<Tensor<T>> {
    let s = cfg.face_size;
    let mut data = Vec::with_capacity(tracks.len() * 3 * s * s);
    for tr in tracks {
        if tr.face_image.dim() != (3, s, s) {
            return Err(Error::Shape(format!(
                "face image {:?}, model expects (3, {s}, {s})",
                tr.face_image.dim()
            )));
        }
        data.extend(tr.face_image.iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    Ok(Tensor::constant(data, &[tracks.len(), 3, s, s]))
}
