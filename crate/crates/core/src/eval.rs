//! Separation and verification evaluation over a corpus.

use ndarray::s;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClipMedia, Corpus, TrainingTuple};
use crate::dsp::{apply_mask, crop_for_embedding, istft, mix_waveforms, stft, Waveform};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::infer::{assign_best_permutation, separate_clip, MaskPredictor, NeuralPredictor, OracleMasks, SpeakerVisuals, WindowConfig};
use crate::metrics::{bss_eval, stoi, verification_scores, BssMetrics, VerificationReport};
use crate::model::{ModelConfig, ModelParams, Separator};
use crate::util::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    pub pairs: usize,
    pub seed: u64,
    /// Level of the first speaker relative to the second.
    pub snr_db: f64,
    pub window: WindowConfig,
    pub stoi: bool,
}

impl EvalProtocol {
    pub fn for_model(cfg: &ModelConfig, pairs: usize, seed: u64) -> Self {
        Self {
            pairs,
            seed,
            snr_db: 0.0,
            window: WindowConfig::for_model(cfg),
            stoi: true,
        }
    }
}

/// How sources are estimated.
pub enum Estimator<'a> {
    Model(&'a NeuralPredictor),
    /// Ground-truth cIRMs through the same windowed pipeline.
    OracleMasks(ModelConfig),
    /// The mixture itself, for every source.
    Mixture,
}

impl Estimator<'_> {
    fn name(&self) -> &'static str {
        match self {
            Estimator::Model(_) => "model",
            Estimator::OracleMasks(_) => "oracle_masks",
            Estimator::Mixture => "mixture",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceScores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub stoi: Option<f64>,
    /// SDR of the unprocessed mixture against this source.
    pub mixture_sdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub pair_id: usize,
    pub clips: [String; 2],
    pub sources: Vec<SourceScores>,
    /// Output order chosen by permutation search, when outputs are unassigned.
    pub permutation: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub stoi: Option<f64>,
    pub mixture_sdr: f64,
    /// Not computed; filled by external tools reading the output WAVs.
    pub pesq: Option<f64>,
    pub auc: Option<f64>,
    pub eer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationReport {
    pub estimator: String,
    pub protocol: EvalProtocol,
    pub config_digest: String,
    pub manifest_digest: String,
    pub seed: u64,
    pub per_pair: Vec<PairReport>,
    pub aggregate: Aggregate,
}

/// Two clips of different videos, mixed at `snr_db`.
pub struct TestPair {
    pub clips: [usize; 2],
    pub mixture: Waveform,
    /// Sources as they occur in the mixture.
    pub sources: [Waveform; 2],
    pub visuals: [SpeakerVisuals; 2],
}

fn trimmed_visuals(clip: &ClipMedia, frames: usize) -> SpeakerVisuals {
    let mut v = SpeakerVisuals::from_clip(clip);
    let f = frames.min(v.frames());
    v.mouth_rois = v.mouth_rois.slice(s![..f, .., ..]).to_owned();
    v
}

/// Seeded test pairs; pair `i` depends only on `(seed, i)`.
pub fn make_test_pairs(corpus: &Corpus, cfg: &ModelConfig, pairs: usize, seed: u64, snr_db: f64) -> Result<Vec<TestPair>> {
    let videos: Vec<&Vec<usize>> = corpus.manifest().videos().values().collect();
    if videos.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "test pairs need at least 2 videos, manifest has {}",
            videos.len()
        )));
    }
    let spf = cfg.samples_per_frame();
    (0..pairs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x7061, i as u64]));
            let picked: Vec<&&Vec<usize>> = videos.choose_multiple(&mut rng, 2).collect();
            let ca = *picked[0].choose(&mut rng).expect("videos have clips");
            let cb = *picked[1].choose(&mut rng).expect("videos have clips");
            let (a, b) = (corpus.clip(ca), corpus.clip(cb));
            let len = a.audio.len().min(b.audio.len());
            let sa = a.audio.slice(0, len)?;
            let sb = b.audio.slice(0, len)?;
            let (mixture, g) = mix_waveforms(&sa, &sb, snr_db)?;
            let frames = len.div_ceil(spf);
            Ok(TestPair {
                clips: [ca, cb],
                mixture,
                sources: [sa, sb.scaled(g)],
                visuals: [trimmed_visuals(a, frames), trimmed_visuals(b, frames)],
            })
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Windowed separation of seeded test pairs, scored per source.
pub fn evaluate_separation(corpus: &Corpus, cfg: &ModelConfig, estimator: &Estimator<'_>, protocol: &EvalProtocol) -> Result<SeparationReport> {
    let pairs = make_test_pairs(corpus, cfg, protocol.pairs, protocol.seed, protocol.snr_db)?;
    let mut per_pair = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let mut permutation = None;
        let estimates: Vec<Waveform> = match estimator {
            Estimator::Mixture => vec![p.mixture.clone(), p.mixture.clone()],
            Estimator::OracleMasks(c) => {
                let oracle = OracleMasks::new(c.clone(), p.sources.to_vec());
                separate_clip(&oracle, &p.mixture, &[], &protocol.window)?.sources
            }
            Estimator::Model(m) => {
                let visuals: &[SpeakerVisuals] = if m.unassigned() { &[] } else { &p.visuals };
                let out = separate_clip(*m, &p.mixture, visuals, &protocol.window)?.sources;
                if m.unassigned() {
                    let perm = assign_best_permutation(&out, &p.sources)?;
                    let ordered = perm.iter().map(|&j| out[j].clone()).collect();
                    permutation = Some(perm);
                    ordered
                } else {
                    out
                }
            }
        };
        let metrics = bss_eval(&p.sources, &estimates)?;
        let baseline = bss_eval(&p.sources, &[p.mixture.clone(), p.mixture.clone()])?;
        let mut sources = Vec::with_capacity(2);
        for k in 0..2 {
            let BssMetrics { sdr, sir, sar } = metrics[k];
            let st = if protocol.stoi {
                Some(stoi(&p.sources[k], &estimates[k])?)
            } else {
                None
            };
            sources.push(SourceScores {
                sdr,
                sir,
                sar,
                stoi: st,
                mixture_sdr: baseline[k].sdr,
            });
        }
        let id = |c: usize| corpus.manifest().entries()[c].clip_id.clone();
        per_pair.push(PairReport {
            pair_id: i,
            clips: [id(p.clips[0]), id(p.clips[1])],
            sources,
            permutation,
        });
    }
    let all = || per_pair.iter().flat_map(|p| p.sources.iter());
    let aggregate = Aggregate {
        sdr: mean(all().map(|s| s.sdr)),
        sir: mean(all().map(|s| s.sir)),
        sar: mean(all().map(|s| s.sar)),
        stoi: protocol.stoi.then(|| mean(all().filter_map(|s| s.stoi))),
        mixture_sdr: mean(all().map(|s| s.mixture_sdr)),
        pesq: None,
        auc: None,
        eer: None,
    };
    Ok(SeparationReport {
        estimator: estimator.name().into(),
        protocol: protocol.clone(),
        config_digest: cfg.digest(),
        manifest_digest: corpus.manifest().digest().to_string(),
        seed: protocol.seed,
        per_pair,
        aggregate,
    })
}

/// Mean SDR of model separations of each tuple mixture, and of the
/// mixtures themselves, over the four (mixture, speaker) combinations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TupleSdr {
    pub separated: f64,
    pub mixture: f64,
}

pub fn evaluate_tuples(sep: &Separator, params: &ModelParams<f32>, tuples: &[TrainingTuple]) -> Result<TupleSdr> {
    let cfg = sep.config();
    let len = cfg.segment_samples();
    let mut sep_sdr = Vec::new();
    let mut mix_sdr = Vec::new();
    for t in tuples {
        for (x, spec, a, sa, sb) in [
            (&t.x1, &t.spec1, &t.visual_a1, &t.s_a1, &t.s_b1),
            (&t.x2, &t.spec2, &t.visual_a2, &t.s_a2, &t.s_b2),
        ] {
            let refs = [sa.clone(), sb.clone()];
            let masks = if cfg.audio_only() {
                sep.predict_masks(params, spec, &[])?
            } else {
                match cfg.mode {
                    crate::model::SeparationMode::GeneralSingleSpeaker => sep.predict_each(params, spec, &[a, &t.visual_b])?,
                    crate::model::SeparationMode::DedicatedTwoSpeaker => sep.predict_masks(params, spec, &[a, &t.visual_b])?,
                }
            };
            let mut est = masks
                .iter()
                .map(|m| istft(&apply_mask(spec, m)?, &cfg.stft, len))
                .collect::<Result<Vec<_>>>()?;
            if cfg.audio_only() {
                let perm = assign_best_permutation(&est, &refs)?;
                est = perm.iter().map(|&j| est[j].clone()).collect();
            }
            sep_sdr.extend(bss_eval(&refs, &est)?.iter().map(|m| m.sdr));
            mix_sdr.extend(bss_eval(&refs, &[x.clone(), x.clone()])?.iter().map(|m| m.sdr));
        }
    }
    Ok(TupleSdr {
        separated: mean(sep_sdr.into_iter()),
        mixture: mean(mix_sdr.into_iter()),
    })
}

/// Face and voice embeddings of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipEmbeddings {
    pub clip_id: String,
    pub video_id: String,
    pub face: Embedding,
    pub voice: Embedding,
}

/// Face embedding from the clip's central face crop; voice embedding from
/// the clean spectrogram of the segment starting at `offset` x (clip
/// length - segment length).
pub fn clip_embeddings(sep: &Separator, params: &ModelParams<f32>, corpus: &Corpus, offset: f64) -> Result<Vec<ClipEmbeddings>> {
    if !sep.has_face_encoder() {
        return Err(Error::Config("model has no face encoder".into()));
    }
    let cfg = sep.config();
    let seg = cfg.segment_samples();
    corpus
        .manifest()
        .entries()
        .iter()
        .zip(corpus.clips())
        .map(|(e, c)| {
            if c.audio.len() < seg {
                return Err(Error::ClipTooShort {
                    samples: c.audio.len(),
                    window: seg,
                });
            }
            let start = ((c.audio.len() - seg) as f64 * offset.clamp(0.0, 1.0)).round() as usize;
            let spec = crop_for_embedding(&stft(&c.audio.slice(start, seg)?, &cfg.stft)?)?;
            let voice = sep.vocal_attr_encoder(params, &spec)?;
            let face_img = c.faces[c.faces.len() / 2].mapv(|v| v as f32 / 255.0);
            let face = sep.face_attr_encoder(params, &face_img)?;
            Ok(ClipEmbeddings {
                clip_id: e.clip_id.clone(),
                video_id: e.video_id.clone(),
                face,
                voice,
            })
        })
        .collect()
}

/// Every (face of clip i, voice of clip j) pair, positive when both clips
/// share a video.
pub fn cross_modal_verification(embeddings: &[ClipEmbeddings]) -> Result<VerificationReport> {
    let mut faces = Vec::new();
    let mut voices = Vec::new();
    let mut labels = Vec::new();
    for f in embeddings {
        for v in embeddings {
            faces.push(f.face.clone());
            voices.push(v.voice.clone());
            labels.push(f.video_id == v.video_id);
        }
    }
    verification_scores(&faces, &voices, &labels)
}

/// Random draw of `n` training-style tuples with fixed seeds.
pub fn fixed_tuples(corpus: &Corpus, cfg: &ModelConfig, n: usize, seed: u64) -> Result<Vec<TrainingTuple>> {
    let mut opts = crate::data::TupleOptions::for_model(cfg);
    opts.random_face = false;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| crate::data::sample_training_tuple(corpus, rng.gen(), &opts))
        .collect()
}
