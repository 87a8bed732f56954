use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::loss_graph;
use crate::data::{CorruptionSpec, FaceTrackInput, TrainingTuple, TupleOrigin};
use crate::dsp::{compute_cirm, mix_waveforms, stft, ComplexMask, Waveform};
use crate::error::{Error, Result};
use crate::model::{Binder, ModelConfig, ModelParams, Separator};
use crate::objectives::LossWeights;
use crate::util::mix_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Coordinates to compare (kinks excluded).
    pub samples: usize,
    pub batch: usize,
    pub step: f64,
    pub weights: LossWeights,
    /// Replace the targets by the model's own predictions and make every
    /// hinge inactive, so the loss and its gradient vanish.
    pub zero_loss: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            batch: 2,
            step: 1e-4,
            weights: LossWeights::default(),
            zero_loss: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub checked: usize,
    /// Coordinates where wide and narrow differences disagree (ReLU,
    /// max-pool or hinge kinks nearby).
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub max_abs_grad: f64,
    /// Distinct parameter arrays among the checked coordinates.
    pub arrays_covered: usize,
}

/// Analytic gradient of the full training loss against central finite
/// differences, in f64.
pub fn gradient_check(cfg: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    gradient_check_with(cfg, seed, &GradCheckOptions::default())
}

pub fn gradient_check_with(cfg: &ModelConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let sep = Separator::new(cfg.clone())?;
    let mut params: ModelParams<f64> = sep.init_params(seed);
    let mut batch: Vec<TrainingTuple> = (0..opts.batch.max(1))
        .map(|j| synthetic_tuple(cfg, mix_seed(seed, &[0x6763, j as u64])))
        .collect::<Result<_>>()?;
    let mut weights = opts.weights;
    if opts.zero_loss {
        let b = Binder::new(&params, false);
        let refs: Vec<&TrainingTuple> = batch.iter().collect();
        let g = loss_graph(&sep, &b, &refs, &weights)?;
        let nb = batch.len();
        let (f, t) = (cfg.freq_bins(), cfg.time_frames());
        let per = 2 * f * t;
        let data = g.masks.data().to_vec();
        for k in 0..4 {
            for (i, tu) in batch.iter_mut().enumerate() {
                let r = k * nb + i;
                tu.gt_masks[k] = ComplexMask::from_planes(&data[r * per..(r + 1) * per], f, t, cfg.mask_bound)?;
            }
        }
        // cosine distances lie in [0, 2], so this margin keeps every hinge shut
        weights.margin = -3.0;
    }
    let refs: Vec<&TrainingTuple> = batch.iter().collect();
    let (loss, analytic) = {
        let b = Binder::new(&params, true);
        let g = loss_graph(&sep, &b, &refs, &weights)?;
        let grads = g.total.backward();
        (g.breakdown.total, b.gradients(&grads))
    };
    let eval = |p: &ModelParams<f64>| -> Result<f64> {
        let b = Binder::new(p, false);
        Ok(loss_graph(&sep, &b, &refs, &weights)?.breakdown.total)
    };

    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x6663]));
    let h = opts.step;
    let mut report = GradCheckReport {
        loss,
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        worst: None,
        max_abs_grad: 0.0,
        arrays_covered: 0,
    };
    let mut covered = std::collections::BTreeSet::new();
    let budget = 4 * opts.samples.max(1);
    let mut tried = 0;
    'outer: while report.checked < opts.samples && tried < budget {
        for name in &names {
            if report.checked >= opts.samples || tried >= budget {
                break 'outer;
            }
            tried += 1;
            let len = params.get(name).expect("listed").data.len();
            let idx = rng.gen_range(0..len);
            let p0 = params.get(name).expect("listed").data[idx];
            let mut at = |delta: f64| -> Result<f64> {
                params.get_mut(name).expect("listed").data[idx] = p0 + delta;
                let v = eval(&params);
                params.get_mut(name).expect("listed").data[idx] = p0;
                v
            };
            let fd_h = (at(h)? - at(-h)?) / (2.0 * h);
            // Many ReLU inputs can cross zero inside [-h, h]; the slope seen
            // by a much smaller step then differs from the wide one.
            let fine = h / 10.0;
            let fd_fine = (at(fine)? - at(-fine)?) / (2.0 * fine);
            let scale = fd_h.abs().max(fd_fine.abs());
            // allowance for rounding in the narrow difference quotient
            let noise = 1e-9 * loss.abs().max(1.0);
            if (fd_h - fd_fine).abs() > 1e-4 * scale + noise {
                report.skipped_kinks += 1;
                continue;
            }
            let a = analytic[name][idx];
            let rel = (a - fd_h).abs() / a.abs().max(fd_h.abs()).max(1e-6);
            report.checked += 1;
            covered.insert(name.clone());
            report.max_abs_grad = report.max_abs_grad.max(a.abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    report.arrays_covered = covered.len();
    if report.checked == 0 {
        return Err(Error::Numerical {
            term: "gradient check found no smooth coordinates".into(),
            value: f64::NAN,
        });
    }
    Ok(report)
}

fn voice(rng: &mut ChaCha8Rng, len: usize, sr: f64) -> Vec<f64> {
    let f0 = rng.gen_range(100.0..250.0);
    let phases: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let rate = rng.gen_range(3.0..6.0);
    (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (std::f64::consts::TAU * rate * t).sin();
            let tone: f64 = phases
                .iter()
                .enumerate()
                .map(|(k, ph)| (std::f64::consts::TAU * f0 * (k + 1) as f64 * t + ph).sin() / (k + 1) as f64)
                .sum();
            0.05 * env * tone + 0.002 * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

fn track(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> FaceTrackInput {
    let (n, r, s) = (cfg.n_frames, cfg.roi_size, cfg.face_size);
    FaceTrackInput {
        mouth_rois: Array3::from_shape_fn((n, r, r), |_| rng.gen::<f32>()),
        face_image: Array3::from_shape_fn((3, s, s), |_| rng.gen::<f32>()),
        corruption: CorruptionSpec::default(),
    }
}

/// A corpus-free training tuple with harmonic sources and random visuals,
/// shaped for `cfg`.
pub fn synthetic_tuple(cfg: &ModelConfig, seed: u64) -> Result<TrainingTuple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cfg.segment_samples();
    let sr = cfg.sample_rate;
    let w = |rng: &mut ChaCha8Rng| Waveform::new(voice(rng, len, sr as f64), sr);
    let s_a1 = w(&mut rng)?;
    let s_a2 = w(&mut rng)?;
    let s_b = w(&mut rng)?;
    let snr_db = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
    let (x1, g1) = mix_waveforms(&s_a1, &s_b, snr_db[0])?;
    let (x2, g2) = mix_waveforms(&s_a2, &s_b, snr_db[1])?;
    let s_b1 = s_b.scaled(g1);
    let s_b2 = s_b.scaled(g2);
    let spec1 = stft(&x1, &cfg.stft)?;
    let spec2 = stft(&x2, &cfg.stft)?;
    let mut masks = Vec::with_capacity(4);
    for (s, x) in [&s_a1, &s_a2, &s_b1, &s_b2].into_iter().zip([&spec1, &spec2, &spec1, &spec2]) {
        masks.push(compute_cirm(&stft(s, &cfg.stft)?, x, cfg.mask_bound)?);
    }
    let visual_a1 = track(&mut rng, cfg);
    let visual_a2 = track(&mut rng, cfg);
    let visual_b = track(&mut rng, cfg);
    Ok(TrainingTuple {
        x1,
        x2,
        s_a1,
        s_a2,
        s_b,
        s_b1,
        s_b2,
        snr_db,
        spec1,
        spec2,
        gt_masks: masks.try_into().expect("four masks"),
        visual_a1,
        visual_a2,
        visual_b,
        noise: None,
        origin: TupleOrigin {
            video_a: "synthetic_a".into(),
            video_b: "synthetic_b".into(),
            clips: ["synthetic_a1".into(), "synthetic_a2".into(), "synthetic_b".into()],
            start_frames: [0; 3],
            seed,
        },
    })
}
