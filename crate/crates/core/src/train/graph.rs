//! Differentiable training objective over a batch of tuples.

use avsep_tensor::{Element, Tensor};

use crate::data::{FaceTrackInput, TrainingTuple};
use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::model::{faces_tensor, rois_tensor, spec_tensor, Binder, ModelConfig, SeparationMode, Separator};
use crate::objectives::graph::{mask_loss, triplet};
use crate::objectives::{LossBreakdown, LossWeights, MaskReduction};

/// Weights after removing terms the model cannot compute: no face encoder
/// means no cross-modal term, no visual cues means neither embedding term.
pub fn effective_weights(cfg: &ModelConfig, w: &LossWeights) -> LossWeights {
    let mut w = *w;
    if !cfg.use_face {
        w.cross_modal = false;
    }
    if cfg.audio_only() {
        w.cross_modal = false;
        w.consistency = false;
    }
    w
}

pub(crate) struct LossGraph<T: Element> {
    pub total: Tensor<T>,
    pub breakdown: LossBreakdown,
    /// Predicted masks `(4B, 2, F, T)` in A1, A2, B1, B2 block order.
    pub masks: Tensor<T>,
}

fn range(a: usize, b: usize) -> Vec<usize> {
    (a..b).collect()
}

fn gt_tensor<T: Element>(batch: &[&TrainingTuple], cfg: &ModelConfig) -> Tensor<T> {
    let (f, t) = (cfg.freq_bins(), cfg.time_frames());
    let mut data = Vec::with_capacity(4 * batch.len() * 2 * f * t);
    for k in 0..4 {
        for tu in batch {
            data.extend(tu.gt_masks[k].to_planes::<T>());
        }
    }
    Tensor::constant(data, &[4 * batch.len(), 2, f, t])
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical {
            term: name.into(),
            value: v,
        })
    }
}

/// Per-row squared error of `(R, 2, F, T)` tensors, as `(R,)`.
fn row_sq<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let r = a.dim(0);
    a.sub(b).square().reshape(&[r, a.numel() / r]).sum_axis(1)
}

/// Builds the weighted objective for `batch`. Mask blocks follow the order
/// A1 (on X1), A2 (on X2), B1 (on X1), B2 (on X2).
pub(crate) fn loss_graph<T: Element>(
    sep: &Separator,
    b: &Binder<T>,
    batch: &[&TrainingTuple],
    weights: &LossWeights,
) -> Result<LossGraph<T>> {
    let cfg = sep.config();
    let w = effective_weights(cfg, weights);
    let nb = batch.len();
    if nb == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let specs: Vec<&ComplexSpectrogram> = batch.iter().map(|t| &t.spec1).chain(batch.iter().map(|t| &t.spec2)).collect();
    let x = spec_tensor::<T>(&specs, cfg)?;
    let enc = sep.encode_graph(b, &x);
    // encoder row feeding each of the 4B decoded masks
    let mix_rows: Vec<usize> = range(0, 2 * nb).into_iter().chain(range(0, 2 * nb)).collect();

    let (lip, face) = if cfg.audio_only() {
        (None, None)
    } else {
        let tracks: Vec<&FaceTrackInput> = batch
            .iter()
            .map(|t| &t.visual_a1)
            .chain(batch.iter().map(|t| &t.visual_a2))
            .chain(batch.iter().map(|t| &t.visual_b))
            .collect();
        let lip = match sep.has_lip_encoder() {
            true => sep.lip_graph(b, &rois_tensor(&tracks, cfg)?),
            false => None,
        };
        // one face image per speaker: A's from its first segment
        let face_tracks: Vec<&FaceTrackInput> =
            batch.iter().map(|t| &t.visual_a1).chain(batch.iter().map(|t| &t.visual_b)).collect();
        let face = match sep.has_face_encoder() {
            true => sep.face_graph(b, &faces_tensor(&face_tracks, cfg)?),
            false => None,
        };
        (lip, face)
    };
    let lip_rows: Vec<usize> = range(0, 2 * nb).into_iter().chain(range(2 * nb, 3 * nb)).chain(range(2 * nb, 3 * nb)).collect();
    let face_rows: Vec<usize> = range(0, nb).into_iter().chain(range(0, nb)).chain(range(nb, 2 * nb)).chain(range(nb, 2 * nb)).collect();
    let visual_for = |lr: &[usize], fr: &[usize]| {
        let l = lip.as_ref().map(|l| l.select(lr));
        let f = face.as_ref().map(|f| f.select(fr));
        sep.visual_graph(l.as_ref(), f.as_ref())
    };

    let gt = gt_tensor::<T>(batch, cfg);
    let (masks, mask_term) = match cfg.mode {
        SeparationMode::GeneralSingleSpeaker => {
            let vis = visual_for(&lip_rows, &face_rows);
            let m = sep.decode_graph(b, &enc, &mix_rows, vis.as_ref());
            let loss = mask_loss(&m, &gt, nb, w.mask_reduction);
            (m, loss)
        }
        SeparationMode::DedicatedTwoSpeaker => {
            // row i < B decodes X1 with [A1, B]; row B + i decodes X2 with [A2, B]
            let twice = |lo: usize, hi: usize| -> Vec<usize> { range(lo, hi).into_iter().chain(range(lo, hi)).collect() };
            let vis = match (visual_for(&range(0, 2 * nb), &twice(0, nb)), visual_for(&twice(2 * nb, 3 * nb), &twice(nb, 2 * nb))) {
                (Some(own), Some(other)) => Some(Tensor::concat(&[own, other], 1)),
                _ => None,
            };
            let out = sep.decode_graph(b, &enc, &range(0, 2 * nb), vis.as_ref());
            let first = out.narrow(1, 0, 2);
            let second = out.narrow(1, 2, 2);
            if cfg.audio_only() {
                let gt_first = gt.narrow(0, 0, 2 * nb);
                let gt_second = gt.narrow(0, 2 * nb, 2 * nb);
                let keep = row_sq(&first, &gt_first).add(&row_sq(&second, &gt_second));
                let swap = row_sq(&first, &gt_second).add(&row_sq(&second, &gt_first));
                // per-row assignment chosen on values, gradient through the winner
                let swapped: Vec<bool> = keep.data().iter().zip(swap.data()).map(|(k, s)| s < k).collect();
                let rows_keep: Vec<usize> = (0..2 * nb).filter(|&r| !swapped[r]).collect();
                let rows_swap: Vec<usize> = (0..2 * nb).filter(|&r| swapped[r]).collect();
                let mut parts = Vec::new();
                if !rows_keep.is_empty() {
                    parts.push(keep.select(&rows_keep).sum_all());
                }
                if !rows_swap.is_empty() {
                    parts.push(swap.select(&rows_swap).sum_all());
                }
                let sq = parts.into_iter().reduce(|a, c| a.add(&c)).expect("rows");
                let per_mask = 2 * cfg.freq_bins() * cfg.time_frames();
                let denom = match w.mask_reduction {
                    MaskReduction::Mean => per_mask * nb,
                    MaskReduction::Sum => nb,
                };
                let loss = sq.scale(T::from_f64_lossy(1.0 / denom as f64));
                (Tensor::concat(&[first, second], 0), loss)
            } else {
                let m = Tensor::concat(&[first, second], 0);
                let loss = mask_loss(&m, &gt, nb, w.mask_reduction);
                (m, loss)
            }
        }
    };

    let mut breakdown = LossBreakdown::default();
    let mut total: Option<Tensor<T>> = None;
    let mut add = |t: Tensor<T>, scale: f64| {
        let t = if scale == 1.0 { t } else { t.scale(T::from_f64_lossy(scale)) };
        total = Some(match total.take() {
            Some(acc) => acc.add(&t),
            None => t,
        });
    };
    if w.mask_prediction {
        breakdown.mask_prediction = mask_term.item().to_f64_lossy();
        check_finite("mask_prediction", breakdown.mask_prediction)?;
        add(mask_term, 1.0);
    }
    let cross_on = w.cross_modal_active() && face.is_some();
    let cons_on = w.consistency_active();
    if cross_on || cons_on {
        let f = cfg.freq_bins();
        let sep_spec = x.select(&mix_rows).complex_mul(&masks).narrow(2, 0, f - 1);
        let a = sep.voice_graph(b, &sep_spec);
        let inv = 1.0 / nb as f64;
        if cross_on {
            let faces = face.as_ref().expect("face encoder present");
            let neg_rows: Vec<usize> = range(nb, 2 * nb).into_iter().chain(range(nb, 2 * nb)).chain(range(0, nb)).chain(range(0, nb)).collect();
            let term = triplet(&a, &faces.select(&face_rows), &faces.select(&neg_rows), w.margin)
                .sum_all()
                .scale(T::from_f64_lossy(inv));
            breakdown.cross_modal = term.item().to_f64_lossy();
            check_finite("cross_modal", breakdown.cross_modal)?;
            add(term, w.lambda1);
        }
        if cons_on {
            let anchor = a.select(&range(0, nb).into_iter().chain(range(0, nb)).collect::<Vec<_>>());
            let pos = a.select(&range(nb, 2 * nb).into_iter().chain(range(nb, 2 * nb)).collect::<Vec<_>>());
            let neg = a.narrow(0, 2 * nb, 2 * nb);
            let term = triplet(&anchor, &pos, &neg, w.margin).sum_all().scale(T::from_f64_lossy(inv));
            breakdown.consistency = term.item().to_f64_lossy();
            check_finite("consistency", breakdown.consistency)?;
            add(term, w.lambda2);
        }
    }
    let total = total.ok_or_else(|| Error::Config("every loss term is disabled".into()))?;
    breakdown.total = total.item().to_f64_lossy();
    check_finite("total", breakdown.total)?;
    Ok(LossGraph {
        total,
        breakdown,
        masks,
    })
}

