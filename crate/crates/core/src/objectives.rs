//! Mask-prediction, cross-modal matching, speaker-consistency and PIT losses.
//!
//! Plain functions work on [`Embedding`]/[`ComplexMask`] values; the `graph`
//! submodule builds the same quantities as differentiable tensors.

use serde::{Deserialize, Serialize};

use crate::dsp::ComplexMask;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::util::permutations;

const UNIT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskReduction {
    /// Mean over the `2·F·T` components of each mask, summed over masks.
    Mean,
    /// Sum over all components and masks.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub margin: f64,
    pub mask_prediction: bool,
    pub cross_modal: bool,
    pub consistency: bool,
    pub mask_reduction: MaskReduction,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.01,
            margin: 0.5,
            mask_prediction: true,
            cross_modal: true,
            consistency: true,
            mask_reduction: MaskReduction::Mean,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("margin", self.margin),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// A term with a zero weight counts as disabled.
    pub fn cross_modal_active(&self) -> bool {
        self.cross_modal && self.lambda1 > 0.0
    }

    pub fn consistency_active(&self) -> bool {
        self.consistency && self.lambda2 > 0.0
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub mask_prediction: f64,
    pub cross_modal: f64,
    pub consistency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mask_prediction: f64,
    pub cross_modal: f64,
    pub consistency: f64,
    pub total: f64,
}

fn check_unit(e: &Embedding) -> Result<()> {
    let n = e.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidInput(format!(
            "{} embedding has norm {n}, expected 1",
            e.modality.as_str()
        )));
    }
    Ok(())
}

/// `1 - <a, b>` for unit vectors.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "embedding dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    check_unit(a)?;
    check_unit(b)?;
    Ok(1.0 - a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>())
}

/// `max(0, D(anchor, pos) - D(anchor, neg) + m)`.
pub fn triplet_loss(anchor: &Embedding, pos: &Embedding, neg: &Embedding, m: f64) -> Result<f64> {
    let dp = cosine_distance(anchor, pos)?;
    let dn = cosine_distance(anchor, neg)?;
    Ok((dp - dn + m).max(0.0))
}

fn mask_pair_loss(pred: &ComplexMask, gt: &ComplexMask, reduction: MaskReduction) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "mask {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let sq: f64 = pred
        .real
        .iter()
        .zip(gt.real.iter())
        .chain(pred.imag.iter().zip(gt.imag.iter()))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(match reduction {
        MaskReduction::Mean => sq / (2 * pred.real.len()).max(1) as f64,
        MaskReduction::Sum => sq,
    })
}

/// Per-mask squared error (reduced per `reduction`), summed over pairs.
pub fn mask_prediction_loss(
    pred: &[ComplexMask],
    gt: &[ComplexMask],
    reduction: MaskReduction,
) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predicted masks vs {} targets",
            pred.len(),
            gt.len()
        )));
    }
    pred.iter()
        .zip(gt)
        .map(|(p, g)| mask_pair_loss(p, g, reduction))
        .sum()
}

pub fn cross_modal_loss(
    a_a1: &Embedding,
    a_a2: &Embedding,
    a_b1: &Embedding,
    a_b2: &Embedding,
    i_a: &Embedding,
    i_b: &Embedding,
    m: f64,
) -> Result<f64> {
    Ok(triplet_loss(a_a1, i_a, i_b, m)?
        + triplet_loss(a_a2, i_a, i_b, m)?
        + triplet_loss(a_b1, i_b, i_a, m)?
        + triplet_loss(a_b2, i_b, i_a, m)?)
}

pub fn consistency_loss(
    a_a1: &Embedding,
    a_a2: &Embedding,
    a_b1: &Embedding,
    a_b2: &Embedding,
    m: f64,
) -> Result<f64> {
    Ok(triplet_loss(a_a1, a_a2, a_b1, m)? + triplet_loss(a_a1, a_a2, a_b2, m)?)
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<LossBreakdown> {
    for (term, v) in [
        ("mask_prediction", parts.mask_prediction),
        ("cross_modal", parts.cross_modal),
        ("consistency", parts.consistency),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical {
                term: term.into(),
                value: v,
            });
        }
    }
    let mask = if w.mask_prediction { parts.mask_prediction } else { 0.0 };
    let cross = if w.cross_modal_active() { parts.cross_modal } else { 0.0 };
    let cons = if w.consistency_active() { parts.consistency } else { 0.0 };
    Ok(LossBreakdown {
        mask_prediction: mask,
        cross_modal: cross,
        consistency: cons,
        total: mask + w.lambda1 * cross + w.lambda2 * cons,
    })
}

/// Minimum summed mask loss over assignments of predictions to targets.
/// `perm[i]` is the target index paired with prediction `i`.
pub fn pit_mask_loss(
    preds: &[ComplexMask],
    gts: &[ComplexMask],
    reduction: MaskReduction,
) -> Result<(f64, Vec<usize>)> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            preds.len(),
            gts.len()
        )));
    }
    if preds.len() > 3 {
        return Err(Error::InvalidInput(format!(
            "permutation search supports at most 3 sources, got {}",
            preds.len()
        )));
    }
    let n = preds.len();
    let mut cost = vec![vec![0.0; n]; n];
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            cost[i][j] = mask_pair_loss(p, g, reduction)?;
        }
    }
    Ok(best_assignment(&cost))
}

/// Lowest-cost assignment by exhaustive search; ties keep the earliest
/// permutation in lexicographic order.
pub(crate) fn best_assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let mut best = (f64::INFINITY, Vec::new());
    for perm in permutations(cost.len()) {
        let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if c < best.0 {
            best = (c, perm);
        }
    }
    best
}

/// Differentiable counterparts operating on batched rows.
pub mod graph {
    use avsep_tensor::{Element, Tensor};

    use super::MaskReduction;

    /// Squared error between `(R, 2, F, T)` masks, reduced per mask and
    /// divided by the number of training tuples in the batch.
    pub fn mask_loss<T: Element>(
        pred: &Tensor<T>,
        gt: &Tensor<T>,
        tuples: usize,
        reduction: MaskReduction,
    ) -> Tensor<T> {
        let per_mask: usize = pred.shape()[1..].iter().product();
        let sq = pred.sub(gt).square().sum_all();
        let denom = match reduction {
            MaskReduction::Mean => per_mask * tuples,
            MaskReduction::Sum => tuples,
        };
        sq.scale(T::one() / T::from_usize(denom).expect("fits"))
    }

    /// Row-wise `1 - <a, b>` for `(R, E)` inputs, returned as `(R,)`.
    pub fn cosine_distance<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        a.mul(b).sum_axis(1).affine(-T::one(), T::one())
    }

    /// Row-wise hinge `max(0, D(a, p) - D(a, n) + m)` as `(R,)`.
    pub fn triplet<T: Element>(a: &Tensor<T>, p: &Tensor<T>, n: &Tensor<T>, margin: f64) -> Tensor<T> {
        cosine_distance(a, p)
            .sub(&cosine_distance(a, n))
            .add_scalar(T::from_f64_lossy(margin))
            .relu()
    }
}
