use serde::Serialize;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::objectives::cosine_distance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerificationReport {
    pub auc: f64,
    pub eer: f64,
    pub n_pairs: usize,
    pub threshold_at_eer: f64,
}

/// Scores `1 - D/2` for each (face, voice) pair, then AUC and EER.
pub fn verification_scores(face: &[Embedding], voice: &[Embedding], labels: &[bool]) -> Result<VerificationReport> {
    if face.len() != voice.len() || face.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} faces, {} voices, {} labels",
            face.len(),
            voice.len(),
            labels.len()
        )));
    }
    let scores = face
        .iter()
        .zip(voice)
        .map(|(f, v)| cosine_distance(f, v).map(|d| 1.0 - d / 2.0))
        .collect::<Result<Vec<_>>>()?;
    verification_from_scores(&scores, labels)
}

/// AUC over all positive/negative pairs (ties count one half) and the EER,
/// interpolated where false-accept and false-reject rates cross.
pub fn verification_from_scores(scores: &[f64], labels: &[bool]) -> Result<VerificationReport> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput(format!(
            "verification needs both classes, got {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);

    // rank-sum form of the pairwise count
    let mut all: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let auc = (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);

    // accept when score >= threshold
    let mut thresholds: Vec<f64> = all.iter().map(|x| x.0).collect();
    thresholds.dedup();
    thresholds.push(thresholds.last().copied().expect("non-empty") + 1e-6);
    let rates: Vec<(f64, f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let far = neg.iter().filter(|&&s| s >= t).count() as f64 / nn;
            let frr = pos.iter().filter(|&&s| s < t).count() as f64 / np;
            (t, far, frr)
        })
        .collect();
    let mut eer = (0.5, f64::NAN);
    for w in rates.windows(2) {
        let (t0, fa0, fr0) = w[0];
        let (t1, fa1, fr1) = w[1];
        let (d0, d1) = (fa0 - fr0, fa1 - fr1);
        if d0 == 0.0 {
            eer = (fa0, t0);
            break;
        }
        if d0 > 0.0 && d1 <= 0.0 {
            let a = d0 / (d0 - d1);
            eer = (fa0 + a * (fa1 - fa0), t0 + a * (t1 - t0));
            break;
        }
    }
    Ok(VerificationReport {
        auc,
        eer: eer.0,
        n_pairs: scores.len(),
        threshold_at_eer: eer.1,
    })
}
