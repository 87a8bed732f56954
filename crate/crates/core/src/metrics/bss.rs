use serde::Serialize;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Reported values are clamped to `[-DB_CAP, DB_CAP]`.
pub const DB_CAP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BssMetrics {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `10 log10(num / den)` clamped to the cap; zero denominators give the cap.
pub fn db_ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { DB_CAP } else { 0.0 };
    }
    if num <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

/// Orthonormal basis of the references' span (modified Gram-Schmidt, two
/// passes). Directions that vanish numerically are dropped.
fn basis(refs: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for r in refs {
        let mut v = r.to_vec();
        let norm0 = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for b in &q {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-10 * norm0 {
            v.iter_mut().for_each(|x| *x /= n);
            q.push(v);
        }
    }
    q
}

/// Projection-based SDR/SIR/SAR of each estimate against its reference (by
/// position).
pub fn bss_eval(references: &[Waveform], estimates: &[Waveform]) -> Result<Vec<BssMetrics>> {
    if references.len() != estimates.len() || references.is_empty() {
        return Err(Error::Shape(format!(
            "{} references vs {} estimates",
            references.len(),
            estimates.len()
        )));
    }
    let len = references[0].len();
    if let Some(w) = references.iter().chain(estimates).find(|w| w.len() != len) {
        return Err(Error::Shape(format!("signal of {} samples, expected {len}", w.len())));
    }
    for (i, r) in references.iter().enumerate() {
        if r.energy() == 0.0 {
            return Err(Error::DegenerateReference(format!("reference {i} has zero energy")));
        }
    }
    let refs: Vec<&[f64]> = references.iter().map(|r| r.samples()).collect();
    let q = basis(&refs);
    Ok(estimates
        .iter()
        .zip(&refs)
        .map(|(e, s)| {
            let e = e.samples();
            let g = dot(e, s) / dot(s, s);
            let target: Vec<f64> = s.iter().map(|v| g * v).collect();
            let mut proj = vec![0.0; len];
            for b in &q {
                let c = dot(e, b);
                proj.iter_mut().zip(b).for_each(|(p, v)| *p += c * v);
            }
            let (mut e_int, mut e_art, mut e_tot) = (0.0, 0.0, 0.0);
            for i in 0..len {
                let interf = proj[i] - target[i];
                let artif = e[i] - proj[i];
                e_int += interf * interf;
                e_art += artif * artif;
                e_tot += (interf + artif).powi(2);
            }
            let t = dot(&target, &target);
            BssMetrics {
                sdr: db_ratio(t, e_tot),
                sir: db_ratio(t, e_int),
                sar: db_ratio(proj.iter().map(|v| v * v).sum(), e_art),
            }
        })
        .collect())
}
