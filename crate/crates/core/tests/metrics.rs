use avsep_core::dsp::Waveform;
use avsep_core::metrics::{bss_eval, resample, stoi, verification_from_scores, verification_scores, BssMetrics};
use avsep_core::{Embedding, Error, Modality};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SR: u32 = 16_000;

fn wave(v: Vec<f64>) -> Waveform {
    Waveform::new(v, SR).unwrap()
}

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Harmonic tone complex with a syllable-rate envelope.
fn speech_like(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.gen_range(100.0..220.0);
    let rate = rng.gen_range(3.0..5.0);
    let phase = rng.gen_range(0.0..6.28);
    (0..len)
        .map(|n| {
            let t = n as f64 / SR as f64;
            let env = (0.5 - 0.5 * (2.0 * std::f64::consts::PI * rate * t + phase).cos()).powi(2);
            let v: f64 = (1..20)
                .map(|h| (2.0 * std::f64::consts::PI * f0 * h as f64 * t).sin() / h as f64)
                .sum();
            0.1 * env * v
        })
        .collect()
}

/// SDR/SIR/SAR through the normal equations of the reference Gram matrix.
fn oracle(refs: &[Vec<f64>], est: &[f64], j: usize) -> BssMetrics {
    let k = refs.len();
    let mut g = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for a in 0..k {
        for b in 0..k {
            g[a][b] = dot(&refs[a], &refs[b]);
        }
        rhs[a] = dot(&refs[a], est);
    }
    // Gaussian elimination with partial pivoting
    for c in 0..k {
        let p = (c..k).max_by(|&x, &y| g[x][c].abs().total_cmp(&g[y][c].abs())).unwrap();
        g.swap(c, p);
        rhs.swap(c, p);
        for r in c + 1..k {
            let f = g[r][c] / g[c][c];
            for cc in c..k {
                g[r][cc] -= f * g[c][cc];
            }
            rhs[r] -= f * rhs[c];
        }
    }
    let mut coef = vec![0.0; k];
    for c in (0..k).rev() {
        let s: f64 = (c + 1..k).map(|cc| g[c][cc] * coef[cc]).sum();
        coef[c] = (rhs[c] - s) / g[c][c];
    }
    let n = est.len();
    let proj: Vec<f64> = (0..n).map(|i| (0..k).map(|a| coef[a] * refs[a][i]).sum()).collect();
    let gt = dot(est, &refs[j]) / dot(&refs[j], &refs[j]);
    let target: Vec<f64> = refs[j].iter().map(|v| gt * v).collect();
    let e_int: Vec<f64> = (0..n).map(|i| proj[i] - target[i]).collect();
    let e_art: Vec<f64> = (0..n).map(|i| est[i] - proj[i]).collect();
    let tot: Vec<f64> = (0..n).map(|i| e_int[i] + e_art[i]).collect();
    let db = |a: f64, b: f64| 10.0 * (a / b).log10();
    BssMetrics {
        sdr: db(dot(&target, &target), dot(&tot, &tot)),
        sir: db(dot(&target, &target), dot(&e_int, &e_int)),
        sar: db(dot(&proj, &proj), dot(&e_art, &e_art)),
    }
}

#[test]
fn perfect_estimate_hits_the_cap() {
    let refs = [wave(noise(4000, 1)), wave(noise(4000, 2))];
    let m = bss_eval(&refs, &refs).unwrap();
    for r in m {
        assert_eq!(r.sdr, 100.0);
        assert_eq!(r.sir, 100.0);
        assert_eq!(r.sar, 100.0);
    }
}

#[test]
fn orthogonal_noise_gives_twenty_db() {
    let s = noise(8000, 3);
    let mut n = noise(8000, 4);
    let c = dot(&n, &s) / dot(&s, &s);
    n.iter_mut().zip(&s).for_each(|(x, y)| *x -= c * y);
    let scale = (dot(&s, &s) / dot(&n, &n)).sqrt();
    n.iter_mut().for_each(|x| *x *= scale);
    let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + 0.1 * b).collect();
    let m = bss_eval(&[wave(s)], &[wave(est)]).unwrap();
    assert!((m[0].sdr - 20.0).abs() <= 1e-6, "sdr {}", m[0].sdr);
    assert!((m[0].sar - 20.0).abs() <= 1e-6);
}

#[test]
fn random_cases_match_normal_equations() {
    for seed in 0..20u64 {
        let len = 3000;
        let refs = vec![noise(len, 10 * seed), noise(len, 10 * seed + 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ests: Vec<Vec<f64>> = (0..2)
            .map(|j| {
                let other = 1 - j;
                let a = rng.gen_range(0.5..1.5);
                let b = rng.gen_range(-0.4..0.4);
                let art = noise(len, 10 * seed + 5 + j as u64);
                (0..len).map(|i| a * refs[j][i] + b * refs[other][i] + 0.2 * art[i]).collect()
            })
            .collect();
        let got = bss_eval(
            &refs.iter().cloned().map(wave).collect::<Vec<_>>(),
            &ests.iter().cloned().map(wave).collect::<Vec<_>>(),
        )
        .unwrap();
        for j in 0..2 {
            let want = oracle(&refs, &ests[j], j);
            assert!((got[j].sdr - want.sdr).abs() <= 1e-6, "{:?} vs {:?}", got[j], want);
            assert!((got[j].sir - want.sir).abs() <= 1e-6);
            assert!((got[j].sar - want.sar).abs() <= 1e-6);
        }
    }
}

#[test]
fn bss_errors() {
    let r = wave(noise(100, 1));
    let z = wave(vec![0.0; 100]);
    assert!(matches!(bss_eval(&[r.clone(), z.clone()], &[r.clone(), r.clone()]), Err(Error::DegenerateReference(_))));
    assert!(matches!(bss_eval(&[r.clone()], &[r.clone(), r.clone()]), Err(Error::Shape(_))));
    assert!(matches!(bss_eval(&[r], &[wave(noise(99, 2))]), Err(Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn bss_is_scale_invariant(seed in 0u64..10_000, gain in 0.01f64..100.0) {
        let len = 2000;
        let refs = [wave(noise(len, seed)), wave(noise(len, seed + 1))];
        let est: Vec<f64> = noise(len, seed + 2).iter().zip(refs[0].samples()).map(|(n, s)| s + 0.3 * n).collect();
        let scaled: Vec<f64> = est.iter().map(|v| v * gain).collect();
        let a = bss_eval(&refs, &[wave(est.clone()), wave(est)]).unwrap();
        let b = bss_eval(&refs, &[wave(scaled.clone()), wave(scaled)]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.sdr - y.sdr).abs() <= 1e-9);
            prop_assert!((x.sir - y.sir).abs() <= 1e-9);
            prop_assert!((x.sar - y.sar).abs() <= 1e-9);
        }
    }

    #[test]
    fn auc_survives_monotone_transforms(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut labels: Vec<bool> = (0..40).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 2.0).collect();
        let a = verification_from_scores(&scores, &labels).unwrap();
        let b = verification_from_scores(&mapped, &labels).unwrap();
        prop_assert!((a.auc - b.auc).abs() < 1e-12);
        prop_assert!((a.eer - b.eer).abs() < 1e-9);
    }
}

#[test]
fn stoi_identity_and_sign() {
    let clean = wave(speech_like(32_000, 1));
    let s = stoi(&clean, &clean).unwrap();
    assert!((s - 1.0).abs() <= 1e-6, "stoi {s}");
    let flipped = clean.scaled(-1.0);
    let s = stoi(&clean, &flipped).unwrap();
    assert!((s - 1.0).abs() <= 1e-6, "stoi {s}");
}

/// Stationary noise with a speech-like long-term spectrum: a broad resonance
/// near 500 Hz followed by a gentle low-pass.
fn speech_shaped_noise(len: usize, seed: u64) -> Vec<f64> {
    let x = noise(len, seed);
    let (f, r) = (500.0 / SR as f64, 0.9);
    let (a1, a2) = (2.0 * r * (2.0 * std::f64::consts::PI * f).cos(), -r * r);
    let (mut y1, mut y2, mut lp) = (0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            lp += 0.5 * (y - lp);
            0.01 * lp
        })
        .collect()
}

#[test]
fn stoi_of_independent_noise_is_low() {
    for seed in 0..20 {
        let clean = wave(speech_shaped_noise(32_000, seed));
        let n = wave(noise(32_000, 1000 + seed).iter().map(|v| 0.05 * v).collect());
        let s = stoi(&clean, &n).unwrap();
        assert!(s < 0.2, "seed {seed}: stoi {s}");
    }
}

#[test]
fn stoi_drops_when_frames_are_shuffled() {
    for seed in 0..20 {
        let clean = speech_like(32_000, 50 + seed);
        let mut blocks: Vec<Vec<f64>> = clean.chunks(400).map(|c| c.to_vec()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..blocks.len()).rev() {
            blocks.swap(i, rng.gen_range(0..=i));
        }
        let shuffled: Vec<f64> = blocks.concat();
        let base = stoi(&wave(clean.clone()), &wave(clean.clone())).unwrap();
        let s = stoi(&wave(clean), &wave(shuffled)).unwrap();
        assert!(s < base, "seed {seed}: {s} vs {base}");
    }
}

#[test]
fn stoi_errors() {
    let z = wave(vec![0.0; 16_000]);
    assert!(matches!(stoi(&z, &z), Err(Error::SilentReference(_))));
    let short = wave(speech_like(3000, 1));
    assert!(stoi(&short, &short).is_err());
    assert!(matches!(stoi(&wave(speech_like(16_000, 1)), &wave(speech_like(16_001, 1))), Err(Error::Shape(_))));
}

#[test]
fn resampler_preserves_in_band_tones() {
    let f = 1000.0;
    let x: Vec<f64> = (0..16_000).map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / 16_000.0).sin()).collect();
    let y = resample(&x, 16_000, 10_000);
    assert_eq!(y.len(), 10_000);
    for (n, v) in y.iter().enumerate().skip(200).take(9600) {
        let want = (2.0 * std::f64::consts::PI * f * n as f64 / 10_000.0).sin();
        assert!((v - want).abs() < 2e-3, "sample {n}: {v} vs {want}");
    }
}

#[test]
fn verification_examples() {
    let r = verification_from_scores(&[0.9, 0.4, 0.8, 0.3], &[true, true, false, false]).unwrap();
    assert!((r.auc - 0.75).abs() < 1e-12);
    let perfect = verification_from_scores(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
    assert_eq!(perfect.auc, 1.0);
    assert_eq!(perfect.eer, 0.0);
    assert_eq!(perfect.n_pairs, 4);
    assert!(matches!(verification_from_scores(&[0.1, 0.2], &[true, true]), Err(Error::InvalidInput(_))));
}

#[test]
fn symmetric_overlap_has_half_eer() {
    let r = verification_from_scores(&[0.6, 0.4, 0.6, 0.4], &[true, false, false, true]).unwrap();
    assert!((r.auc - 0.5).abs() < 1e-12);
    assert!((r.eer - 0.5).abs() < 1e-12);
}

#[test]
fn random_embeddings_are_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut emb = |m: Modality| {
        let v: Vec<f64> = (0..128).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Embedding::normalized(v, m).unwrap()
    };
    let n = 4000;
    let faces: Vec<Embedding> = (0..n).map(|_| emb(Modality::Face)).collect();
    let voices: Vec<Embedding> = (0..n).map(|_| emb(Modality::Voice)).collect();
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let r = verification_scores(&faces, &voices, &labels).unwrap();
    assert!((r.auc - 0.5).abs() <= 0.05, "auc {}", r.auc);
    assert!((r.eer - 0.5).abs() <= 0.05, "eer {}", r.eer);
}
