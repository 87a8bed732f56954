//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use avsep_core::data::{load_manifest, make_synthetic_fixture, Corpus, MediaConfig};
use avsep_core::dsp::{istft, stft, ComplexMask, StftConfig, Waveform, SAMPLE_RATE};
use avsep_core::eval::{
    clip_embeddings, cross_modal_verification, evaluate_separation, evaluate_tuples, fixed_tuples, EvalProtocol,
    Estimator,
};
use avsep_core::infer::NeuralPredictor;
use avsep_core::metrics::{bss_eval, stoi, BssMetrics};
use avsep_core::model::{ModelConfig, Separator};
use avsep_core::objectives::*;
use avsep_core::train::{
    evaluate_loss, gradient_check, save_checkpoint, Ablation, LogRecord, TrainConfig, TrainState, Trainer,
};
use avsep_core::{Embedding, Modality};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn corpus_for(dir: &Path, seed: u64, speakers: usize, clips: usize, cfg: &ModelConfig) -> Corpus {
    let info = make_synthetic_fixture(dir, seed, speakers, clips).unwrap();
    Corpus::load(
        load_manifest(&info.manifest_path).unwrap(),
        MediaConfig {
            roi_size: cfg.roi_size,
            face_size: cfg.face_size,
            fps: cfg.fps,
        },
    )
    .unwrap()
}

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn wave(v: Vec<f64>) -> Waveform {
    Waveform::new(v, SAMPLE_RATE).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dsp_round_trip() -> Outcome {
    let cfg = StftConfig::default();
    let t = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = wave((0..40_800).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let back = istft(&stft(&w, &cfg).unwrap(), &cfg, w.len()).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in cfg.window_length..w.len() - cfg.window_length {
            num += (back.samples()[i] - w.samples()[i]).powi(2);
            den += w.samples()[i].powi(2);
        }
        worst = worst.max((num / den).sqrt());
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-6 && secs < 5.0,
        format!("max relative L2 error {worst:.2e} over 100 signals in {secs:.2} s"),
    )
}

fn stft_shape() -> Outcome {
    let s = stft(&Waveform::zeros(40_800, SAMPLE_RATE), &StftConfig::default()).unwrap();
    ensure(s.shape() == (257, 256), format!("stft of 40800 samples is {:?}", s.shape()))
}

fn oracle_separation() -> Outcome {
    let cfg = ModelConfig::desk();
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_for(dir.path(), 17, 8, 4, &cfg);
    let mut protocol = EvalProtocol::for_model(&cfg, 50, 3);
    protocol.stoi = false;
    let t = Instant::now();
    let r = evaluate_separation(&corpus, &cfg, &Estimator::OracleMasks(cfg.clone()), &protocol).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let worst = r
        .per_pair
        .iter()
        .flat_map(|p| p.sources.iter().map(|s| s.sdr))
        .fold(f64::INFINITY, f64::min);
    ensure(
        r.per_pair.len() == 50 && r.aggregate.sdr >= 20.0 && secs < 30.0,
        format!(
            "mean SDR {:.2} dB (worst source {worst:.2} dB) over {} mixtures in {secs:.1} s",
            r.aggregate.sdr,
            r.per_pair.len()
        ),
    )
}

fn unit(v: &[f64]) -> Embedding {
    Embedding::normalized(v.to_vec(), Modality::Voice).unwrap()
}

fn at_distance(d: f64) -> Embedding {
    let c = 1.0 - d;
    unit(&[c, (1.0 - c * c).max(0.0).sqrt(), 0.0])
}

fn hinge(dp: f64, dn: f64, m: f64) -> f64 {
    (dp - dn + m).max(0.0)
}

fn dist(a: &Embedding, b: &Embedding) -> f64 {
    1.0 - dot(&a.values, &b.values)
}

fn random_mask(rng: &mut ChaCha8Rng, f: usize, t: usize) -> ComplexMask {
    let r = Array2::from_shape_fn((f, t), |_| rng.gen_range(-4.0..4.0));
    let i = Array2::from_shape_fn((f, t), |_| rng.gen_range(-4.0..4.0));
    ComplexMask::new(r, i, 5.0).unwrap()
}

fn constant_mask(v: f64) -> ComplexMask {
    ComplexMask::new(Array2::from_elem((2, 3), v), Array2::zeros((2, 3)), 5.0).unwrap()
}

fn loss_arithmetic() -> Outcome {
    let mut bad = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-9 {
            bad.push(format!("{name}: {got} != {want}"));
        }
    };
    let a = unit(&[1.0, 0.0, 0.0]);
    let b = unit(&[0.0, 1.0, 0.0]);
    check("triplet inactive", triplet_loss(&a, &at_distance(0.2), &at_distance(0.9), 0.5).unwrap(), 0.0);
    check("triplet active", triplet_loss(&a, &at_distance(0.8), &at_distance(0.4), 0.5).unwrap(), 0.9);
    let p = at_distance(0.3);
    check("triplet margin", triplet_loss(&a, &p, &p, 0.5).unwrap(), 0.5);
    check("cross-modal separated", cross_modal_loss(&a, &a, &b, &b, &a, &b, 0.5).unwrap(), 0.0);
    check("cross-modal identical", cross_modal_loss(&a, &a, &a, &a, &a, &a, 0.5).unwrap(), 2.0);
    check("consistency separated", consistency_loss(&a, &a, &b, &b, 0.5).unwrap(), 0.0);
    check("consistency identical", consistency_loss(&a, &a, &a, &a, 0.5).unwrap(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let e: Vec<Embedding> = (0..6)
        .map(|_| unit(&(0..16).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
        .collect();
    let cm = hinge(dist(&e[0], &e[4]), dist(&e[0], &e[5]), 0.5)
        + hinge(dist(&e[1], &e[4]), dist(&e[1], &e[5]), 0.5)
        + hinge(dist(&e[2], &e[5]), dist(&e[2], &e[4]), 0.5)
        + hinge(dist(&e[3], &e[5]), dist(&e[3], &e[4]), 0.5);
    check("cross-modal random", cross_modal_loss(&e[0], &e[1], &e[2], &e[3], &e[4], &e[5], 0.5).unwrap(), cm);
    let cons = hinge(dist(&e[0], &e[1]), dist(&e[0], &e[2]), 0.5) + hinge(dist(&e[0], &e[1]), dist(&e[0], &e[3]), 0.5);
    check("consistency random", consistency_loss(&e[0], &e[1], &e[2], &e[3], 0.5).unwrap(), cons);

    let w = LossWeights::default();
    let parts = LossParts {
        mask_prediction: 1.0,
        cross_modal: 0.2,
        consistency: 0.3,
    };
    check("total", total_loss(&parts, &w).unwrap().total, 1.005);
    let no_cross = LossWeights { cross_modal: false, ..w };
    check("total without cross-modal", total_loss(&parts, &no_cross).unwrap().total, 1.0 + 0.01 * 0.3);
    let mask_only = LossWeights { cross_modal: false, consistency: false, ..w };
    check("total mask only", total_loss(&parts, &mask_only).unwrap().total, 1.0);

    let g = random_mask(&mut rng, 5, 7);
    let shifted = ComplexMask::new(&g.real + 1.0, &g.imag + 1.0, 5.0).unwrap();
    check("mask offset", mask_prediction_loss(&[shifted], &[g.clone()], MaskReduction::Mean).unwrap(), 1.0);
    let pr = random_mask(&mut rng, 5, 7);
    let mut brute = 0.0;
    for f in 0..5 {
        for t in 0..7 {
            brute += (pr.real[(f, t)] - g.real[(f, t)]).powi(2) + (pr.imag[(f, t)] - g.imag[(f, t)]).powi(2);
        }
    }
    check("mask random", mask_prediction_loss(&[pr], &[g], MaskReduction::Mean).unwrap(), brute / 70.0);

    let d = 0.1f64.sqrt();
    let (pit, perm) = pit_mask_loss(
        &[constant_mask(d), constant_mask(1.0 - d)],
        &[constant_mask(0.0), constant_mask(1.0)],
        MaskReduction::Mean,
    )
    .unwrap();
    check("pit two sources", pit, 0.1);
    if perm != vec![0, 1] {
        bad.push(format!("pit permutation {perm:?}"));
    }

    // PIT never exceeds any fixed assignment
    let mut instances = 0;
    for n in [2usize, 3] {
        for _ in 0..100 {
            let preds: Vec<ComplexMask> = (0..n).map(|_| random_mask(&mut rng, 4, 6)).collect();
            let gts: Vec<ComplexMask> = (0..n).map(|_| random_mask(&mut rng, 4, 6)).collect();
            let (best, _) = pit_mask_loss(&preds, &gts, MaskReduction::Mean).unwrap();
            for p in avsep_core::util::permutations(n) {
                let fixed: f64 = p
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| mask_prediction_loss(&[preds[i].clone()], &[gts[j].clone()], MaskReduction::Mean).unwrap())
                    .sum();
                if best > fixed + 1e-12 {
                    bad.push(format!("pit {best} above fixed permutation {p:?} at {fixed}"));
                }
            }
            instances += 1;
        }
    }
    ensure(
        bad.is_empty(),
        if bad.is_empty() {
            format!("all hand-computed values within 1e-9; PIT minimal on {instances} random instances")
        } else {
            bad.join("; ")
        },
    )
}

fn gradient_fidelity() -> Outcome {
    let cfg = ModelConfig::tiny();
    let r = gradient_check(&cfg, 3).unwrap();
    ensure(
        cfg.channel_scale <= 0.1 && r.checked >= 200 && r.max_rel_error < 1e-3,
        format!(
            "max relative error {:.2e} over {} parameters in {} arrays ({} near kinks excluded)",
            r.max_rel_error, r.checked, r.arrays_covered, r.skipped_kinks
        ),
    )
}

/// SDR through the normal equations of the reference Gram matrix.
fn projection_oracle(refs: &[Vec<f64>], est: &[f64], j: usize) -> BssMetrics {
    let k = refs.len();
    let mut g = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for a in 0..k {
        for b in 0..k {
            g[a][b] = dot(&refs[a], &refs[b]);
        }
        rhs[a] = dot(&refs[a], est);
    }
    for c in 0..k {
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

fn bss_correctness() -> Outcome {
    let s = noise(8000, 3);
    let mut n = noise(8000, 4);
    let c = dot(&n, &s) / dot(&s, &s);
    n.iter_mut().zip(&s).for_each(|(x, y)| *x -= c * y);
    let scale = (dot(&s, &s) / dot(&n, &n)).sqrt();
    n.iter_mut().for_each(|x| *x *= scale);
    let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + 0.1 * b).collect();
    let closed = bss_eval(&[wave(s)], &[wave(est)]).unwrap()[0].sdr;

    let (mut oracle_err, mut scale_err) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let len = 3000;
        let refs = vec![noise(len, 10 * seed), noise(len, 10 * seed + 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ests: Vec<Vec<f64>> = (0..2)
            .map(|j| {
                let a = rng.gen_range(0.5..1.5);
                let b = rng.gen_range(-0.4..0.4);
                let art = noise(len, 10 * seed + 5 + j as u64);
                (0..len).map(|i| a * refs[j][i] + b * refs[1 - j][i] + 0.2 * art[i]).collect()
            })
            .collect();
        let rw: Vec<Waveform> = refs.iter().cloned().map(wave).collect();
        let got = bss_eval(&rw, &ests.iter().cloned().map(wave).collect::<Vec<_>>()).unwrap();
        for j in 0..2 {
            let want = projection_oracle(&refs, &ests[j], j);
            oracle_err = oracle_err
                .max((got[j].sdr - want.sdr).abs())
                .max((got[j].sir - want.sir).abs())
                .max((got[j].sar - want.sar).abs());
        }
        let k = rng.gen_range(0.1..10.0);
        let scaled = bss_eval(&rw, &ests.iter().map(|e| wave(e.iter().map(|v| k * v).collect())).collect::<Vec<_>>()).unwrap();
        for j in 0..2 {
            scale_err = scale_err
                .max((scaled[j].sdr - got[j].sdr).abs())
                .max((scaled[j].sir - got[j].sir).abs())
                .max((scaled[j].sar - got[j].sar).abs());
        }
    }
    ensure(
        (closed - 20.0).abs() <= 1e-6 && oracle_err <= 1e-6 && scale_err <= 1e-9,
        format!("orthogonal case {closed:.9} dB; oracle deviation {oracle_err:.1e} dB; scaling deviation {scale_err:.1e} dB"),
    )
}

fn speech_shaped_noise(len: usize, seed: u64) -> Vec<f64> {
    let x = noise(len, seed);
    let (f, r) = (500.0 / SAMPLE_RATE as f64, 0.9);
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

fn stoi_checks() -> Outcome {
    let clean = wave(speech_shaped_noise(32_000, 77));
    let same = stoi(&clean, &clean).unwrap();
    let flipped = stoi(&clean, &clean.scaled(-1.0)).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..20 {
        let c = wave(speech_shaped_noise(32_000, seed));
        let n = wave(noise(32_000, 1000 + seed).iter().map(|v| 0.05 * v).collect());
        worst = worst.max(stoi(&c, &n).unwrap());
    }
    ensure(
        (same - 1.0).abs() <= 1e-6 && (flipped - 1.0).abs() <= 1e-6 && worst < 0.2,
        format!("identical {same:.9}, sign-flipped {flipped:.9}, independent noise max {worst:.4} over 20 seeds"),
    )
}

/// Desk width (channel scale 0.25) at a reduced temporal and visual
/// resolution so the run fits the CPU budget.
fn overfit_model() -> ModelConfig {
    let mut cfg = ModelConfig::desk();
    cfg.n_frames = 16;
    cfg.roi_size = 48;
    cfg.face_size = 64;
    cfg
}

fn desk_overfit() -> Outcome {
    const STEPS: u64 = 1000;
    let cfg = overfit_model();
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_for(dir.path(), 5, 8, 2, &cfg);
    let tc = TrainConfig {
        batch_size: 4,
        learning_rate: 1e-3,
        validation_fraction: 0.0,
        checkpoint_interval: 0,
        max_steps: STEPS,
        seed: 1,
        ..TrainConfig::desk()
    };
    let t0 = Instant::now();
    let sep = Separator::new(cfg.clone()).unwrap();
    let mut st = TrainState::new(cfg.clone(), tc).unwrap();
    let tuples = fixed_tuples(&corpus, &cfg, 16, 99).unwrap();
    let random_auc = cross_modal_verification(&clip_embeddings(&sep, &st.params, &corpus, 0.5).unwrap())
        .unwrap()
        .auc;
    let mask0 = evaluate_loss(&sep, &st.params, &tuples, &st.train.loss).unwrap().mask_prediction;
    let tr = Trainer::new(&st, &corpus, vec![]).unwrap();
    tr.run(&mut st, STEPS, &mut |_| Ok(())).unwrap();
    let sdr = evaluate_tuples(&sep, &st.params, &tuples).unwrap();
    let auc = cross_modal_verification(&clip_embeddings(&sep, &st.params, &corpus, 0.5).unwrap())
        .unwrap()
        .auc;
    let mask1 = evaluate_loss(&sep, &st.params, &tuples, &st.train.loss).unwrap().mask_prediction;
    let secs = t0.elapsed().as_secs_f64();
    let gain = sdr.separated - sdr.mixture;
    ensure(
        gain >= 5.0 && auc >= 0.9 && (random_auc - 0.5).abs() <= 0.15 && secs <= 3600.0,
        format!(
            "{STEPS} steps in {secs:.0} s: SDR {:.2} vs mixture {:.2} dB (gain {gain:.2}); AUC {auc:.3} vs {random_auc:.3} at init; mask loss {mask0:.3} -> {mask1:.3}",
            sdr.separated, sdr.mixture
        ),
    )
}

fn ablation_structure() -> Outcome {
    let base = overfit_model();
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_for(dir.path(), 8, 4, 2, &base);
    let mut notes = Vec::new();
    let mut ok = true;
    for ab in Ablation::ALL {
        let mut cfg = base.clone();
        let mut tc = TrainConfig {
            batch_size: 2,
            validation_fraction: 0.0,
            checkpoint_interval: 0,
            seed: 2,
            ..TrainConfig::desk()
        };
        ab.apply(&mut cfg, &mut tc);
        let mut st = TrainState::new(cfg, tc).unwrap();
        let tr = Trainer::new(&st, &corpus, vec![]).unwrap();
        let mut logs: Vec<LogRecord> = Vec::new();
        if let Err(e) = tr.run(&mut st, 3, &mut |r| {
            logs.push(r.clone());
            Ok(())
        }) {
            ok = false;
            notes.push(format!("{}: {e}", ab.name()));
            continue;
        }
        let (cross_off, cons_off) = match ab {
            Ablation::Full | Ablation::StaticFaceOnly => (false, false),
            Ablation::LipMotionOnly => (true, false),
            Ablation::MaskLossOnly => (true, true),
        };
        let exact = logs.iter().all(|r| {
            let l = r.losses;
            (l.cross_modal == 0.0) == cross_off
                && (l.consistency == 0.0) == cons_off
                && (!(cross_off && cons_off) || l.total == l.mask_prediction)
        });
        ok &= exact && logs.len() == 3;
        let l = logs.last().map(|r| r.losses).unwrap_or_default();
        notes.push(format!("{} cross {:.3} cons {:.3}", ab.name(), l.cross_modal, l.consistency));
    }
    ensure(ok, notes.join("; "))
}

fn reproducibility() -> Outcome {
    let cfg = ModelConfig::tiny();
    let data = tempfile::tempdir().unwrap();
    let corpus = corpus_for(data.path(), 12, 4, 2, &cfg);
    let run = || {
        let out = tempfile::tempdir().unwrap();
        let tc = TrainConfig {
            batch_size: 2,
            learning_rate: 1e-3,
            checkpoint_interval: 2,
            validation_fraction: 0.5,
            validation_tuples: 2,
            seed: 21,
            workers: 2,
            ..TrainConfig::desk()
        };
        let mut st = TrainState::new(cfg.clone(), tc).unwrap();
        let tr = Trainer::new(&st, &corpus, vec![]).unwrap().with_output_dir(out.path());
        let mut log = Vec::new();
        tr.run(&mut st, 4, &mut |r| {
            let mut v = serde_json::to_value(r).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            log.push(v.to_string());
            Ok(())
        })
        .unwrap();
        let mut ckpt = std::fs::read(out.path().join("last.safetensors")).unwrap();
        let explicit = out.path().join("explicit.safetensors");
        save_checkpoint(&st, &explicit).unwrap();
        ckpt.extend(std::fs::read(&explicit).unwrap());
        let pred = NeuralPredictor::new(cfg.clone(), st.params.clone()).unwrap();
        let mut protocol = EvalProtocol::for_model(&cfg, 2, 4);
        protocol.stoi = false;
        let report = evaluate_separation(&corpus, &cfg, &Estimator::Model(&pred), &protocol).unwrap();
        (log, ckpt, serde_json::to_string(&report).unwrap())
    };
    let a = run();
    let b = run();
    ensure(
        a.0 == b.0 && a.1 == b.1 && a.2 == b.2,
        format!(
            "logs {} ({} records, wall clock excluded), checkpoints {} ({} bytes), reports {}",
            if a.0 == b.0 { "identical" } else { "differ" },
            a.0.len(),
            if a.1 == b.1 { "identical" } else { "differ" },
            a.1.len(),
            if a.2 == b.2 { "identical" } else { "differ" }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("dsp round trip", dsp_round_trip),
        ("stft shape", stft_shape),
        ("oracle-mask separation", oracle_separation),
        ("loss arithmetic", loss_arithmetic),
        ("gradient fidelity", gradient_fidelity),
        ("bss_eval correctness", bss_correctness),
        ("stoi", stoi_checks),
        ("desk-scale overfit", desk_overfit),
        ("ablation structure", ablation_structure),
        ("reproducibility", reproducibility),
    ];
    let only: Option<usize> = std::env::var("AVSEP_CRITERION").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} criterion {id:>2} {name}: {detail} [{:.1} s]", t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
