use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use avsep_core::data::{
    add_enhancement_noise, corrupt_rois, load_manifest, load_noise_pool, make_synthetic_fixture, sample_training_tuple,
    Corpus, CorruptionSpec, FaceTrackInput, MediaConfig, TupleOptions,
};
use avsep_core::dsp::{apply_mask, istft, mix_waveforms, Waveform};
use avsep_core::metrics::bss_eval;
use avsep_core::model::ModelConfig;
use avsep_core::Error;
use ndarray::{Array3, Axis};
use proptest::prelude::*;

struct Shared {
    dir: PathBuf,
    corpus: Corpus,
    noise: Vec<Waveform>,
}

fn shared() -> &'static Shared {
    static FIX: OnceLock<Shared> = OnceLock::new();
    FIX.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let info = make_synthetic_fixture(&dir, 11, 4, 2).unwrap();
        let cfg = ModelConfig::desk();
        let manifest = load_manifest(&info.manifest_path).unwrap();
        let corpus = Corpus::load(
            manifest,
            MediaConfig {
                roi_size: cfg.roi_size,
                face_size: cfg.face_size,
                fps: cfg.fps,
            },
        )
        .unwrap();
        let noise = load_noise_pool(&info.noise_dir).unwrap();
        Shared { dir, corpus, noise }
    })
}

fn opts() -> TupleOptions {
    TupleOptions::for_model(&ModelConfig::desk())
}

fn line(clip: &str, video: &str) -> String {
    format!(
        r#"{{"clip_id":"{clip}","audio_path":"a/{clip}.wav","roi_dir":"r/{clip}","face_dir":"f/{clip}","video_id":"{video}"}}"#
    )
}

fn touch_clip(dir: &Path, clip: &str) {
    std::fs::create_dir_all(dir.join("a")).unwrap();
    std::fs::write(dir.join(format!("a/{clip}.wav")), b"").unwrap();
    std::fs::create_dir_all(dir.join(format!("r/{clip}"))).unwrap();
    std::fs::create_dir_all(dir.join(format!("f/{clip}"))).unwrap();
}

fn sdr_mean(refs: &[Waveform], ests: &[Waveform]) -> f64 {
    let m = bss_eval(refs, ests).unwrap();
    m.iter().map(|r| r.sdr).sum::<f64>() / m.len() as f64
}

fn mean_frame(rois: &Array3<f32>) -> ndarray::Array2<f32> {
    rois.mean_axis(Axis(0)).unwrap()
}

#[test]
fn manifest_loads_and_groups() {
    let dir = tempfile::tempdir().unwrap();
    for c in ["c1", "c2", "c3"] {
        touch_clip(dir.path(), c);
    }
    let text = [line("c1", "v1"), line("c2", "v1"), line("c3", "v2")].join("\n");
    let p = dir.path().join("m.jsonl");
    std::fs::write(&p, text).unwrap();
    let m = load_manifest(&p).unwrap();
    assert_eq!(m.len(), 3);
    assert_eq!(m.videos()["v1"], vec![0, 1]);
    assert_eq!(m.videos()["v2"], vec![2]);
    assert_eq!(m.entries()[0].audio_path, dir.path().join("a/c1.wav"));
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    touch_clip(dir.path(), "c1");
    let p = dir.path().join("m.jsonl");

    let bad = line("c1", "v1").replace(r#""roi_dir":"r/c1","#, "");
    std::fs::write(&p, format!("{}\n{bad}\n", line("c0", "v0"))).unwrap();
    match load_manifest(&p) {
        Err(Error::Parse(msg)) => {
            assert!(msg.contains("line 2"), "{msg}");
            assert!(msg.contains("roi_dir"), "{msg}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }

    std::fs::write(&p, format!("{}\n{}\n", line("c1", "v1"), line("c1", "v2"))).unwrap();
    assert!(matches!(load_manifest(&p), Err(Error::DuplicateId(id)) if id == "c1"));

    std::fs::write(&p, format!("{}\n{}\n", line("c1", "v1"), line("c9", "v2"))).unwrap();
    match load_manifest(&p) {
        Err(Error::MissingAsset(paths)) => {
            assert_eq!(paths.len(), 3);
            assert!(paths.iter().all(|p| p.to_string_lossy().contains("c9")));
        }
        other => panic!("expected missing assets, got {other:?}"),
    }

    let extra = line("c1", "v1").replace('}', r#","speaker":"x"}"#);
    std::fs::write(&p, extra).unwrap();
    assert!(matches!(load_manifest(&p), Err(Error::Parse(_))));
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn fixture_is_deterministic_and_sized() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let info = make_synthetic_fixture(a.path(), 5, 8, 4).unwrap();
    make_synthetic_fixture(b.path(), 5, 8, 4).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    let m = load_manifest(&info.manifest_path).unwrap();
    assert_eq!(m.len(), 32);
    assert_eq!(m.videos().len(), 8);
    assert!(matches!(make_synthetic_fixture(a.path(), 5, 1, 4), Err(Error::InvalidInput(_))));
}

#[test]
fn corpus_media_has_model_geometry() {
    let s = shared();
    let cfg = ModelConfig::desk();
    let clip = s.corpus.clip(0);
    assert_eq!(clip.rois.dim().1, cfg.roi_size);
    assert!(clip.frames() >= cfg.n_frames);
    let t = clip.track(0, cfg.n_frames, 0).unwrap();
    assert_eq!(t.mouth_rois.dim(), (64, 88, 88));
    assert_eq!(t.face_image.dim(), (3, 224, 224));
    assert!(t.mouth_rois.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(s.dir.join("manifest.jsonl").is_file());
}

#[test]
fn tuples_are_deterministic_and_exact() {
    let s = shared();
    let o = opts();
    let t = sample_training_tuple(&s.corpus, 3, &o).unwrap();
    let again = sample_training_tuple(&s.corpus, 3, &o).unwrap();
    assert_eq!(t.digest(), again.digest());
    assert_eq!(t, again);
    assert_ne!(t.digest(), sample_training_tuple(&s.corpus, 4, &o).unwrap().digest());

    assert_eq!(t.x1.len(), 40_800);
    assert_eq!(t.spec1.shape(), (257, 256));
    let (x1, _) = mix_waveforms(&t.s_a1, &t.s_b, t.snr_db[0]).unwrap();
    assert_eq!(x1, t.x1);
    for (i, &v) in t.x1.samples().iter().enumerate() {
        assert_eq!(v, t.s_a1.samples()[i] + t.s_b1.samples()[i]);
    }
    for m in &t.gt_masks {
        assert!(m.max_abs() <= 5.0);
    }
}

#[test]
fn zero_db_equal_rms_mix_is_a_plain_sum() {
    let s = shared();
    let o = TupleOptions {
        snr_range_db: (0.0, 0.0),
        ..opts()
    };
    let t = sample_training_tuple(&s.corpus, 8, &o).unwrap();
    // sign patterns of the sources have bit-identical RMS
    let sign = |w: &Waveform| Waveform::new(w.samples().iter().map(|v| 0.1f64.copysign(*v)).collect(), 16_000).unwrap();
    let (a, b) = (sign(&t.s_a1), sign(&t.s_b));
    let (x, g) = mix_waveforms(&a, &b, 0.0).unwrap();
    assert_eq!(g, 1.0);
    for i in 0..x.len() {
        assert_eq!(x.samples()[i] - a.samples()[i] - b.samples()[i], 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn tuples_respect_video_constraints(seed in 0u64..100_000) {
        let s = shared();
        let t = sample_training_tuple(&s.corpus, seed, &opts()).unwrap();
        let video = |clip: &str| s.corpus.manifest().entries().iter().find(|e| e.clip_id == clip).unwrap().video_id.clone();
        prop_assert_eq!(video(&t.origin.clips[0]), t.origin.video_a.clone());
        prop_assert_eq!(video(&t.origin.clips[1]), t.origin.video_a.clone());
        prop_assert_eq!(video(&t.origin.clips[2]), t.origin.video_b.clone());
        prop_assert_ne!(&t.origin.video_a, &t.origin.video_b);
        prop_assert!((-2.5..=2.5).contains(&t.snr_db[0]) && (-2.5..=2.5).contains(&t.snr_db[1]));
        if t.origin.clips[0] == t.origin.clips[1] {
            let (a, b) = (t.origin.start_frames[0], t.origin.start_frames[1]);
            prop_assert!(a.abs_diff(b) >= 64);
        }
    }
}

#[test]
fn oracle_masks_recover_sources() {
    let s = shared();
    let o = opts();
    let mut total = 0.0;
    let seeds = 6;
    for seed in 0..seeds {
        let t = sample_training_tuple(&s.corpus, 100 + seed, &o).unwrap();
        let n = t.x1.len();
        let spec = [&t.spec1, &t.spec2, &t.spec1, &t.spec2];
        let est: Vec<Waveform> = t
            .gt_masks
            .iter()
            .zip(spec)
            .map(|(m, x)| istft(&apply_mask(x, m).unwrap(), &o.stft, n).unwrap())
            .collect();
        let in_x1 = sdr_mean(&[t.s_a1.clone(), t.s_b1.clone()], &[est[0].clone(), est[2].clone()]);
        let in_x2 = sdr_mean(&[t.s_a2.clone(), t.s_b2.clone()], &[est[1].clone(), est[3].clone()]);
        total += (in_x1 + in_x2) / 2.0;
    }
    let mean = total / seeds as f64;
    assert!(mean >= 20.0, "oracle SDR {mean}");
}

#[test]
fn sampling_exhausts_on_short_material() {
    let s = shared();
    let o = TupleOptions {
        n_frames: 80,
        segment_samples: 160 * 319,
        max_attempts: 5,
        ..opts()
    };
    assert!(matches!(
        sample_training_tuple(&s.corpus, 1, &o),
        Err(Error::SamplingExhausted { attempts: 5, .. })
    ));
}

#[test]
fn enhancement_noise() {
    let s = shared();
    let o = opts();
    let t = sample_training_tuple(&s.corpus, 21, &o).unwrap();
    assert_eq!(add_enhancement_noise(&t, &s.noise, f64::INFINITY, 1).unwrap(), t);
    assert!(matches!(add_enhancement_noise(&t, &[], 0.0, 1), Err(Error::InvalidInput(_))));

    let pool = vec![t.x1.clone()];
    let n = add_enhancement_noise(&t, &pool, 0.0, 2).unwrap();
    assert_eq!(n.noise.as_ref().unwrap()[0], t.x1);

    let noisy = add_enhancement_noise(&t, &s.noise, 0.0, 3).unwrap();
    let noise = noisy.noise.as_ref().unwrap();
    assert_ne!(noise[0], noise[1]);
    let est = istft(&apply_mask(&noisy.spec1, &noisy.gt_masks[0]).unwrap(), &o.stft, t.x1.len()).unwrap();
    let m = bss_eval(&[t.s_a1.clone(), t.s_b1.clone(), noise[0].clone()], &[est, t.s_b1.clone(), noise[0].clone()]).unwrap();
    assert!(m[0].sdr >= 15.0, "sdr {}", m[0].sdr);
}

fn track(frames: usize) -> FaceTrackInput {
    FaceTrackInput {
        mouth_rois: Array3::from_shape_fn((frames, 4, 4), |(f, y, x)| (f * 16 + y * 4 + x) as f32 / 1024.0),
        face_image: Array3::from_elem((3, 8, 8), 0.5),
        corruption: CorruptionSpec::disabled(),
    }
}

#[test]
fn corruption_examples() {
    let t = track(64);
    assert_eq!(corrupt_rois(&t, &CorruptionSpec::disabled(), 25.0, 1).unwrap(), t);

    let shift = CorruptionSpec {
        time_shift: 1.0,
        enabled: true,
        ..CorruptionSpec::disabled()
    };
    assert_eq!(shift.shift_frames(25.0), 25);
    let out = corrupt_rois(&t, &shift, 25.0, 1).unwrap();
    let moved = (0..64).all(|i| {
        out.mouth_rois.index_axis(Axis(0), i) == t.mouth_rois.index_axis(Axis(0), (i + 64 - 25) % 64)
    }) || (0..64).all(|i| out.mouth_rois.index_axis(Axis(0), i) == t.mouth_rois.index_axis(Axis(0), (i + 25) % 64));
    assert!(moved);
    assert_eq!(out.face_image, t.face_image);

    let occlude = CorruptionSpec {
        occlusion_duration: 64.0 / 25.0,
        enabled: true,
        ..CorruptionSpec::disabled()
    };
    let out = corrupt_rois(&t, &occlude, 25.0, 1).unwrap();
    let mean = mean_frame(&t.mouth_rois);
    assert!((0..64).all(|i| out.mouth_rois.index_axis(Axis(0), i) == mean));

    let too_long = CorruptionSpec {
        occlusion_duration: 2.0,
        occlusion_start: 30,
        enabled: true,
        ..CorruptionSpec::disabled()
    };
    assert!(corrupt_rois(&t, &too_long, 25.0, 1).is_err());
}

proptest! {
    #[test]
    fn zero_corruption_is_identity(seed in any::<u64>(), start in 0usize..64) {
        let t = track(64);
        let spec = CorruptionSpec { time_shift: 0.0, occlusion_duration: 0.0, occlusion_start: start, enabled: true };
        prop_assert_eq!(corrupt_rois(&t, &spec, 25.0, seed).unwrap().mouth_rois, t.mouth_rois);
    }

    #[test]
    fn sampled_corruption_is_valid(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let spec = CorruptionSpec::sample(&mut rng, 64, 25.0, 1.0, 1.0);
        prop_assert!(spec.validate(64, 25.0).is_ok());
        prop_assert!(spec.time_shift <= 1.0 && spec.occlusion_duration <= 1.0);
    }
}
