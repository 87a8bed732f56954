use std::sync::OnceLock;

use avsep_core::data::{load_manifest, make_synthetic_fixture, Corpus, MediaConfig};
use avsep_core::eval::{
    clip_embeddings, cross_modal_verification, evaluate_separation, evaluate_tuples, fixed_tuples, make_test_pairs,
    EvalProtocol, Estimator,
};
use avsep_core::infer::NeuralPredictor;
use avsep_core::metrics::bss_eval;
use avsep_core::model::{ModelConfig, Separator};
use avsep_core::Error;

fn corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let info = make_synthetic_fixture(&dir, 31, 4, 2).unwrap();
        let cfg = ModelConfig::tiny();
        Corpus::load(
            load_manifest(&info.manifest_path).unwrap(),
            MediaConfig {
                roi_size: cfg.roi_size,
                face_size: cfg.face_size,
                fps: cfg.fps,
            },
        )
        .unwrap()
    })
}

#[test]
fn oracle_masks_score_high_and_mixture_matches_baseline() {
    let cfg = ModelConfig::tiny();
    let protocol = EvalProtocol::for_model(&cfg, 3, 7);
    let oracle = evaluate_separation(corpus(), &cfg, &Estimator::OracleMasks(cfg.clone()), &protocol).unwrap();
    assert_eq!(oracle.per_pair.len(), 3);
    assert!(oracle.aggregate.sdr >= 20.0, "{:?}", oracle.aggregate);
    assert!(oracle.aggregate.stoi.unwrap() > 0.9);
    assert_eq!(oracle.config_digest, cfg.digest());
    assert_eq!(oracle.manifest_digest, corpus().manifest().digest());

    let mix = evaluate_separation(corpus(), &cfg, &Estimator::Mixture, &protocol).unwrap();
    for p in &mix.per_pair {
        for s in &p.sources {
            assert_eq!(s.sdr, s.mixture_sdr);
        }
    }
    assert_eq!(mix.aggregate.sdr, mix.aggregate.mixture_sdr);
    assert_eq!(mix.aggregate.mixture_sdr, oracle.aggregate.mixture_sdr);
}

#[test]
fn seeded_reports_are_identical() {
    let cfg = ModelConfig::tiny();
    let sep = Separator::new(cfg.clone()).unwrap();
    let pred = NeuralPredictor::new(cfg.clone(), sep.init_params(4)).unwrap();
    let mut protocol = EvalProtocol::for_model(&cfg, 2, 11);
    protocol.stoi = false;
    let run = || serde_json::to_string(&evaluate_separation(corpus(), &cfg, &Estimator::Model(&pred), &protocol).unwrap()).unwrap();
    let a = run();
    assert_eq!(a, run());
    assert!(a.contains(&cfg.digest()));
    let mut other = protocol.clone();
    other.seed = 12;
    let b = serde_json::to_string(&evaluate_separation(corpus(), &cfg, &Estimator::Model(&pred), &other).unwrap()).unwrap();
    assert_ne!(a, b);
}

#[test]
fn test_pairs_mix_different_videos_at_requested_level() {
    let cfg = ModelConfig::tiny();
    let pairs = make_test_pairs(corpus(), &cfg, 6, 3, 0.0).unwrap();
    let entries = corpus().manifest().entries();
    for p in &pairs {
        assert_ne!(entries[p.clips[0]].video_id, entries[p.clips[1]].video_id);
        let [a, b] = &p.sources;
        assert_eq!(a.len(), p.mixture.len());
        assert!((a.energy() / b.energy() - 1.0).abs() < 1e-6);
        for (i, &m) in p.mixture.samples().iter().enumerate() {
            assert!((m - a.samples()[i] - b.samples()[i]).abs() < 1e-9);
        }
    }
    let again = make_test_pairs(corpus(), &cfg, 6, 3, 0.0).unwrap();
    assert!(pairs.iter().zip(&again).all(|(x, y)| x.clips == y.clips && x.mixture == y.mixture));
    let one = ModelConfig::tiny();
    let single = corpus().restrict(|v| v == entries[0].video_id).unwrap();
    assert!(matches!(make_test_pairs(&single, &one, 1, 0, 0.0), Err(Error::InvalidInput(_))));
}

#[test]
fn embeddings_are_unit_norm_and_all_pairs_are_scored() {
    let cfg = ModelConfig::tiny();
    let sep = Separator::new(cfg.clone()).unwrap();
    let params = sep.init_params(5);
    let emb = clip_embeddings(&sep, &params, corpus(), 0.5).unwrap();
    assert_eq!(emb.len(), corpus().manifest().len());
    for e in &emb {
        assert!((e.face.norm() - 1.0).abs() < 1e-6);
        assert!((e.voice.norm() - 1.0).abs() < 1e-6);
    }
    let r = cross_modal_verification(&emb).unwrap();
    assert_eq!(r.n_pairs, emb.len() * emb.len());
    assert!((0.0..=1.0).contains(&r.auc) && (0.0..=1.0).contains(&r.eer));

    let mut no_face = cfg.clone();
    no_face.use_face = false;
    let s2 = Separator::new(no_face).unwrap();
    assert!(matches!(clip_embeddings(&s2, &s2.init_params(1), corpus(), 0.5), Err(Error::Config(_))));
}

#[test]
fn tuple_sdr_baseline_matches_direct_scoring() {
    let cfg = ModelConfig::tiny();
    let sep = Separator::new(cfg.clone()).unwrap();
    let tuples = fixed_tuples(corpus(), &cfg, 2, 9).unwrap();
    let r = evaluate_tuples(&sep, &sep.init_params(2), &tuples).unwrap();
    assert!(r.separated.is_finite());
    let mut direct = Vec::new();
    for t in &tuples {
        for (x, a, b) in [(&t.x1, &t.s_a1, &t.s_b1), (&t.x2, &t.s_a2, &t.s_b2)] {
            direct.extend(bss_eval(&[a.clone(), b.clone()], &[x.clone(), x.clone()]).unwrap().iter().map(|m| m.sdr));
        }
    }
    let expect = direct.iter().sum::<f64>() / direct.len() as f64;
    assert!((r.mixture - expect).abs() < 1e-9);
}
