use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use avsep_core::data::{
    load_manifest, load_noise_pool, make_synthetic_fixture_with, sample_training_tuple, Corpus, FixtureOptions,
    Manifest, ManifestEntry, MediaConfig, TupleOptions,
};
use avsep_core::dsp::{istft, stft, write_wav, Waveform};
use avsep_core::eval::{clip_embeddings, cross_modal_verification, evaluate_separation, EvalProtocol, Estimator};
use avsep_core::infer::{enhance_clip, separate_clip, NeuralPredictor, SpeakerVisuals, WindowConfig};
use avsep_core::model::{load_model, ModelCheckpoint, ModelConfig};
use avsep_core::train::{gradient_check_with, load_checkpoint, GradCheckOptions, TrainState, Trainer};
use avsep_core::util::mix_seed;
use avsep_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{
    CheckArgs, Command, Common, EvalSepArgs, EvalVerifyArgs, ExportArgs, FixtureArgs, RunConfig, SampleArgs,
    SeparateArgs, TrainArgs, UsageError, CACHE_ENV,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fixture(a) => fixture(a),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train(a),
        Command::Separate(a) => separate(a, false),
        Command::Enhance(a) => separate(a, true),
        Command::EvalSep(a) => eval_sep(a),
        Command::EvalVerify(a) => eval_verify(a),
        Command::ExportEmbeddings(a) => export_embeddings(a),
        Command::Check(a) => check(a),
    }
}

/// Provenance block written into every artifact.
fn provenance(cfg: &RunConfig) -> Value {
    json!({ "config_digest": cfg.digest(), "seed": cfg.train.seed, "model_digest": cfg.model.digest() })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn load_corpus(manifest: &Path, cfg: &ModelConfig) -> Result<Corpus> {
    let m = load_manifest(manifest)?;
    Ok(Corpus::load(m, media_for(cfg))?)
}

fn media_for(cfg: &ModelConfig) -> MediaConfig {
    MediaConfig {
        roi_size: cfg.roi_size,
        face_size: cfg.face_size,
        fps: cfg.fps,
    }
}

/// Loads a checkpoint and, when the run names a model explicitly, requires
/// it to match.
fn load_for_inference(path: &Path, common: &Common, run: &RunConfig) -> Result<ModelCheckpoint> {
    let ckpt = load_model(path)?;
    if common.config.is_some() && !common.static_face_only && !common.lip_motion_only && run.model != ckpt.config {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{} holds model {} but the configuration describes {}",
            path.display(),
            ckpt.meta.config_digest,
            run.model.digest()
        ))
        .into());
    }
    Ok(ckpt)
}

/// The run's window settings, re-derived for `model` unless set explicitly.
fn window_for(run: &RunConfig, model: &ModelConfig) -> WindowConfig {
    let mut w = if run.window.window == WindowConfig::for_model(&run.model).window
        && run.window.hop == WindowConfig::for_model(&run.model).hop
    {
        WindowConfig::for_model(model)
    } else {
        run.window.clone()
    };
    w.blend = run.window.blend;
    w.face_frame_seed = run.window.face_frame_seed;
    w
}

fn fixture(a: FixtureArgs) -> Result<()> {
    let run = a.common.run_config()?;
    let seed = run.train.seed;
    let (dir, cached) = match &a.out {
        Some(d) => (d.clone(), false),
        None => {
            let root = std::env::var_os(CACHE_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| std::env::temp_dir().join("avsep-cache"));
            (root.join(format!("fixture-s{seed}-{}x{}-{}s", a.speakers, a.clips, a.seconds)), true)
        }
    };
    let manifest_path = dir.join("manifest.jsonl");
    if !(cached && manifest_path.exists()) {
        mkdir(&dir)?;
        let opts = FixtureOptions {
            clip_seconds: a.seconds,
            ..FixtureOptions::default()
        };
        make_synthetic_fixture_with(&dir, seed, a.speakers, a.clips, &opts)?;
        let m = load_manifest(&manifest_path)?;
        write_json(
            &dir.join("fixture.json"),
            &json!({
                "seed": seed,
                "speakers": a.speakers,
                "clips_per_speaker": a.clips,
                "clip_seconds": a.seconds,
                "manifest_digest": m.digest(),
            }),
        )?;
    }
    println!("{}", manifest_path.display());
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let run = a.common.run_config()?;
    let corpus = load_corpus(&a.manifest, &run.model)?;
    let mut opts = TupleOptions::for_model(&run.model);
    opts.corruption = run.train.corruption;
    opts.random_face = run.train.random_face;
    mkdir(&a.out)?;
    for j in 0..a.count {
        let t = sample_training_tuple(&corpus, mix_seed(run.train.seed, &[0x73616d, j as u64]), &opts)?;
        let dir = a.out.join(format!("tuple{j:03}"));
        mkdir(&dir)?;
        for (name, w) in [
            ("x1", &t.x1),
            ("x2", &t.x2),
            ("s_a1", &t.s_a1),
            ("s_a2", &t.s_a2),
            ("s_b1", &t.s_b1),
            ("s_b2", &t.s_b2),
        ] {
            write_wav(&dir.join(format!("{name}.wav")), w)?;
        }
        let digest = t.digest();
        write_json(
            &dir.join("tuple.json"),
            &json!({ "run": provenance(&run), "digest": digest, "origin": t.origin, "snr_db": t.snr_db }),
        )?;
        println!("tuple {j}: {} + {} snr {:.2}/{:.2} dB {digest}", t.origin.video_a, t.origin.video_b, t.snr_db[0], t.snr_db[1]);
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut run = a.common.run_config()?;
    let mut state = match &a.resume {
        Some(p) => {
            let st = load_checkpoint(p)?;
            run.model = st.model.clone();
            run.train = st.train.clone();
            st
        }
        None => TrainState::new(run.model.clone(), run.train.clone())?,
    };
    let corpus = load_corpus(&a.manifest, &run.model)?;
    let noise = match &a.noise {
        Some(d) => load_noise_pool(d)?,
        None => Vec::new(),
    };
    mkdir(&a.out)?;
    write_json(
        &a.out.join("run.json"),
        &json!({ "run": provenance(&run), "config": run, "manifest_digest": corpus.manifest().digest() }),
    )?;
    let steps = a.steps.unwrap_or(run.train.max_steps);
    let trainer = Trainer::new(&state, &corpus, noise)?.with_output_dir(&a.out);
    let log_path = a.out.join("log.jsonl");
    let file = if a.resume.is_some() {
        std::fs::OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        std::fs::File::create(&log_path)
    }
    .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = std::io::BufWriter::new(file);
    let t0 = Instant::now();
    trainer.run(&mut state, steps, &mut |r| {
        serde_json::to_writer(&mut log, r).map_err(|e| Error::Parse(e.to_string()))?;
        log.write_all(b"\n").map_err(|e| Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        if r.step % 50 == 0 || r.val_loss.is_some() {
            eprintln!("step {} loss {:.4} ({:.0?})", r.step, r.losses.total, t0.elapsed());
        }
        Ok(())
    })?;
    log.flush()?;
    println!("{}", a.out.join("last.safetensors").display());
    Ok(())
}

fn separate(a: SeparateArgs, enhance: bool) -> Result<()> {
    let run = a.common.run_config()?;
    let ckpt = load_for_inference(&a.checkpoint, &a.common, &run)?;
    let pred = NeuralPredictor::from_checkpoint(&ckpt)?;
    let model = &ckpt.config;
    if a.roi_dir.len() != a.face_dir.len() {
        return Err(UsageError(format!(
            "{} --roi-dir but {} --face-dir; give one of each per speaker",
            a.roi_dir.len(),
            a.face_dir.len()
        ))
        .into());
    }
    let streams = a.roi_dir.len();
    if enhance && streams != 1 {
        return Err(UsageError("enhance takes exactly one --roi-dir/--face-dir pair".into()).into());
    }
    if model.audio_only() && streams > 0 {
        return Err(UsageError("this model uses no visual input; omit --roi-dir/--face-dir".into()).into());
    }
    let clip_id = match &a.clip_id {
        Some(c) => c.clone(),
        None => a
            .audio
            .file_stem()
            .and_then(|s| s.to_str())
            .context("audio path has no file name")?
            .to_string(),
    };
    let mixture = avsep_core::dsp::read_wav(&a.audio)?;
    let mut visuals = Vec::new();
    if streams > 0 {
        let entries = (0..streams)
            .map(|k| ManifestEntry {
                clip_id: format!("{clip_id}.spk{k}"),
                audio_path: a.audio.clone(),
                roi_dir: a.roi_dir[k].clone(),
                face_dir: a.face_dir[k].clone(),
                video_id: format!("speaker{k}"),
            })
            .collect();
        let corpus = Corpus::load(Manifest::from_entries(entries)?, media_for(model))?;
        visuals = corpus.clips().iter().map(SpeakerVisuals::from_clip).collect();
    }
    let wcfg = window_for(&run, model);
    let result = if enhance {
        enhance_clip(&pred, &mixture, &visuals[0], &wcfg)?
    } else {
        separate_clip(&pred, &mixture, &visuals, &wcfg)?
    };
    mkdir(&a.out)?;
    let mut files = Vec::new();
    for (k, s) in result.sources.iter().enumerate() {
        let name = format!("{clip_id}.spk{k}.wav");
        write_wav(&a.out.join(&name), s)?;
        files.push(name);
    }
    write_json(
        &a.out.join(format!("{clip_id}.json")),
        &json!({
            "run": provenance(&run),
            "checkpoint": { "config_digest": ckpt.meta.config_digest, "seed": ckpt.meta.seed },
            "clip_id": clip_id,
            "task": if enhance { "enhance" } else { "separate" },
            "outputs": files,
            "window": wcfg,
            "window_samples": result.window_samples,
            "window_starts": result.window_starts,
            "sample_rate": model.sample_rate,
            "samples": mixture.len(),
        }),
    )?;
    for f in &files {
        println!("{}", a.out.join(f).display());
    }
    Ok(())
}

fn eval_sep(a: EvalSepArgs) -> Result<()> {
    let run = a.common.run_config()?;
    let ckpt = a
        .checkpoint
        .as_ref()
        .map(|p| load_for_inference(p, &a.common, &run))
        .transpose()?;
    let pred = ckpt.as_ref().map(NeuralPredictor::from_checkpoint).transpose()?;
    let model = ckpt.as_ref().map(|c| c.config.clone()).unwrap_or_else(|| run.model.clone());
    let corpus = load_corpus(&a.manifest, &model)?;
    let estimator = match &pred {
        Some(p) => Estimator::Model(p),
        None if a.oracle_masks => Estimator::OracleMasks(model.clone()),
        None => Estimator::Mixture,
    };
    let protocol = EvalProtocol {
        pairs: a.pairs,
        seed: run.train.seed,
        snr_db: a.snr_db,
        window: window_for(&run, &model),
        stoi: !a.no_stoi,
    };
    let report = evaluate_separation(&corpus, &model, &estimator, &protocol)?;
    let g = &report.aggregate;
    println!(
        "{}: sdr {:.3} sir {:.3} sar {:.3} dB (mixture sdr {:.3}) over {} pairs{}",
        report.estimator,
        g.sdr,
        g.sir,
        g.sar,
        g.mixture_sdr,
        report.per_pair.len(),
        g.stoi.map(|s| format!(", stoi {s:.4}")).unwrap_or_default()
    );
    if let Some(out) = &a.out {
        write_json(out, &json!({ "run": provenance(&run), "report": report }))?;
    }
    Ok(())
}

fn eval_verify(a: EvalVerifyArgs) -> Result<()> {
    let run = a.common.run_config()?;
    let ckpt = load_for_inference(&a.checkpoint, &a.common, &run)?;
    let pred = NeuralPredictor::from_checkpoint(&ckpt)?;
    let corpus = load_corpus(&a.manifest, &ckpt.config)?;
    let emb = clip_embeddings(pred.separator(), &ckpt.params, &corpus, a.offset)?;
    let r = cross_modal_verification(&emb)?;
    println!("auc {:.4} eer {:.4} over {} pairs", r.auc, r.eer, r.n_pairs);
    if let Some(out) = &a.out {
        write_json(
            out,
            &json!({
                "run": provenance(&run),
                "checkpoint": { "config_digest": ckpt.meta.config_digest, "seed": ckpt.meta.seed },
                "manifest_digest": corpus.manifest().digest(),
                "offset": a.offset,
                "verification": r,
            }),
        )?;
    }
    Ok(())
}

fn export_embeddings(a: ExportArgs) -> Result<()> {
    let run = a.common.run_config()?;
    let ckpt = load_for_inference(&a.checkpoint, &a.common, &run)?;
    let pred = NeuralPredictor::from_checkpoint(&ckpt)?;
    let corpus = load_corpus(&a.manifest, &ckpt.config)?;
    let emb = clip_embeddings(pred.separator(), &ckpt.params, &corpus, a.offset)?;
    let dim = ckpt.config.embed_dim;
    let mut out = String::from("clip_id,video_id,modality");
    for i in 0..dim {
        out.push_str(&format!(",e{i}"));
    }
    out.push('\n');
    for e in &emb {
        for v in [&e.face, &e.voice] {
            out.push_str(&format!("{},{},{}", csv_field(&e.clip_id), csv_field(&e.video_id), v.modality.as_str()));
            for x in &v.values {
                out.push_str(&format!(",{x:e}"));
            }
            out.push('\n');
        }
    }
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    let mut meta = a.out.clone().into_os_string();
    meta.push(".json");
    write_json(
        Path::new(&meta),
        &json!({
            "run": provenance(&run),
            "checkpoint": { "config_digest": ckpt.meta.config_digest, "seed": ckpt.meta.seed },
            "manifest_digest": corpus.manifest().digest(),
            "offset": a.offset,
            "rows": 2 * emb.len(),
        }),
    )?;
    println!("{} rows -> {}", 2 * emb.len(), a.out.display());
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn check(a: CheckArgs) -> Result<()> {
    let run = a.common.run_config()?;
    let seed = run.train.seed;
    let mut failed = 0;
    let mut line = |ok: bool, what: String| {
        println!("{} {what}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed += 1;
        }
    };

    let stft_cfg = run.model.stft;
    let len = run.model.segment_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x636b]));
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Waveform::new(x, run.model.sample_rate)?;
        let y = istft(&stft(&w, &stft_cfg)?, &stft_cfg, len)?;
        // interior only: the edges lack full window overlap
        let edge = stft_cfg.window_length;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in edge..len - edge {
            num += (w.samples()[i] - y.samples()[i]).powi(2);
            den += w.samples()[i].powi(2);
        }
        worst = worst.max((num / den).sqrt());
    }
    line(worst <= 1e-6, format!("stft round trip: max relative error {worst:.3e}"));

    let opts = GradCheckOptions {
        samples: a.samples,
        ..GradCheckOptions::default()
    };
    let mut tiny = ModelConfig::tiny();
    tiny.mode = run.model.mode;
    tiny.use_lip = run.model.use_lip;
    tiny.use_face = run.model.use_face;
    match gradient_check_with(&tiny, seed, &opts) {
        Ok(r) => line(
            r.max_rel_error < 1e-3 && r.checked >= a.samples,
            format!(
                "gradient check: max relative error {:.3e} over {} parameters ({} near kinks skipped)",
                r.max_rel_error, r.checked, r.skipped_kinks
            ),
        ),
        Err(e) => line(false, format!("gradient check: {e}")),
    }
    if failed > 0 {
        bail!("{failed} check(s) failed");
    }
    Ok(())
}
