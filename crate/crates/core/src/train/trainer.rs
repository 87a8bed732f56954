use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::loss_graph;
use super::{save_checkpoint, TrainConfig, TrainState};
use crate::data::{add_enhancement_noise, sample_training_tuple, Corpus, Manifest, TrainingTuple, TupleOptions};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::model::{Binder, ModelParams, Separator};
use crate::objectives::{LossBreakdown, LossWeights};
use crate::util::{mix_seed, sha256_hex};

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub losses: LossBreakdown,
    pub learning_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_loss: Option<f64>,
    pub wall_ms: u64,
}

/// Held-out videos: those whose id hashes below `fraction`. Returns an
/// empty set when holding out would leave fewer than two training videos.
pub fn validation_split(manifest: &Manifest, fraction: f64) -> BTreeSet<String> {
    let held: BTreeSet<String> = manifest
        .videos()
        .keys()
        .filter(|v| {
            let h = sha256_hex(v.as_bytes());
            let x = u64::from_str_radix(&h[..16], 16).expect("hex digest");
            (x as f64) / 2f64.powi(64) < fraction
        })
        .cloned()
        .collect();
    if manifest.videos().len() - held.len() < 2 {
        return BTreeSet::new();
    }
    held
}

/// Loss of `batch` under `params` without touching optimizer state.
pub fn evaluate_loss(
    sep: &Separator,
    params: &ModelParams<f32>,
    batch: &[TrainingTuple],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let b = Binder::new(params, false);
    let refs: Vec<&TrainingTuple> = batch.iter().collect();
    Ok(loss_graph(sep, &b, &refs, weights)?.breakdown)
}

/// One AdamW step on `batch`. Non-finite losses, gradients or parameters
/// and losses above the divergence threshold abort without a partial
/// update being reported as success.
pub fn train_step(state: &mut TrainState, sep: &Separator, batch: &[TrainingTuple]) -> Result<LossBreakdown> {
    if sep.config() != &state.model {
        return Err(Error::Config("separator and training state use different model configs".into()));
    }
    let grads = {
        let b = Binder::new(&state.params, true);
        let refs: Vec<&TrainingTuple> = batch.iter().collect();
        let g = loss_graph(sep, &b, &refs, &state.train.loss)?;
        if g.breakdown.total > state.train.divergence_threshold {
            return Err(Error::Diverged {
                step: state.step,
                loss: g.breakdown.total,
            });
        }
        let grads = g.total.backward();
        (b.gradients(&grads), g.breakdown)
    };
    let (grads, breakdown) = grads;
    for (name, g) in &grads {
        if let Some(v) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                term: format!("gradient of {name}"),
                value: *v as f64,
            });
        }
    }
    state.apply_gradients(&grads);
    state.step += 1;
    if let Some(name) = state.params.first_non_finite() {
        return Err(Error::Numerical {
            term: format!("parameter {name}"),
            value: f64::NAN,
        });
    }
    Ok(breakdown)
}

/// Draws batches from a corpus and drives [`train_step`].
pub struct Trainer {
    sep: Separator,
    train_corpus: Corpus,
    noise: Vec<Waveform>,
    opts: TupleOptions,
    val_batch: Vec<TrainingTuple>,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(state: &TrainState, corpus: &Corpus, noise: Vec<Waveform>) -> Result<Self> {
        let cfg = &state.train;
        cfg.validate()?;
        if cfg.enhancement && noise.is_empty() {
            return Err(Error::Config("enhancement training needs a noise pool".into()));
        }
        let sep = Separator::new(state.model.clone())?;
        let mut opts = TupleOptions::for_model(&state.model);
        opts.corruption = cfg.corruption;
        opts.random_face = cfg.random_face;
        let held = validation_split(corpus.manifest(), cfg.validation_fraction);
        let train_corpus = corpus.restrict(|v| !held.contains(v))?;
        let mut val_batch = Vec::new();
        if held.len() >= 2 && cfg.validation_tuples > 0 {
            let val = corpus.restrict(|v| held.contains(v))?;
            // validation tuples are fixed for the run and never corrupted
            let mut vopts = opts.clone();
            vopts.corruption = None;
            vopts.random_face = false;
            for j in 0..cfg.validation_tuples {
                val_batch.push(sample_training_tuple(&val, mix_seed(cfg.seed, &[0x76616c, j as u64]), &vopts)?);
            }
        } else if !held.is_empty() {
            log::warn!("{} held-out video(s) cannot form validation tuples", held.len());
        }
        Ok(Self {
            sep,
            train_corpus,
            noise,
            opts,
            val_batch,
            out_dir: None,
        })
    }

    /// Checkpoints go to `dir/last.safetensors` and `dir/best.safetensors`.
    pub fn with_output_dir(mut self, dir: &Path) -> Self {
        self.out_dir = Some(dir.to_path_buf());
        self
    }

    pub fn separator(&self) -> &Separator {
        &self.sep
    }

    pub fn train_corpus(&self) -> &Corpus {
        &self.train_corpus
    }

    pub fn validation_batch(&self) -> &[TrainingTuple] {
        &self.val_batch
    }

    fn tuple(&self, cfg: &TrainConfig, seed: u64) -> Result<TrainingTuple> {
        let t = sample_training_tuple(&self.train_corpus, seed, &self.opts)?;
        if !cfg.enhancement {
            return Ok(t);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x656e]));
        let (lo, hi) = cfg.enhancement_snr_db;
        let snr = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        add_enhancement_noise(&t, &self.noise, snr, rng.next_u64())
    }

    /// Next batch; the content depends only on the state's RNG, not on the
    /// worker count.
    pub fn sample_batch(&self, state: &mut TrainState) -> Result<Vec<TrainingTuple>> {
        let cfg = state.train.clone();
        let base = state.rng.next_u64();
        let seeds: Vec<u64> = (0..cfg.batch_size as u64).map(|j| mix_seed(base, &[j])).collect();
        let workers = cfg.workers.clamp(1, seeds.len());
        if workers == 1 {
            return seeds.iter().map(|&s| self.tuple(&cfg, s)).collect();
        }
        let chunk = seeds.len().div_ceil(workers);
        let parts: Vec<Result<Vec<TrainingTuple>>> = std::thread::scope(|sc| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|c| {
                    let cfg = &cfg;
                    sc.spawn(move || c.iter().map(|&s| self.tuple(cfg, s)).collect::<Result<Vec<_>>>())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sampling worker panicked")).collect()
        });
        let mut out = Vec::with_capacity(seeds.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Runs until `steps` more steps are done or `max_steps` is reached,
    /// calling `log` once per step.
    pub fn run(&self, state: &mut TrainState, steps: u64, log: &mut dyn FnMut(&LogRecord) -> Result<()>) -> Result<()> {
        let end = (state.step + steps).min(state.train.max_steps);
        while state.step < end {
            let t0 = Instant::now();
            let lr = state.train.learning_rate_at(state.step);
            let batch = self.sample_batch(state)?;
            let losses = train_step(state, &self.sep, &batch)?;
            let mut val_loss = None;
            let interval = state.train.checkpoint_interval;
            let at_checkpoint = (interval > 0 && state.step % interval == 0) || state.step == end;
            if at_checkpoint {
                if !self.val_batch.is_empty() {
                    let v = evaluate_loss(&self.sep, &state.params, &self.val_batch, &state.train.loss)?.total;
                    val_loss = Some(v);
                    let improved = state.best_val_loss.is_none_or(|b| v < b);
                    if improved {
                        state.best_val_loss = Some(v);
                        if let Some(dir) = &self.out_dir {
                            save_checkpoint(state, &dir.join("best.safetensors"))?;
                        }
                    }
                }
                if let Some(dir) = &self.out_dir {
                    save_checkpoint(state, &dir.join("last.safetensors"))?;
                }
            }
            log(&LogRecord {
                step: state.step,
                losses,
                learning_rate: lr,
                val_loss,
                wall_ms: t0.elapsed().as_millis() as u64,
            })?;
        }
        Ok(())
    }
}
