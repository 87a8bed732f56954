use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{load_model, save_model, ModelCheckpoint, ModelConfig, ModelParams, ParamArray, Separator};

const KIND: &str = "train_state";

/// Everything needed to resume a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Completed optimizer steps.
    pub step: u64,
    pub params: ModelParams<f32>,
    /// Adam first and second moments, keyed by parameter name.
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
    pub rng: ChaCha8Rng,
    pub best_val_loss: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Extra {
    step: u64,
    rng: ChaCha8Rng,
    best_val_loss: Option<f64>,
    train: TrainConfig,
}

impl TrainState {
    pub fn new(model: ModelConfig, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let sep = Separator::new(model.clone())?;
        let params = sep.init_params::<f32>(train.seed);
        let zeros: BTreeMap<String, Vec<f32>> = params.iter().map(|(k, a)| (k.clone(), vec![0.0; a.data.len()])).collect();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(crate::util::mix_seed(train.seed, &[0x7472])),
            model,
            train,
            step: 0,
            params,
            m: zeros.clone(),
            v: zeros,
            best_val_loss: None,
        })
    }

    /// AdamW update with bias correction; decay is applied to every array.
    pub fn apply_gradients(&mut self, grads: &BTreeMap<String, Vec<f32>>) {
        let c = &self.train;
        let t = (self.step + 1) as i32;
        let lr = c.learning_rate_at(self.step);
        let (b1, b2, eps) = (c.beta1, c.beta2, c.adam_eps);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let decay = (1.0 - lr * c.weight_decay) as f32;
        for (name, p) in self.params.iter_mut() {
            let g = &grads[name];
            let m = self.m.get_mut(name).expect("moment exists");
            let v = self.v.get_mut(name).expect("moment exists");
            for i in 0..p.data.len() {
                let gi = g[i] as f64;
                let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                p.data[i] = p.data[i] * decay - update as f32;
            }
        }
    }
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut ckpt = ModelCheckpoint::new(state.model.clone(), state.params.clone(), KIND, state.train.seed);
    for (prefix, moments) in [("adam_m/", &state.m), ("adam_v/", &state.v)] {
        for (name, data) in moments {
            let shape = state.params.get(name).expect("moment matches a parameter").shape.clone();
            ckpt.aux.insert(
                format!("{prefix}{name}"),
                ParamArray {
                    shape,
                    data: data.clone(),
                },
            );
        }
    }
    ckpt.extra = serde_json::to_value(Extra {
        step: state.step,
        rng: state.rng.clone(),
        best_val_loss: state.best_val_loss,
        train: state.train.clone(),
    })
    .expect("train state serializes");
    save_model(path, &ckpt)
}

/// Restores a training state. A plain model checkpoint (no optimizer
/// state) resumes at step 0 with zeroed moments and `fallback` settings.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    load_checkpoint_or(path, TrainConfig::default())
}

pub(crate) fn load_checkpoint_or(path: &Path, fallback: TrainConfig) -> Result<TrainState> {
    let ckpt = load_model(path)?;
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for (name, a) in &ckpt.aux {
        if let Some(n) = name.strip_prefix("adam_m/") {
            m.insert(n.to_string(), a.data.clone());
        } else if let Some(n) = name.strip_prefix("adam_v/") {
            v.insert(n.to_string(), a.data.clone());
        }
    }
    if ckpt.extra.is_null() {
        let mut fresh = TrainState::new(ckpt.config.clone(), fallback)?;
        fresh.params = ckpt.params;
        return Ok(fresh);
    }
    let extra: Extra = serde_json::from_value(ckpt.extra)
        .map_err(|e| Error::Parse(format!("{}: training state: {e}", path.display())))?;
    for (name, a) in ckpt.params.iter() {
        for (which, moments) in [("first", &m), ("second", &v)] {
            match moments.get(name) {
                Some(d) if d.len() == a.data.len() => {}
                _ => {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "{}: {which} moment for {name} missing or mis-sized",
                        path.display()
                    )))
                }
            }
        }
    }
    Ok(TrainState {
        model: ckpt.config,
        train: extra.train,
        step: extra.step,
        params: ckpt.params,
        m,
        v,
        rng: extra.rng,
        best_val_loss: extra.best_val_loss,
    })
}
