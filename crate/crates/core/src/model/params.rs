use std::cell::RefCell;
use std::collections::BTreeMap;

use avsep_tensor::{Element, Gradients, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// Normal with std `gain * sqrt(2 / fan_in)`.
    He { fan_in: usize, gain: f64 },
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub(crate) init: Init,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named parameter arrays; names are prefixed by sub-network
/// (`lip.`, `face.`, `audio_enc.`, `audio_dec.`, `vocal.`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    arrays: BTreeMap<String, ParamArray<T>>,
    config_digest: String,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; keeps the stream independent of distribution crates
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl<T: Element> ModelParams<T> {
    /// Draws every array in `specs` order from one seeded stream, so f32 and
    /// f64 parameter sets built from the same seed agree up to rounding.
    pub fn init(specs: &[ParamSpec], seed: u64, config_digest: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arrays = BTreeMap::new();
        for spec in specs {
            let n: usize = spec.shape.iter().product();
            let data: Vec<T> = match spec.init {
                Init::He { fan_in, gain } => {
                    let std = gain * (2.0 / fan_in.max(1) as f64).sqrt();
                    (0..n).map(|_| T::from_f64_lossy(std * gaussian(&mut rng))).collect()
                }
                Init::Uniform { fan_in } => {
                    let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                    (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-b..b))).collect()
                }
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            let prev = arrays.insert(
                spec.name.clone(),
                ParamArray {
                    shape: spec.shape.clone(),
                    data,
                },
            );
            assert!(prev.is_none(), "duplicate parameter {}", spec.name);
        }
        Self {
            arrays,
            config_digest: config_digest.to_string(),
        }
    }

    pub fn from_arrays(arrays: BTreeMap<String, ParamArray<T>>, config_digest: &str) -> Self {
        Self {
            arrays,
            config_digest: config_digest.to_string(),
        }
    }

    /// Checks names and shapes against `specs` and that values are finite.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.arrays.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{} parameter arrays, model expects {}",
                self.arrays.len(),
                specs.len()
            )));
        }
        for spec in specs {
            match self.arrays.get(&spec.name) {
                None => {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "missing parameter {}",
                        spec.name
                    )))
                }
                Some(a) if a.shape != spec.shape => {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "{}: shape {:?}, model expects {:?}",
                        spec.name, a.shape, spec.shape
                    )))
                }
                _ => {}
            }
        }
        if let Some(name) = self.first_non_finite() {
            return Err(Error::Numerical {
                term: format!("parameter {name}"),
                value: f64::NAN,
            });
        }
        Ok(())
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray<T>> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamArray<T>> {
        self.arrays.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamArray<T>)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamArray<T>)> {
        self.arrays.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.values().map(|a| a.data.len()).sum()
    }

    pub fn first_non_finite(&self) -> Option<&str> {
        self.arrays
            .iter()
            .find(|(_, a)| a.data.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n.as_str())
    }

    pub fn convert<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            arrays: self
                .arrays
                .iter()
                .map(|(k, a)| {
                    (
                        k.clone(),
                        ParamArray {
                            shape: a.shape.clone(),
                            data: a.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
                        },
                    )
                })
                .collect(),
            config_digest: self.config_digest.clone(),
        }
    }
}

/// Lends parameters to one forward pass as graph leaves.
pub struct Binder<'p, T: Element> {
    params: &'p ModelParams<T>,
    trainable: bool,
    bound: RefCell<BTreeMap<String, Tensor<T>>>,
}

impl<'p, T: Element> Binder<'p, T> {
    pub fn new(params: &'p ModelParams<T>, trainable: bool) -> Self {
        Self {
            params,
            trainable,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    /// Panics on unknown names; parameter sets are validated against the
    /// model's specs before use.
    pub fn get(&self, name: &str) -> Tensor<T> {
        if let Some(t) = self.bound.borrow().get(name) {
            return t.clone();
        }
        let a = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not in the parameter set"));
        let t = if self.trainable {
            Tensor::param(a.data.clone(), &a.shape)
        } else {
            Tensor::constant(a.data.clone(), &a.shape)
        };
        self.bound.borrow_mut().insert(name.to_string(), t.clone());
        t
    }

    /// Gradients for every parameter, zero for those the pass never touched.
    pub fn gradients(&self, grads: &Gradients<T>) -> BTreeMap<String, Vec<T>> {
        let bound = self.bound.borrow();
        self.params
            .iter()
            .map(|(name, a)| {
                let g = bound
                    .get(name)
                    .and_then(|t| grads.get(t))
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![T::zero(); a.data.len()]);
                (name.clone(), g)
            })
            .collect()
    }
}
