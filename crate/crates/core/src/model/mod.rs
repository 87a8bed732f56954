//! Separator network: lip-motion, facial-attribute and vocal-attribute
//! encoders plus the complex-mask predictor.

mod checkpoint;
mod config;
pub(crate) mod container;
mod layers;
mod nets;
mod params;
mod separator;

pub use checkpoint::{load_model, save_model, ArtifactMeta, ModelCheckpoint};
pub use config::{ModelConfig, NormKind, SeparationMode};
pub use params::{Binder, ModelParams, ParamArray, ParamSpec};
pub use separator::Separator;

pub(crate) use separator::{faces_tensor, rois_tensor, spec_tensor};
