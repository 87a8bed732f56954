//! Audio-visual speech separation pipeline.

pub mod dsp;
pub mod error;

pub use error::{Error, Result};
pub mod embedding;
pub mod objectives;
pub mod util;

pub use embedding::{Embedding, Modality};
pub mod data;
pub mod model;
pub mod metrics;
pub mod eval;
pub mod infer;
pub mod train;
