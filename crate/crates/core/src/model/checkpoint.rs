use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::container::{self, Arrays};
use super::params::{ModelParams, ParamArray};
use super::separator::Separator;
use crate::error::{Error, Result};

const FORMAT: &str = "avsep-checkpoint-v1";
const AUX_PREFIX: &str = "aux/";

/// Provenance stamped into every written artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub kind: String,
    pub config_digest: String,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    meta: ArtifactMeta,
    config: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A model checkpoint: configuration, parameters, and optional auxiliary
/// arrays and JSON (optimizer state, training counters).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub meta: ArtifactMeta,
    pub aux: BTreeMap<String, ParamArray<f32>>,
    pub extra: serde_json::Value,
}

impl ModelCheckpoint {
    pub fn new(config: ModelConfig, params: ModelParams<f32>, kind: &str, seed: u64) -> Self {
        let meta = ArtifactMeta {
            kind: kind.to_string(),
            config_digest: config.digest(),
            seed,
        };
        Self {
            config,
            params,
            meta,
            aux: BTreeMap::new(),
            extra: serde_json::Value::Null,
        }
    }
}

pub fn save_model(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    let digest = ckpt.config.digest();
    if ckpt.params.config_digest() != digest || ckpt.meta.config_digest != digest {
        return Err(Error::IncompatibleCheckpoint(
            "parameters were built for a different configuration".into(),
        ));
    }
    let header = Header {
        format: FORMAT.into(),
        meta: ckpt.meta.clone(),
        config: ckpt.config.clone(),
        extra: ckpt.extra.clone(),
    };
    let mut arrays = Arrays::new();
    for (name, a) in ckpt.params.iter() {
        arrays.insert(name.clone(), (a.shape.clone(), a.data.clone()));
    }
    for (name, a) in &ckpt.aux {
        arrays.insert(format!("{AUX_PREFIX}{name}"), (a.shape.clone(), a.data.clone()));
    }
    container::write(
        path,
        &serde_json::to_value(&header).expect("header serializes"),
        &arrays,
    )
}

/// Reads and verifies a checkpoint: the stored digest must match the stored
/// configuration, and the arrays must match the network that configuration
/// describes.
pub fn load_model(path: &Path) -> Result<ModelCheckpoint> {
    let (header, arrays) = container::read(path)?;
    let header: Header = serde_json::from_value(header)
        .map_err(|e| Error::Parse(format!("{}: checkpoint header: {e}", path.display())))?;
    if header.format != FORMAT {
        return Err(Error::Parse(format!(
            "{}: unknown checkpoint format {:?}",
            path.display(),
            header.format
        )));
    }
    let digest = header.config.digest();
    if header.meta.config_digest != digest {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{}: stored digest {} does not match its configuration ({digest})",
            path.display(),
            header.meta.config_digest
        )));
    }
    let mut params = BTreeMap::new();
    let mut aux = BTreeMap::new();
    for (name, (shape, data)) in arrays {
        let a = ParamArray { shape, data };
        match name.strip_prefix(AUX_PREFIX) {
            Some(rest) => aux.insert(rest.to_string(), a),
            None => params.insert(name, a),
        };
    }
    let params = ModelParams::from_arrays(params, &digest);
    let sep = Separator::new(header.config.clone())?;
    sep.check_params(&params)?;
    Ok(ModelCheckpoint {
        config: header.config,
        params,
        meta: header.meta,
        aux,
        extra: header.extra,
    })
}
