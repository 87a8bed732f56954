//! Tensor container used by model and training checkpoints: safetensors
//! with a single JSON header entry, so output bytes are deterministic.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::error::{Error, Result};

const HEADER_KEY: &str = "avsep";

pub(crate) type Arrays = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

pub(crate) fn write(path: &Path, header: &serde_json::Value, arrays: &Arrays) -> Result<()> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = arrays
        .iter()
        .map(|(name, (shape, data))| {
            (
                name.clone(),
                shape.clone(),
                data.iter().flat_map(|v| v.to_le_bytes()).collect(),
            )
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(name, shape, b)| {
            TensorView::new(Dtype::F32, shape.clone(), b)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::InvalidInput(format!("tensor {name}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = HashMap::from([(
        HEADER_KEY.to_string(),
        serde_json::to_string(header).expect("header serializes"),
    )]);
    let out = safetensors::serialize(views, &Some(meta))
        .map_err(|e| Error::InvalidInput(format!("serialize checkpoint: {e}")))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn read(path: &Path) -> Result<(serde_json::Value, Arrays)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |what: String| Error::Parse(format!("{}: {what}", path.display()));
    let (_, meta) =
        SafeTensors::read_metadata(&bytes).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let header = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(HEADER_KEY))
        .ok_or_else(|| corrupt("missing header entry".into()))?;
    let header: serde_json::Value =
        serde_json::from_str(header).map_err(|e| corrupt(format!("header json: {e}")))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| corrupt(format!("{e}")))?;
    let mut arrays = Arrays::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(corrupt(format!("tensor {name} has dtype {:?}", view.dtype())));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        arrays.insert(name, (view.shape().to_vec(), data));
    }
    Ok((header, arrays))
}
