//! Named tensor files in the safetensors format.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn load(path: impl AsRef<Path>) -> Result<HashMap<String, NamedTensor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Asset(format!("cannot read weights {}: {e}", path.display())))?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<HashMap<String, NamedTensor>> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Asset(e.to_string()))?;
    let mut out = HashMap::new();
    for (name, view) in st.tensors() {
        let values = match view.dtype() {
            Dtype::F32 => view
                .data()
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                .collect(),
            Dtype::F64 => view
                .data()
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            other => {
                return Err(Error::Asset(format!("tensor `{name}` has unsupported dtype {other:?}")))
            }
        };
        out.insert(
            name,
            NamedTensor {
                shape: view.shape().to_vec(),
                values,
            },
        );
    }
    Ok(out)
}

/// Writes tensors as little-endian f32.
pub fn encode(tensors: &[(String, NamedTensor)]) -> Result<Vec<u8>> {
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(name, t)| {
            let bytes = t.values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
            (name.clone(), t.shape.clone(), bytes)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Asset(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, None).map_err(|e| Error::Asset(e.to_string()))
}

pub fn save(path: impl AsRef<Path>, tensors: &[(String, NamedTensor)]) -> Result<()> {
    std::fs::write(path, encode(tensors)?)?;
    Ok(())
}

pub(crate) fn take(
    map: &mut HashMap<String, NamedTensor>,
    name: &str,
    shape: &[usize],
) -> Result<Vec<f64>> {
    let t = map
        .remove(name)
        .ok_or_else(|| Error::Asset(format!("weights file is missing tensor `{name}`")))?;
    if t.shape != shape {
        return Err(Error::Asset(format!(
            "tensor `{name}` has shape {:?}, expected {shape:?}",
            t.shape
        )));
    }
    Ok(t.values)
}
