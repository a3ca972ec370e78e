//! Single-file tensor containers: a safetensors body plus string metadata.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "1";

pub enum TensorData {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: TensorData::F32(data),
        }
    }

    pub fn i64(name: impl Into<String>, shape: Vec<usize>, data: Vec<i64>) -> Self {
        Self {
            name: name.into(),
            shape,
            data: TensorData::I64(data),
        }
    }
}

fn le_bytes(data: &TensorData) -> Vec<u8> {
    match data {
        TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        TensorData::I64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

/// Serializes tensors with a `kind` tag and format version in the header.
pub fn encode(kind: &str, tensors: &[NamedTensor], mut metadata: HashMap<String, String>) -> Result<Vec<u8>> {
    metadata.insert("kind".into(), kind.into());
    metadata.insert("format_version".into(), FORMAT_VERSION.into());
    let buffers: Vec<Vec<u8>> = tensors.iter().map(|t| le_bytes(&t.data)).collect();
    let views = tensors
        .iter()
        .zip(&buffers)
        .map(|(t, bytes)| {
            let dtype = match t.data {
                TensorData::F32(_) => Dtype::F32,
                TensorData::I64(_) => Dtype::I64,
            };
            TensorView::new(dtype, t.shape.clone(), bytes)
                .map(|v| (t.name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, Some(metadata)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub struct Decoded {
    pub metadata: HashMap<String, String>,
    pub tensors: HashMap<String, (Vec<usize>, TensorData)>,
}

impl Decoded {
    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key:?}")))
    }

    pub fn take_f32(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        match self.tensors.remove(name) {
            Some((shape, TensorData::F32(v))) => Ok((shape, v)),
            Some(_) => Err(Error::Checkpoint(format!("tensor {name:?} is not f32"))),
            None => Err(Error::Checkpoint(format!("missing tensor {name:?}"))),
        }
    }

    pub fn take_i64(&mut self, name: &str) -> Result<(Vec<usize>, Vec<i64>)> {
        match self.tensors.remove(name) {
            Some((shape, TensorData::I64(v))) => Ok((shape, v)),
            Some(_) => Err(Error::Checkpoint(format!("tensor {name:?} is not i64"))),
            None => Err(Error::Checkpoint(format!("missing tensor {name:?}"))),
        }
    }
}

pub fn decode(expected_kind: &str, bytes: &[u8]) -> Result<Decoded> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let metadata = header.metadata().clone().unwrap_or_default();
    match metadata.get("kind") {
        Some(k) if k == expected_kind => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "expected a {expected_kind:?} file, found kind {other:?}"
            )))
        }
    }
    if metadata.get("format_version").map(String::as_str) != Some(FORMAT_VERSION) {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {:?}",
            metadata.get("format_version")
        )));
    }
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        let raw = view.data();
        let data = match view.dtype() {
            Dtype::F32 => TensorData::F32(
                raw.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            ),
            Dtype::I64 => TensorData::I64(
                raw.chunks_exact(8)
                    .map(|b| i64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                    .collect(),
            ),
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?} for {name}"))),
        };
        tensors.insert(name, (view.shape().to_vec(), data));
    }
    Ok(Decoded { metadata, tensors })
}

/// Writes `bytes` to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
