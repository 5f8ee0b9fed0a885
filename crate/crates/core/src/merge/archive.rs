//! Reading and writing tensor archives in the safetensors layout:
//! an 8-byte little-endian header length, a JSON header, then raw
//! little-endian tensor bytes.
//!
//! Writing is canonical: `__metadata__` first (omitted when empty), tensors
//! in name order with contiguous data offsets, header padded with spaces to
//! a multiple of 8 bytes. Saving a loaded canonical file reproduces it
//! byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::MergeError;

const METADATA_KEY: &str = "__metadata__";
// Refuse absurd headers instead of allocating them.
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dtype {
    BOOL,
    U8,
    I8,
    U16,
    I16,
    F16,
    BF16,
    U32,
    I32,
    F32,
    U64,
    I64,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::BOOL | Dtype::U8 | Dtype::I8 => 1,
            Dtype::U16 | Dtype::I16 | Dtype::F16 | Dtype::BF16 => 2,
            Dtype::U32 | Dtype::I32 | Dtype::F32 => 4,
            Dtype::U64 | Dtype::I64 | Dtype::F64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Dtype::F16 | Dtype::BF16 | Dtype::F32 | Dtype::F64)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::BOOL => "BOOL",
            Dtype::U8 => "U8",
            Dtype::I8 => "I8",
            Dtype::U16 => "U16",
            Dtype::I16 => "I16",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
            Dtype::U32 => "U32",
            Dtype::I32 => "I32",
            Dtype::F32 => "F32",
            Dtype::U64 => "U64",
            Dtype::I64 => "I64",
            Dtype::F64 => "F64",
        }
    }
}

/// A dense tensor: element type, shape and raw little-endian bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tensor {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    data: Vec<u8>,
}

impl Tensor {
    pub fn from_bytes(dtype: Dtype, shape: Vec<usize>, data: Vec<u8>) -> Result<Self, String> {
        let numel: usize = shape.iter().product();
        if data.len() != numel * dtype.size() {
            return Err(format!(
                "shape {shape:?} needs {} elements but data holds {} bytes of {}",
                numel,
                data.len(),
                dtype.as_str()
            ));
        }
        Ok(Self { dtype, shape, data })
    }

    /// Encodes `values` in `dtype`, rounding to nearest-even when narrowing.
    pub fn from_f64(dtype: Dtype, shape: Vec<usize>, values: &[f64]) -> Result<Self, String> {
        let data = encode_floats(dtype, values).ok_or_else(|| format!("{} is not a float dtype", dtype.as_str()))?;
        Self::from_bytes(dtype, shape, data)
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Self, String> {
        Self::from_bytes(
            Dtype::F32,
            shape,
            values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        )
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    /// Float elements widened to f64 (exact for every float dtype).
    pub fn to_f64(&self) -> Option<Vec<f64>> {
        let d = &self.data;
        Some(match self.dtype {
            Dtype::F64 => d
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            Dtype::F32 => d
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
                .collect(),
            Dtype::F16 => d
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
            Dtype::BF16 => d
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
            _ => return None,
        })
    }

    fn first_non_finite(&self) -> Option<usize> {
        self.to_f64()?.iter().position(|v| !v.is_finite())
    }
}

fn encode_floats(dtype: Dtype, values: &[f64]) -> Option<Vec<u8>> {
    Some(match dtype {
        Dtype::F64 => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        Dtype::F32 => values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
        Dtype::F16 => values.iter().flat_map(|&v| f16::from_f64(v).to_le_bytes()).collect(),
        Dtype::BF16 => values.iter().flat_map(|&v| bf16::from_f64(v).to_le_bytes()).collect(),
        _ => return None,
    })
}

/// Named tensors plus free-form string metadata.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TensorArchive {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    dtype: Dtype,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Rejects non-finite float elements.
    pub fn validate(&self) -> Result<(), MergeError> {
        for (name, t) in &self.tensors {
            if let Some(i) = t.first_non_finite() {
                return Err(MergeError::Corrupt {
                    tensor: Some(name.clone()),
                    message: format!("element {i} is not finite"),
                });
            }
        }
        Ok(())
    }

    /// Canonical file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::from("{");
        let mut first = true;
        let mut push = |key: &str, value: String| {
            if !first {
                header.push(',');
            }
            first = false;
            header.push_str(&serde_json::to_string(key).expect("string key"));
            header.push(':');
            header.push_str(&value);
        };
        if !self.metadata.is_empty() {
            push(METADATA_KEY, serde_json::to_string(&self.metadata).expect("metadata"));
        }
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let entry = HeaderEntry {
                dtype: t.dtype,
                shape: t.shape.clone(),
                data_offsets: [offset, offset + t.data.len()],
            };
            offset += t.data.len();
            push(name, serde_json::to_string(&entry).expect("header entry"));
        }
        header.push('}');
        while header.len() % 8 != 0 {
            header.push(' ');
        }
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in self.tensors.values() {
            out.extend_from_slice(&t.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MergeError> {
        let corrupt = |tensor: Option<&str>, message: String| MergeError::Corrupt {
            tensor: tensor.map(str::to_string),
            message,
        };
        if bytes.len() < 8 {
            return Err(corrupt(None, "file shorter than the 8-byte header length".into()));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        if n > MAX_HEADER_LEN || n > (bytes.len() - 8) as u64 {
            return Err(corrupt(None, format!("header length {n} exceeds file size {}", bytes.len())));
        }
        let n = n as usize;
        let header: serde_json::Map<String, Value> = serde_json::from_slice(&bytes[8..8 + n])
            .map_err(|e| corrupt(None, format!("header is not a JSON object: {e}")))?;
        let data = &bytes[8 + n..];
        let mut archive = TensorArchive::new();
        let mut spans = Vec::new();
        for (name, value) in header {
            if name == METADATA_KEY {
                archive.metadata = serde_json::from_value(value)
                    .map_err(|e| corrupt(None, format!("bad __metadata__: {e}")))?;
                continue;
            }
            let entry: HeaderEntry = serde_json::from_value(value)
                .map_err(|e| corrupt(Some(&name), format!("bad header entry: {e}")))?;
            let [begin, end] = entry.data_offsets;
            if begin > end || end > data.len() {
                return Err(corrupt(
                    Some(&name),
                    format!("data offsets [{begin}, {end}] outside {} data bytes (truncated?)", data.len()),
                ));
            }
            let tensor = Tensor::from_bytes(entry.dtype, entry.shape, data[begin..end].to_vec())
                .map_err(|m| MergeError::SizeMismatch {
                    tensor: name.clone(),
                    message: m,
                })?;
            spans.push((begin, end, name.clone()));
            archive.tensors.insert(name, tensor);
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(corrupt(Some(&w[1].2), format!("data overlaps tensor {:?}", w[0].2)));
            }
        }
        archive.validate()?;
        Ok(archive)
    }

    /// SHA-256 of the canonical file bytes, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<TensorArchive, MergeError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| MergeError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    TensorArchive::from_bytes(&bytes)
}

pub fn save_archive(archive: &TensorArchive, path: impl AsRef<Path>) -> Result<(), MergeError> {
    let path = path.as_ref();
    std::fs::write(path, archive.to_bytes()).map_err(|e| MergeError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
