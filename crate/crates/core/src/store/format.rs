//! WTS1 container format.
//!
//! Layout (little-endian):
//!   bytes 0..4    magic b"WTS1"
//!   bytes 4..8    u32 header length H
//!   bytes 8..8+H  UTF-8 JSON: {"step": u64, "tensors": {name: {"dtype",
//!                 "shape", "offset", "nbytes"}}} with offsets relative to
//!                 the data region
//!   data region   starts at the first multiple of 64 >= 8+H, row-major
//!                 tensor payloads
//!
//! Containers are immutable after write; readers map the file and decode
//! tensor byte ranges on demand.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use half::f16;
use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WTS1";
pub const DATA_ALIGN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f16")]
    F16,
    #[serde(rename = "f32")]
    F32,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F16 => 2,
            Dtype::F32 => 4,
        }
    }
}

/// Header entry for one tensor payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
}

impl TensorMeta {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    step: u64,
    // BTreeMap keeps header serialization byte-stable across runs
    tensors: BTreeMap<String, TensorMeta>,
}

/// Tensor values accepted by [`write_checkpoint`].
#[derive(Clone, Debug)]
pub enum TensorValues {
    F16(Vec<f16>),
    F32(Vec<f32>),
}

impl TensorValues {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorValues::F16(_) => Dtype::F16,
            TensorValues::F32(_) => Dtype::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorValues::F16(v) => v.len(),
            TensorValues::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A tensor to be serialized: shape plus row-major values.
#[derive(Clone, Debug)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: TensorValues,
}

impl TensorData {
    pub fn f32(shape: Vec<usize>, values: Vec<f32>) -> Self {
        TensorData { shape, values: TensorValues::F32(values) }
    }

    pub fn f16_from_f32(shape: Vec<usize>, values: &[f32]) -> Self {
        TensorData {
            shape,
            values: TensorValues::F16(values.iter().map(|&v| f16::from_f32(v)).collect()),
        }
    }
}

/// Serialize one checkpoint to `path`. Write is atomic: the bytes land in a
/// sibling temp file which is renamed over the target.
pub fn write_checkpoint(
    step: u64,
    tensors: &BTreeMap<String, TensorData>,
    path: &Path,
) -> Result<()> {
    let mut metas = BTreeMap::new();
    let mut offset = 0usize;
    for (name, t) in tensors {
        if t.shape.is_empty() || t.shape.iter().any(|&d| d == 0) {
            return Err(Error::EmptyShape(name.clone()));
        }
        let want: usize = t.shape.iter().product();
        if t.values.len() != want {
            return Err(Error::ValueCountMismatch { name: name.clone(), got: t.values.len(), want });
        }
        let nbytes = want * t.values.dtype().width();
        metas.insert(
            name.clone(),
            TensorMeta { dtype: t.values.dtype(), shape: t.shape.clone(), offset, nbytes },
        );
        offset += nbytes;
    }

    let header = Header { step, tensors: metas };
    let header_json = serde_json::to_vec(&header)?;
    let data_start = (8 + header_json.len()).div_ceil(DATA_ALIGN) * DATA_ALIGN;

    let mut buf = Vec::with_capacity(data_start + offset);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.resize(data_start, 0);
    for t in tensors.values() {
        match &t.values {
            TensorValues::F16(v) => {
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorValues::F32(v) => {
                for x in v {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }

    let tmp = path.with_extension("wts.tmp");
    let io = |e| Error::io(path, e);
    let mut f = File::create(&tmp).map_err(io)?;
    f.write_all(&buf).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

/// A memory-mapped, read-only view of one checkpoint file.
pub struct Container {
    path: PathBuf,
    map: Mmap,
    step: u64,
    tensors: BTreeMap<String, TensorMeta>,
    data_start: usize,
}

impl Container {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.into() };

        if map.len() < 8 || &map[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let header_len = u32::from_le_bytes(map[4..8].try_into().unwrap()) as usize;
        if 8 + header_len > map.len() {
            return Err(bad("header length exceeds file"));
        }
        let header: Header = serde_json::from_slice(&map[8..8 + header_len])
            .map_err(|e| bad(&format!("invalid header JSON: {e}")))?;
        let data_start = (8 + header_len).div_ceil(DATA_ALIGN) * DATA_ALIGN;

        // validate declared ranges: sized by shape, inside the file, disjoint
        let mut spans: Vec<(usize, usize, &str)> = Vec::new();
        for (name, m) in &header.tensors {
            if m.shape.is_empty() || m.shape.iter().any(|&d| d == 0) {
                return Err(Error::EmptyShape(name.clone()));
            }
            if m.nbytes != m.element_count() * m.dtype.width() {
                return Err(bad(&format!("tensor '{name}': nbytes disagrees with shape")));
            }
            let end = data_start + m.offset + m.nbytes;
            if end > map.len() {
                return Err(bad(&format!("tensor '{name}': range past end of file")));
            }
            spans.push((m.offset, m.offset + m.nbytes, name));
        }
        spans.sort();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(bad(&format!(
                    "tensors '{}' and '{}' overlap",
                    pair[0].2, pair[1].2
                )));
            }
        }

        Ok(Container { path: path.to_path_buf(), map, step: header.step, tensors: header.tensors, data_start })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn meta(&self, name: &str) -> Result<&TensorMeta> {
        self.tensors.get(name).ok_or_else(|| Error::UnknownTensor(name.into()))
    }

    /// Raw little-endian payload bytes of one tensor.
    pub fn tensor_bytes(&self, name: &str) -> Result<&[u8]> {
        let m = self.meta(name)?;
        let start = self.data_start + m.offset;
        Ok(&self.map[start..start + m.nbytes])
    }

    /// Decode a tensor to f32 (f16 payloads are promoted).
    pub fn tensor_f32(&self, name: &str) -> Result<Vec<f32>> {
        self.tensor_f32_strided(name, 1)
    }

    /// Decode every `stride`-th element of the flattened tensor, starting at
    /// element 0, promoted to f32.
    pub fn tensor_f32_strided(&self, name: &str, stride: usize) -> Result<Vec<f32>> {
        debug_assert!(stride >= 1);
        let m = self.meta(name)?;
        let bytes = self.tensor_bytes(name)?;
        let n = m.element_count();
        let mut out = Vec::with_capacity(n.div_ceil(stride));
        match m.dtype {
            Dtype::F32 => {
                for i in (0..n).step_by(stride) {
                    let b = &bytes[i * 4..i * 4 + 4];
                    out.push(f32::from_le_bytes(b.try_into().unwrap()));
                }
            }
            Dtype::F16 => {
                for i in (0..n).step_by(stride) {
                    let b = &bytes[i * 2..i * 2 + 2];
                    out.push(f16::from_le_bytes(b.try_into().unwrap()).to_f32());
                }
            }
        }
        Ok(out)
    }
}
