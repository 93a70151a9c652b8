//! Single-file named-tensor checkpoints.
//!
//! Layout: 8-byte magic, u32 version, u64 JSON header length, JSON header
//! (tensor names/shapes/dtype plus a free-form `meta` object), then the raw
//! little-endian tensor data in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::Arr;

const MAGIC: &[u8; 8] = b"CDVGTNSR";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a checkpoint file (bad magic)")]
    BadMagic { path: String },
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint header: {0}")]
    BadHeader(String),
    #[error("dtype mismatch: file holds {file}, expected {expected}")]
    DtypeMismatch { file: String, expected: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    tensors: Vec<TensorDesc>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorDesc {
    name: String,
    shape: Vec<usize>,
}

fn dtype_of<S: Scalar>() -> &'static str {
    if std::mem::size_of::<S>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), source }
}

/// Write named tensors plus a JSON `meta` blob.
pub fn save_tensors<S: Scalar>(
    path: &Path,
    tensors: &[(String, &Arr<S>)],
    meta: serde_json::Value,
) -> Result<(), CheckpointError> {
    let header = Header {
        dtype: dtype_of::<S>().to_string(),
        tensors: tensors
            .iter()
            .map(|(n, a)| TensorDesc { name: n.clone(), shape: a.shape().to_vec() })
            .collect(),
        meta,
    };
    let hbytes = serde_json::to_vec(&header).expect("header serializes");
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    w.write_all(MAGIC).map_err(|e| io_err(path, e))?;
    w.write_all(&VERSION.to_le_bytes()).map_err(|e| io_err(path, e))?;
    w.write_all(&(hbytes.len() as u64).to_le_bytes()).map_err(|e| io_err(path, e))?;
    w.write_all(&hbytes).map_err(|e| io_err(path, e))?;
    for (_, a) in tensors {
        let slice = a.as_slice().expect("tensors are contiguous");
        if dtype_of::<S>() == "f32" {
            for v in slice {
                w.write_all(&(v.as_f64() as f32).to_le_bytes()).map_err(|e| io_err(path, e))?;
            }
        } else {
            for v in slice {
                w.write_all(&v.as_f64().to_le_bytes()).map_err(|e| io_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read back named tensors and the `meta` blob.
pub fn load_tensors<S: Scalar>(
    path: &Path,
) -> Result<(Vec<(String, Arr<S>)>, serde_json::Value), CheckpointError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: path.display().to_string() });
    }
    let mut vbuf = [0u8; 4];
    r.read_exact(&mut vbuf).map_err(|e| io_err(path, e))?;
    let version = u32::from_le_bytes(vbuf);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut lbuf = [0u8; 8];
    r.read_exact(&mut lbuf).map_err(|e| io_err(path, e))?;
    let hlen = u64::from_le_bytes(lbuf) as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes).map_err(|e| io_err(path, e))?;
    let header: Header =
        serde_json::from_slice(&hbytes).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    if header.dtype != dtype_of::<S>() {
        return Err(CheckpointError::DtypeMismatch {
            file: header.dtype,
            expected: dtype_of::<S>().to_string(),
        });
    }

    let mut out = Vec::with_capacity(header.tensors.len());
    for desc in &header.tensors {
        let n: usize = desc.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        if header.dtype == "f32" {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
            for c in buf.chunks_exact(4) {
                data.push(S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
            }
        } else {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
            for c in buf.chunks_exact(8) {
                data.push(S::of(f64::from_le_bytes(c.try_into().unwrap())));
            }
        }
        let arr = Arr::from_shape_vec(IxDyn(&desc.shape), data)
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        out.push((desc.name.clone(), arr));
    }
    Ok((out, header.meta))
}
