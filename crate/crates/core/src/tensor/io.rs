//! PTNS binary tensor container.
//!
//! Layout: `b"PTNS"`, version byte `1`, dtype byte (`0` f32, `1` f64),
//! little-endian `u16` rank, `rank` little-endian `u32` dimensions, then the
//! row-major little-endian payload.

use std::fs;
use std::path::Path;

use super::{DType, Element, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PTNS";
pub const VERSION: u8 = 1;

/// A decoded tensor of either element type.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to the requested element type, widening or narrowing as needed.
    pub fn into_tensor<T: Element>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Element>(tensor: &Tensor<T>) -> Vec<u8> {
    let rank = tensor.rank();
    let mut out = Vec::with_capacity(8 + 4 * rank + tensor.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(rank as u16).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    out
}

fn payload<T: Element>(shape: Vec<usize>, bytes: &[u8]) -> Result<Tensor<T>> {
    let width = T::DTYPE.size();
    let data = bytes.chunks_exact(width).map(T::read_le).collect();
    Tensor::new(shape, data)
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing PTNS magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5]).ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[5])))?;
    let rank = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let header = 8 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated dimension table".into()));
    }
    let shape: Vec<usize> = bytes[8..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count: usize = shape.iter().product();
    let body = &bytes[header..];
    if body.len() != count * dtype.size() {
        return Err(Error::Format(format!(
            "payload holds {} bytes, shape {shape:?} needs {}",
            body.len(),
            count * dtype.size()
        )));
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(payload(shape, body)?),
        DType::F64 => AnyTensor::F64(payload(shape, body)?),
    })
}

pub fn write<T: Element>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensor)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&bytes)
}
