//! VTEN: a small little-endian binary tensor format.
//!
//! Layout:
//!
//! ```text
//! offset  size        field
//! 0       4           magic  b"VTEN"
//! 4       2           version (u16, currently 1)
//! 6       1           dtype code (1 = f32, 2 = f64, 3 = u8, 4 = i32)
//! 7       1           rank (1..=5)
//! 8       8 * rank    dims (u64 each)
//! ...     n * size    payload, row-major, little-endian
//! ```
//!
//! Files with bytes after the payload are rejected.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

pub const MAGIC: &[u8; 4] = b"VTEN";
pub const VERSION: u16 = 1;
pub const MAX_RANK: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum TensorIoError {
    #[error("truncated tensor data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("bad magic: expected \"VTEN\"")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("unsupported rank {0} (expected 1..=5)")]
    BadRank(u8),
    #[error("dimension overflow: element count does not fit in memory")]
    DimOverflow,
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value in float tensor")]
    NonFinite,
    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl TensorIoError {
    pub fn code(&self) -> &'static str {
        match self {
            TensorIoError::Truncated { .. } => "tensor_truncated",
            TensorIoError::BadMagic => "tensor_bad_magic",
            TensorIoError::UnsupportedVersion(_) => "tensor_version",
            TensorIoError::UnknownDtype(_) => "tensor_dtype",
            TensorIoError::BadRank(_) => "tensor_rank",
            TensorIoError::DimOverflow => "tensor_dim_overflow",
            TensorIoError::TrailingBytes(_) => "tensor_trailing_bytes",
            TensorIoError::NonFinite => "tensor_non_finite",
            TensorIoError::DtypeMismatch { .. } => "tensor_dtype_mismatch",
            TensorIoError::Io(_) => "tensor_io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U8,
    I32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
            DType::U8 => 3,
            DType::I32 => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, TensorIoError> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            3 => Ok(DType::U8),
            4 => Ok(DType::I32),
            other => Err(TensorIoError::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::U8 => "u8",
            DType::I32 => "i32",
        }
    }
}

/// A dynamically typed tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
    U8(ArrayD<u8>),
    I32(ArrayD<i32>),
}

impl Tensor {
    pub fn dtype(&self) -> DType {
        match self {
            Tensor::F32(_) => DType::F32,
            Tensor::F64(_) => DType::F64,
            Tensor::U8(_) => DType::U8,
            Tensor::I32(_) => DType::I32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::F32(a) => a.shape(),
            Tensor::F64(a) => a.shape(),
            Tensor::U8(a) => a.shape(),
            Tensor::I32(a) => a.shape(),
        }
    }

    pub fn into_f32(self) -> Result<ArrayD<f32>, TensorIoError> {
        match self {
            Tensor::F32(a) => Ok(a),
            other => Err(TensorIoError::DtypeMismatch {
                expected: "f32",
                found: other.dtype().name(),
            }),
        }
    }

    pub fn into_f64(self) -> Result<ArrayD<f64>, TensorIoError> {
        match self {
            Tensor::F64(a) => Ok(a),
            other => Err(TensorIoError::DtypeMismatch {
                expected: "f64",
                found: other.dtype().name(),
            }),
        }
    }

    pub fn into_u8(self) -> Result<ArrayD<u8>, TensorIoError> {
        match self {
            Tensor::U8(a) => Ok(a),
            other => Err(TensorIoError::DtypeMismatch {
                expected: "u8",
                found: other.dtype().name(),
            }),
        }
    }

    /// Serialize to the VTEN byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorIoError> {
        let shape = self.shape();
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(TensorIoError::BadRank(shape.len().min(255) as u8));
        }
        let dtype = self.dtype();
        let count: usize = shape.iter().product();
        let mut out = Vec::with_capacity(8 + 8 * shape.len() + count * dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(dtype.code());
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self {
            Tensor::F32(a) => {
                for &v in a.iter() {
                    if !v.is_finite() {
                        return Err(TensorIoError::NonFinite);
                    }
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Tensor::F64(a) => {
                for &v in a.iter() {
                    if !v.is_finite() {
                        return Err(TensorIoError::NonFinite);
                    }
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Tensor::U8(a) => out.extend(a.iter().copied()),
            Tensor::I32(a) => {
                for &v in a.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorIoError> {
        let need = |expected: usize| -> Result<(), TensorIoError> {
            if bytes.len() < expected {
                Err(TensorIoError::Truncated {
                    expected,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        if &bytes[..4] != MAGIC {
            return Err(TensorIoError::BadMagic);
        }
        need(8)?;
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(TensorIoError::UnsupportedVersion(version));
        }
        let dtype = DType::from_code(bytes[6])?;
        let rank = bytes[7];
        if rank == 0 || rank as usize > MAX_RANK {
            return Err(TensorIoError::BadRank(rank));
        }
        let header = 8 + 8 * rank as usize;
        need(header)?;
        let mut dims = Vec::with_capacity(rank as usize);
        let mut count: usize = 1;
        for i in 0..rank as usize {
            let off = 8 + 8 * i;
            let raw = u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8-byte slice"));
            let d = usize::try_from(raw).map_err(|_| TensorIoError::DimOverflow)?;
            count = count.checked_mul(d).ok_or(TensorIoError::DimOverflow)?;
            dims.push(d);
        }
        let payload_len = count
            .checked_mul(dtype.size())
            .and_then(|n| n.checked_add(header))
            .ok_or(TensorIoError::DimOverflow)?;
        need(payload_len)?;
        if bytes.len() > payload_len {
            return Err(TensorIoError::TrailingBytes(bytes.len() - payload_len));
        }
        let payload = &bytes[header..payload_len];
        let shape = IxDyn(&dims);
        let build = |e| -> TensorIoError {
            // from_shape_vec can only fail on a length mismatch, which the checks above exclude.
            let _: ndarray::ShapeError = e;
            TensorIoError::DimOverflow
        };
        let tensor = match dtype {
            DType::F32 => {
                let v: Vec<f32> = payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Tensor::F32(ArrayD::from_shape_vec(shape, v).map_err(build)?)
            }
            DType::F64 => {
                let v: Vec<f64> = payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Tensor::F64(ArrayD::from_shape_vec(shape, v).map_err(build)?)
            }
            DType::U8 => Tensor::U8(ArrayD::from_shape_vec(shape, payload.to_vec()).map_err(build)?),
            DType::I32 => {
                let v: Vec<i32> = payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Tensor::I32(ArrayD::from_shape_vec(shape, v).map_err(build)?)
            }
        };
        Ok(tensor)
    }
}

impl From<ArrayD<f32>> for Tensor {
    fn from(a: ArrayD<f32>) -> Self {
        Tensor::F32(a)
    }
}

impl From<ArrayD<f64>> for Tensor {
    fn from(a: ArrayD<f64>) -> Self {
        Tensor::F64(a)
    }
}

impl From<ArrayD<u8>> for Tensor {
    fn from(a: ArrayD<u8>) -> Self {
        Tensor::U8(a)
    }
}

impl From<ArrayD<i32>> for Tensor {
    fn from(a: ArrayD<i32>) -> Self {
        Tensor::I32(a)
    }
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> crate::Result<()> {
    let path = path.as_ref();
    let bytes = tensor.to_bytes()?;
    fs::write(path, bytes).map_err(|e| crate::Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> crate::Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| crate::Error::io(path, e))?;
    Ok(Tensor::from_bytes(&bytes)?)
}
