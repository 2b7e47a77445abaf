//! CMT1 tensor container.
//!
//! ```text
//! "CMT1" | u8 dtype (1=f32, 2=f64, 3=u8) | u8 ndim | ndim × u64 LE extents | payload LE, row-major
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"CMT1";

/// A tensor of any storable element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(Tensor<u8>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
            AnyTensor::U8(_) => DType::U8,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
            AnyTensor::U8(t) => t.shape(),
        }
    }

    pub fn into_f32(self) -> Result<Tensor<f32>> {
        match self {
            AnyTensor::F32(t) => Ok(t),
            other => Err(Error::Format(format!("expected f32 tensor, found {:?}", other.dtype()))),
        }
    }

    pub fn into_f64(self) -> Result<Tensor<f64>> {
        match self {
            AnyTensor::F64(t) => Ok(t),
            other => Err(Error::Format(format!("expected f64 tensor, found {:?}", other.dtype()))),
        }
    }

    pub fn into_u8(self) -> Result<Tensor<u8>> {
        match self {
            AnyTensor::U8(t) => Ok(t),
            other => Err(Error::Format(format!("expected u8 tensor, found {:?}", other.dtype()))),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

impl From<Tensor<u8>> for AnyTensor {
    fn from(t: Tensor<u8>) -> Self {
        AnyTensor::U8(t)
    }
}

pub fn cmt_encode(t: &AnyTensor) -> Vec<u8> {
    let shape = t.shape();
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(6 + 8 * shape.len() + n * t.dtype().size());
    out.extend_from_slice(MAGIC);
    out.push(t.dtype().code());
    out.push(shape.len() as u8);
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    match t {
        AnyTensor::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        AnyTensor::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        AnyTensor::U8(t) => out.extend_from_slice(t.data()),
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated CMT1 record: need {n} bytes for {what} at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn cmt_decode(buf: &[u8]) -> Result<AnyTensor> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, expected CMT1".into()));
    }
    let code = r.take(1, "dtype")?[0];
    let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
    let ndim = r.take(1, "ndim")?[0] as usize;
    if ndim == 0 || ndim > MAX_RANK {
        return Err(Error::Format(format!("unsupported rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let e = u64::from_le_bytes(r.take(8, "extent")?.try_into().expect("8 bytes"));
        shape.push(usize::try_from(e).map_err(|_| Error::Format(format!("extent {e} too large")))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .and_then(|n| n.checked_mul(dtype.size()).map(|_| n))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let payload = r.take(n * dtype.size(), "payload")?;
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes after payload", buf.len() - r.pos)));
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(
            &shape,
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
        )?),
        DType::F64 => AnyTensor::F64(Tensor::new(
            &shape,
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
        )?),
        DType::U8 => AnyTensor::U8(Tensor::new(&shape, payload.to_vec())?),
    })
}

pub fn cmt_write(path: impl AsRef<Path>, t: &AnyTensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cmt_encode(t)).map_err(|e| Error::io(path, e))
}

pub fn cmt_read(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    cmt_decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2], vec![1u8, 2]).unwrap();
        let b = cmt_encode(&t.into());
        assert_eq!(&b[..4], b"CMT1");
        assert_eq!(b[4], 3);
        assert_eq!(b[5], 1);
        assert_eq!(&b[6..14], &2u64.to_le_bytes());
        assert_eq!(&b[14..], &[1, 2]);
    }

    #[test]
    fn rejects_corrupt_records() {
        let good = cmt_encode(&Tensor::new(&[3], vec![1.0f32, 2.0, 3.0]).unwrap().into());
        assert!(cmt_decode(&good).is_ok());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(cmt_decode(&bad).is_err());
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(cmt_decode(&bad).is_err());
        assert!(cmt_decode(&good[..good.len() - 1]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(cmt_decode(&long).is_err());
        // zero-dimensional
        assert!(cmt_decode(&[b'C', b'M', b'T', b'1', 1, 0]).is_err());
    }
}
