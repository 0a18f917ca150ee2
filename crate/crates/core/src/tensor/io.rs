//! Binary tensor files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   8 bytes  "BFLT0001"
//! dtype   1 byte   0 = f32, 1 = f64
//! ndim    1 byte
//! dims    ndim × u64
//! payload product(dims) scalars
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{DType, Scalar, Tensor};

pub const HEADER_MAGIC: &[u8; 8] = b"BFLT0001";

/// A tensor of either on-disk dtype.
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

    /// Converts to `T`, widening or narrowing as needed.
    pub fn into_tensor<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn header_len(ndim: usize) -> usize {
    8 + 1 + 1 + 8 * ndim
}

pub fn write_tensor<T: Scalar, W: Write>(mut out: W, t: &Tensor<T>) -> Result<()> {
    let ndim = u8::try_from(t.ndim())
        .map_err(|_| Error::Format(format!("{} dimensions do not fit the header", t.ndim())))?;
    let mut buf = Vec::with_capacity(header_len(t.ndim()) + t.len() * T::DTYPE.size());
    buf.extend_from_slice(HEADER_MAGIC);
    buf.push(T::DTYPE.code());
    buf.push(ndim);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 10 {
        return Err(Error::Format(format!("file too short for a header ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != HEADER_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..8]))));
    }
    let dtype = DType::from_code(bytes[8])?;
    let ndim = bytes[9] as usize;
    if ndim == 0 {
        return Err(Error::Format("ndim must be ≥ 1".into()));
    }
    let hlen = header_len(ndim);
    if bytes.len() < hlen {
        return Err(Error::Format("truncated header".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for chunk in bytes[10..hlen].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("dim {d} too large")))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let payload = &bytes[hlen..];
    let want = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    if payload.len() != want {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header promises {want}",
            payload.len()
        )));
    }
    let map_err = |e: Error| Error::Format(e.to_string());
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(
            Tensor::new(&shape, payload.chunks_exact(4).map(f32::read_le).collect()).map_err(map_err)?,
        ),
        DType::F64 => AnyTensor::F64(
            Tensor::new(&shape, payload.chunks_exact(8).map(f64::read_le).collect()).map_err(map_err)?,
        ),
    })
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    decode(&fs::read(path)?)
}

/// Loads and requires the stored dtype to be `T`.
pub fn load_tensor_as<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let any = load_tensor(path)?;
    if any.dtype() != T::DTYPE {
        return Err(Error::Format(format!(
            "expected {} tensor, file holds {}",
            T::DTYPE.name(),
            any.dtype().name()
        )));
    }
    Ok(any.into_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{normal_tensor, seeded_rng};

    #[test]
    fn header_size_for_three_dims() {
        let t = Tensor::<f32>::zeros(&[2, 3, 4]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(header_len(3), 34);
        assert_eq!(buf.len(), 34 + 24 * 4);
        assert_eq!(&buf[..8], b"BFLT0001");
        assert_eq!(buf[8], 0);
        assert_eq!(buf[9], 3);
        assert_eq!(&buf[10..18], &2u64.to_le_bytes());
    }

    #[test]
    fn round_trip_f32_bit_exact() {
        let mut rng = seeded_rng(0);
        let t: Tensor<f32> = normal_tensor(&[2, 3, 4], 1.0, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bft");
        save_tensor(&path, &t).unwrap();
        let back = load_tensor_as::<f32>(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::<f64>::zeros(&[2])).unwrap();
        buf[..8].copy_from_slice(b"XXXX0000");
        assert!(matches!(read_tensor(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::<f64>::zeros(&[2, 2])).unwrap();
        buf.pop();
        assert!(matches!(read_tensor(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_dtype_is_rejected() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::<f32>::zeros(&[1])).unwrap();
        buf[8] = 2;
        assert!(matches!(read_tensor(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn dtype_mismatch_on_typed_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bft");
        save_tensor(&path, &Tensor::<f32>::zeros(&[3])).unwrap();
        assert!(load_tensor_as::<f64>(&path).is_err());
    }
}
