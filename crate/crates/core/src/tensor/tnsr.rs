//! TNSR binary container.
//!
//! Layout: `b"TNSR"`, version `0x01`, dtype byte (0=f32, 1=f64, 2=u8), ndim
//! byte, `ndim` little-endian u64 extents, then the row-major little-endian
//! payload.

use std::path::Path;

use super::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u8 = 0x01;

/// Decoded payload of a TNSR file.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
            Payload::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Record {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        let payload = match T::DTYPE {
            DType::F32 => Payload::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            _ => Payload::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        Record {
            shape: t.shape().to_vec(),
            payload,
        }
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        Record {
            shape,
            payload: Payload::U8(data),
        }
    }

    /// Convert a float payload into a tensor of the requested precision.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            Payload::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
            Payload::U8(_) => {
                return Err(Error::Mismatch("expected float payload, found u8".into()))
            }
        };
        Tensor::new(self.shape.clone(), data)
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.payload.len();
        let mut out = Vec::with_capacity(7 + 8 * self.shape.len() + n * self.payload.dtype().size());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.payload.dtype() as u8);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |offset: usize, reason: &str| Error::Malformed {
            offset: offset as u64,
            reason: reason.to_string(),
        };
        if bytes.len() < 7 {
            return Err(bad(bytes.len(), "truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad(0, "bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(bad(4, &format!("unsupported version {}", bytes[4])));
        }
        let dtype = DType::from_byte(bytes[5]).ok_or_else(|| bad(5, "unknown dtype"))?;
        let ndim = bytes[6] as usize;
        if ndim == 0 {
            return Err(bad(6, "zero dimensions"));
        }
        let mut pos = 7;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let chunk = bytes
                .get(pos..pos + 8)
                .ok_or_else(|| bad(pos, "truncated extents"))?;
            let d = u64::from_le_bytes(chunk.try_into().unwrap());
            if d == 0 {
                return Err(bad(pos, "zero extent"));
            }
            shape.push(d as usize);
            pos += 8;
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(7, "extent overflow"))?;
        let need = count
            .checked_mul(dtype.size())
            .ok_or_else(|| bad(7, "extent overflow"))?;
        let body = &bytes[pos..];
        if body.len() != need {
            return Err(bad(
                pos + body.len().min(need),
                &format!("payload holds {} bytes, expected {need}", body.len()),
            ));
        }
        let payload = match dtype {
            DType::F32 => Payload::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => Payload::F64(
                body.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => Payload::U8(body.to_vec()),
        };
        Ok(Record { shape, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Record::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let r = Record::u8(vec![2, 3], vec![1, 2, 3, 4, 5, 6]);
        let b = r.encode();
        assert_eq!(&b[..4], b"TNSR");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 2);
        assert_eq!(b[6], 2);
        assert_eq!(&b[7..15], &2u64.to_le_bytes());
        assert_eq!(&b[15..23], &3u64.to_le_bytes());
        assert_eq!(&b[23..], &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn malformed_reports_offset() {
        let mut b = Record::u8(vec![4], vec![0; 4]).encode();
        b.pop();
        match Record::decode(&b) {
            Err(Error::Malformed { offset, .. }) => assert_eq!(offset, 15 + 3),
            other => panic!("unexpected {other:?}"),
        }
        b[0] = b'X';
        assert!(matches!(
            Record::decode(&b),
            Err(Error::Malformed { offset: 0, .. })
        ));
        let mut v = Record::u8(vec![1], vec![0]).encode();
        v[5] = 9;
        assert!(matches!(
            Record::decode(&v),
            Err(Error::Malformed { offset: 5, .. })
        ));
    }

    proptest! {
        #[test]
        fn float_roundtrip_is_bit_exact(vals in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
            let n = vals.len();
            let t = Tensor::<f64>::new([n], vals).unwrap();
            let back = Record::decode(&Record::from_tensor(&t).encode()).unwrap().to_tensor::<f64>().unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
