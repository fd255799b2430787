//! The `ECGT` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ECGT" | version u8 = 1 | dtype u8 = 1 (f32) | ndim u8 | dims u64 x ndim | f32 payload, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ECGT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

/// A dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::Shape(format!("{} dimensions", dims.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size in bytes of the serialized form.
    pub fn encoded_len(&self) -> usize {
        7 + 8 * self.dims.len() + 4 * self.data.len()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut head = Vec::with_capacity(7 + 8 * self.dims.len());
        head.extend_from_slice(MAGIC);
        head.push(VERSION);
        head.push(DTYPE_F32);
        head.push(self.dims.len() as u8);
        for &d in &self.dims {
            head.extend_from_slice(&(d as u64).to_le_bytes());
        }
        w.write_all(&head)?;
        let mut payload = Vec::with_capacity(4 * self.data.len());
        for v in &self.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads one tensor from the front of `r`.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 7];
        read_exact(&mut r, &mut head)?;
        if &head[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &head[..4])));
        }
        if head[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", head[4])));
        }
        if head[5] != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype {}", head[5])));
        }
        let ndim = head[6] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b)?;
            let d = u64::from_le_bytes(b);
            dims.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
        let mut payload = vec![0u8; count * 4];
        read_exact(&mut r, &mut payload)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let t = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", cursor.len())));
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("unexpected end of tensor data".into()),
        _ => Error::Format(e.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_2x3_is_47_bytes() {
        let t = Tensor::zeros(vec![2, 3]);
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 47);
        assert_eq!(&bytes[..4], b"ECGT");
        assert_eq!(bytes[4..7], [1, 1, 2]);
        assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn bad_header_fields() {
        let mut bytes = Tensor::zeros(vec![1]).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = Tensor::zeros(vec![1]).to_bytes();
        bytes[4] = 2;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = Tensor::zeros(vec![1]).to_bytes();
        bytes[5] = 7;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::Format(_))));
        let bytes = Tensor::zeros(vec![4]).to_bytes();
        assert!(matches!(
            Tensor::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ecgt");
        let t = Tensor::new(vec![3], vec![1.5, -0.0, f32::MIN_POSITIVE]).unwrap();
        t.write(&path).unwrap();
        assert_eq!(Tensor::read(&path).unwrap(), t);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(dims in prop::collection::vec(0usize..5, 0..4), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let mut state = seed;
            let data: Vec<f32> = (0..n)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f32::from_bits((state >> 32) as u32)
                })
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
            prop_assert_eq!(&back.dims, &t.dims);
            let a: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
