//! Little-endian tensor records and named checkpoints.
//!
//! Tensor: `"EVLT"`, version `u8`, dtype `u8` (0 = f32, 1 = f64), ndim `u32`,
//! dims `u64` each, then the row-major payload. Checkpoint: `"EVCK"`,
//! version `u8`, count `u32`, then per entry a `u16` name length, the UTF-8
//! name and a full tensor record.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::numgrid::{ParamTree, Real, Tensor};

pub const TENSOR_MAGIC: [u8; 4] = *b"EVLT";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EVCK";
pub const VERSION: u8 = 1;

/// A tensor read back in the precision it was written with.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    /// Convert to `T`; exact when the stored precision is `T` or narrower.
    pub fn into_real<T: Real>(self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

/// Byte cursor that reports shortfalls as truncation.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                expected: self.pos + n,
                actual: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.array::<1>()?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found = self.array::<4>()?;
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<(), FormatError> {
        match self.u8()? {
            VERSION => Ok(()),
            v => Err(FormatError::UnsupportedVersion(v)),
        }
    }
}

fn push_tensor<T: Real>(out: &mut Vec<u8>, t: &Tensor<T>) {
    out.extend_from_slice(&TENSOR_MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE);
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match T::DTYPE {
        0 => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes())),
        _ => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.as_f64().to_le_bytes())),
    }
}

pub fn encode_tensor<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + 8 * t.ndim() + 8 * t.len());
    push_tensor(&mut out, t);
    out
}

/// Parse one record. With `exact` the record must span the rest of the
/// buffer, and a payload that is a whole number of elements of the wrong
/// count is reported as a dims mismatch rather than truncation.
fn read_record(r: &mut Reader<'_>, exact: bool) -> Result<StoredTensor, FormatError> {
    r.magic(TENSOR_MAGIC)?;
    r.version()?;
    let dtype = r.u8()?;
    let elem = match dtype {
        0 => 4,
        1 => 8,
        d => return Err(FormatError::UnsupportedDtype(d)),
    };
    let ndim = r.u32()? as usize;
    if ndim > 16 {
        return Err(FormatError::Malformed {
            what: "tensor",
            detail: format!("{ndim} dimensions"),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = r.u64()?;
        if d == 0 {
            return Err(FormatError::Malformed {
                what: "tensor",
                detail: "zero extent".into(),
            });
        }
        dims.push(usize::try_from(d).map_err(|_| FormatError::Malformed {
            what: "tensor",
            detail: format!("extent {d} too large"),
        })?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|c| c.checked_mul(elem).is_some())
        .ok_or_else(|| FormatError::Malformed {
            what: "tensor",
            detail: format!("dims {dims:?} overflow"),
        })?;
    let rem = r.remaining();
    if (exact && rem != count * elem) || rem < count * elem {
        if rem.is_multiple_of(elem) {
            return Err(FormatError::DimMismatch {
                dims,
                expected: count,
                actual: rem / elem,
            });
        }
        return Err(FormatError::Truncated {
            expected: count * elem,
            actual: rem,
        });
    }
    let bytes = r.take(count * elem)?;
    let malformed = |e: Error| FormatError::Malformed {
        what: "tensor",
        detail: e.to_string(),
    };
    Ok(if dtype == 0 {
        let v = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        StoredTensor::F32(Tensor::from_vec(&dims, v).map_err(malformed)?)
    } else {
        let v = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        StoredTensor::F64(Tensor::from_vec(&dims, v).map_err(malformed)?)
    })
}

pub fn decode_tensor(bytes: &[u8]) -> Result<StoredTensor> {
    Ok(read_record(&mut Reader::new(bytes), true)?)
}

pub fn encode_checkpoint<T: Real>(params: &ParamTree<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| Error::pre(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        push_tensor(&mut out, t);
    }
    Ok(out)
}

/// Named tensors of a checkpoint, converted to `T`.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<ParamTree<T>> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let count = r.u32()?;
    let mut tree = ParamTree::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| FormatError::Malformed {
                what: "checkpoint",
                detail: format!("parameter name: {e}"),
            })?
            .to_string();
        let t = read_record(&mut r, false)?;
        tree.insert(name, t.into_real())?;
    }
    if r.remaining() != 0 {
        return Err(FormatError::Malformed {
            what: "checkpoint",
            detail: format!("{} trailing bytes", r.remaining()),
        }
        .into());
    }
    Ok(tree)
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_tensor<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    write_file(path.as_ref(), &encode_tensor(t))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<StoredTensor> {
    decode_tensor(&read_file(path.as_ref())?)
}

pub fn write_checkpoint<T: Real>(path: impl AsRef<Path>, params: &ParamTree<T>) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(params)?)
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ParamTree<T>> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(r: Result<StoredTensor>) -> i32 {
        match r {
            Err(Error::Format(f)) => f.code(),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let t = Tensor::from_vec(&[2, 3], vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300, -0.0, 7.0]).unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        let StoredTensor::F64(b) = back else { panic!() };
        assert_eq!(b.shape(), t.shape());
        for (x, y) in b.data().iter().zip(t.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let s = Tensor::<f32>::from_vec(&[3], vec![0.3, -1e-30, 5.5]).unwrap();
        assert_eq!(decode_tensor(&encode_tensor(&s)).unwrap(), StoredTensor::F32(s));
    }

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..4], b"EVLT");
        assert_eq!(&b[4..10], &[1, 0, 1, 0, 0, 0]);
        assert_eq!(&b[10..18], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[18..], &[0, 0, 0x80, 0x3f, 0, 0, 0, 0]);
    }

    #[test]
    fn corrupt_inputs_have_distinct_codes() {
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        let good = encode_tensor(&t);
        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert_eq!(code(decode_tensor(&bad)), 10);
        let mut v = good.clone();
        v[4] = 2;
        assert_eq!(code(decode_tensor(&v)), 11);
        let mut d = good.clone();
        d[5] = 7;
        assert_eq!(code(decode_tensor(&d)), 12);
        assert_eq!(code(decode_tensor(&good[..good.len() - 3])), 13);
        assert_eq!(code(decode_tensor(&good[..8])), 13);
        match decode_tensor(&good[..good.len() - 8]) {
            Err(Error::Format(FormatError::DimMismatch {
                expected: 6, actual: 5, ..
            })) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = ParamTree::<f32>::new();
        p.insert("a.weight", Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.5]).unwrap())
            .unwrap();
        p.insert("b", Tensor::scalar(-0.25)).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        assert_eq!(&bytes[..4], b"EVCK");
        let back: ParamTree<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.names().collect::<Vec<_>>(), p.names().collect::<Vec<_>>());
        for (n, t) in p.iter() {
            assert_eq!(back.get(n).unwrap(), t);
        }
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let t = Tensor::<f64>::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), StoredTensor::F64(t));
        assert!(matches!(read_tensor(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
