//! Little-endian tensor container used by checkpoints and dataset caches.
//!
//! A single array record:
//!
//! ```text
//! magic    4 bytes   "NDT1"
//! dtype    u8        1 = f32, 2 = f64, 3 = u8, 4 = u64
//! rank     u32 LE
//! extents  rank × u64 LE
//! data     product(extents) elements, little-endian, row-major
//! ```
//!
//! A bundle of named arrays:
//!
//! ```text
//! magic    4 bytes   "NDB1"
//! count    u32 LE
//! count × { name_len u32 LE, name (UTF-8), array record }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const ARRAY_MAGIC: &[u8; 4] = b"NDT1";
pub const BUNDLE_MAGIC: &[u8; 4] = b"NDB1";

/// Untyped array: dtype, shape and raw little-endian bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawArray {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl RawArray {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.numel() * T::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        RawArray {
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    pub fn from_u8(shape: &[usize], data: &[u8]) -> Self {
        RawArray {
            dtype: DType::U8,
            shape: shape.to_vec(),
            bytes: data.to_vec(),
        }
    }

    pub fn from_u64(shape: &[usize], data: &[u64]) -> Self {
        RawArray {
            dtype: DType::U64,
            shape: shape.to_vec(),
            bytes: data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn expect(&self, dtype: DType) -> Result<()> {
        if self.dtype != dtype {
            return Err(CoreError::Format(format!(
                "expected dtype {}, found {}",
                dtype.name(),
                self.dtype.name()
            )));
        }
        Ok(())
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        self.expect(T::DTYPE)?;
        let size = T::DTYPE.size();
        let data = self.bytes.chunks_exact(size).map(T::read_le).collect();
        Tensor::new(&self.shape, data)
    }

    pub fn to_u8(&self) -> Result<Vec<u8>> {
        self.expect(DType::U8)?;
        Ok(self.bytes.clone())
    }

    pub fn to_u64(&self) -> Result<Vec<u64>> {
        self.expect(DType::U64)?;
        Ok(self
            .bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| CoreError::Format(format!("truncated container: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4)?.try_into().unwrap()))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r, 8)?.try_into().unwrap()))
}

pub fn write_array<W: Write>(w: &mut W, a: &RawArray) -> Result<()> {
    if a.bytes.len() != a.numel() * a.dtype.size() {
        return Err(CoreError::Format("byte length disagrees with shape".into()));
    }
    w.write_all(ARRAY_MAGIC)?;
    w.write_all(&[a.dtype as u8])?;
    w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
    for &e in &a.shape {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    w.write_all(&a.bytes)?;
    Ok(())
}

pub fn read_array<R: Read>(r: &mut R) -> Result<RawArray> {
    let magic = read_exact(r, 4)?;
    if magic != ARRAY_MAGIC {
        return Err(CoreError::Format(format!("bad array magic {magic:?}")));
    }
    let code = read_exact(r, 1)?[0];
    let dtype = DType::from_code(code).ok_or_else(|| CoreError::Format(format!("unknown dtype code {code}")))?;
    let rank = read_u32(r)? as usize;
    if rank > 16 {
        return Err(CoreError::Format(format!("implausible rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u64(r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| CoreError::Format("extent overflow".into()))?;
    let bytes = read_exact(r, numel * dtype.size())?;
    Ok(RawArray { dtype, shape, bytes })
}

pub fn write_bundle(path: &Path, arrays: &[(String, RawArray)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BUNDLE_MAGIC)?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, a) in arrays {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_array(&mut w, a)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bundle(path: &Path) -> Result<Vec<(String, RawArray)>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact(&mut r, 4)?;
    if magic != BUNDLE_MAGIC {
        return Err(CoreError::Format(format!("bad bundle magic {magic:?}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_exact(&mut r, len)?)
            .map_err(|_| CoreError::Format("array name is not UTF-8".into()))?;
        out.push((name, read_array(&mut r)?));
    }
    Ok(out)
}

pub fn save_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_array(&mut w, &RawArray::from_tensor(t))?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut r = BufReader::new(File::open(path)?);
    read_array(&mut r)?.to_tensor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_stable() {
        let t = Tensor::<f32>::new(&[2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_array(&mut buf, &RawArray::from_tensor(&t)).unwrap();
        let mut expected = b"NDT1".to_vec();
        expected.push(1);
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let a = RawArray::from_u8(&[3], &[1, 2, 3]);
        assert!(a.to_tensor::<f32>().is_err());
        assert_eq!(a.to_u8().unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn truncated_input_is_an_error() {
        let t = Tensor::<f64>::zeros(&[4]);
        let mut buf = Vec::new();
        write_array(&mut buf, &RawArray::from_tensor(&t)).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_array(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ndb");
        let arrays = vec![
            (
                "w".to_string(),
                RawArray::from_tensor(&Tensor::<f32>::full(&[2, 3], 0.5)),
            ),
            ("ids".to_string(), RawArray::from_u64(&[3], &[7, 8, u64::MAX])),
        ];
        write_bundle(&path, &arrays).unwrap();
        assert_eq!(read_bundle(&path).unwrap(), arrays);
    }

    proptest! {
        #[test]
        fn f64_arrays_round_trip(shape in prop::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = (0..numel).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
            let t = Tensor::new(&shape, data).unwrap();
            let mut buf = Vec::new();
            write_array(&mut buf, &RawArray::from_tensor(&t)).unwrap();
            let back: Tensor<f64> = read_array(&mut buf.as_slice()).unwrap().to_tensor().unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
