//! `VTF1` dense array files: magic, dtype byte, ndim byte, u64 LE dims, LE payload.

use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VTF1";

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::U8(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f32.
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            TensorData::F32(v) => v.clone(),
            TensorData::F64(v) => v.iter().map(|&x| x as f32).collect(),
            TensorData::U8(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VtfArray {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl VtfArray {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!("{} dims exceed the format limit", shape.len())));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = match self.data {
            TensorData::F32(_) => 4,
            TensorData::F64(_) => 8,
            TensorData::U8(_) => 1,
        };
        let mut out = Vec::with_capacity(6 + 8 * self.shape.len() + width * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.data.code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, not a VTF1 file".into()));
        }
        if bytes.len() < 6 {
            return Err(Error::Format("truncated VTF1 header".into()));
        }
        let (code, ndim) = (bytes[4], bytes[5] as usize);
        let width = match code {
            0 => 4,
            1 => 8,
            2 => 1,
            other => return Err(Error::Format(format!("unknown VTF1 dtype byte {other}"))),
        };
        let dims_end = 6 + 8 * ndim;
        if bytes.len() < dims_end {
            return Err(Error::Format("truncated VTF1 dims".into()));
        }
        let shape: Vec<usize> = bytes[6..dims_end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("VTF1 shape {shape:?} overflows")))?;
        let payload = &bytes[dims_end..];
        let expected = n.checked_mul(width).ok_or_else(|| Error::Format("VTF1 payload size overflows".into()))?;
        if payload.len() < expected {
            return Err(Error::Format(format!(
                "truncated VTF1 payload: {} of {expected} bytes",
                payload.len()
            )));
        }
        if payload.len() > expected {
            return Err(Error::Format(format!("{} trailing bytes after VTF1 payload", payload.len() - expected)));
        }
        let data = match code {
            0 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => TensorData::U8(payload.to_vec()),
        };
        Ok(Self { shape, data })
    }
}

pub fn write_tensor_file(path: &Path, array: &VtfArray) -> Result<()> {
    std::fs::write(path, array.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<VtfArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    VtfArray::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_exact() {
        let a = VtfArray::new(vec![2, 1], TensorData::U8(vec![7, 9])).unwrap();
        let b = a.to_bytes();
        assert_eq!(&b[..6], b"VTF1\x02\x02");
        assert_eq!(&b[6..14], &2u64.to_le_bytes());
        assert_eq!(&b[14..22], &1u64.to_le_bytes());
        assert_eq!(&b[22..], &[7, 9]);
    }

    #[test]
    fn errors() {
        assert!(matches!(VtfArray::from_bytes(&[]), Err(Error::Format(m)) if m.contains("magic")));
        let mut b = VtfArray::new(vec![3], TensorData::F32(vec![1.0, 2.0, 3.0])).unwrap().to_bytes();
        b.pop();
        assert!(matches!(VtfArray::from_bytes(&b), Err(Error::Format(m)) if m.contains("truncated")));
        let mut b = VtfArray::new(vec![1], TensorData::U8(vec![1])).unwrap().to_bytes();
        b[4] = 9;
        assert!(VtfArray::from_bytes(&b).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.vtf");
        let a = VtfArray::new(vec![4, 8, 8, 3], TensorData::F32((0..768).map(|i| i as f32 * 0.37).collect())).unwrap();
        write_tensor_file(&p, &a).unwrap();
        assert_eq!(read_tensor_file(&p).unwrap(), a);
        std::fs::write(&p, b"").unwrap();
        assert!(read_tensor_file(&p).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_f32(v in proptest::collection::vec(any::<f32>(), 1..64)) {
            let a = VtfArray::new(vec![v.len()], TensorData::F32(v)).unwrap();
            let b = VtfArray::from_bytes(&a.to_bytes()).unwrap();
            // compare bit patterns so NaN payloads count
            let (TensorData::F32(x), TensorData::F32(y)) = (&a.data, &b.data) else { unreachable!() };
            prop_assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }

        #[test]
        fn roundtrip_f64_u8(v in proptest::collection::vec(any::<f64>(), 1..32), u in proptest::collection::vec(any::<u8>(), 1..32)) {
            let a = VtfArray::new(vec![1, v.len()], TensorData::F64(v)).unwrap();
            let b = VtfArray::from_bytes(&a.to_bytes()).unwrap();
            prop_assert_eq!(a.to_bytes(), b.to_bytes());
            let a = VtfArray::new(vec![u.len()], TensorData::U8(u)).unwrap();
            prop_assert_eq!(VtfArray::from_bytes(&a.to_bytes()).unwrap(), a);
        }
    }
}
