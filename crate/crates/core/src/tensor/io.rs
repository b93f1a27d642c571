//! Flat binary tensor records.
//!
//! Layout, all little-endian:
//! `"TNSR"`, version `u32`, ndim `u32`, `ndim` × dims `u32`, dtype tag `u32`
//! (0 = f32, 1 = f64), then `product(dims)` values.
//! A multi-tensor file is records written back to back.

use std::io::{self, ErrorKind, Read, Write};

use super::Tensor;

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u32 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn from_tag(tag: u32) -> io::Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(invalid(format!("unknown dtype tag {other}"))),
        }
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(ErrorKind::InvalidData, msg)
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor, dtype: DType) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.ndim() as u32).to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| invalid(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&dtype.tag().to_le_bytes())?;
    match dtype {
        DType::F64 => t.data().iter().try_for_each(|v| w.write_all(&v.to_le_bytes())),
        DType::F32 => t.data().iter().try_for_each(|&v| w.write_all(&(v as f32).to_le_bytes())),
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one record. `Ok(None)` on clean end of input.
fn read_record<R: Read>(r: &mut R) -> io::Result<Option<(Tensor, DType)>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut magic[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(io::Error::new(ErrorKind::UnexpectedEof, "truncated tensor header"));
        }
        got += n;
    }
    if &magic != MAGIC {
        return Err(invalid(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(invalid(format!("unsupported tensor version {version}")));
    }
    let ndim = read_u32(r)? as usize;
    if ndim == 0 || ndim > 16 {
        return Err(invalid(format!("implausible ndim {ndim}")));
    }
    let dims = (0..ndim).map(|_| read_u32(r).map(|d| d as usize)).collect::<io::Result<Vec<_>>>()?;
    let dtype = DType::from_tag(read_u32(r)?)?;
    let n: usize = dims.iter().product();
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut bytes = vec![0u8; n * width];
    r.read_exact(&mut bytes)?;
    let data: Vec<f64> = match dtype {
        DType::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect(),
        DType::F32 => {
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64).collect()
        }
    };
    let t = Tensor::from_vec(data, &dims).map_err(|e| invalid(e.to_string()))?;
    Ok(Some((t, dtype)))
}

pub fn read_tensor<R: Read>(r: &mut R) -> io::Result<(Tensor, DType)> {
    read_record(r)?.ok_or_else(|| io::Error::new(ErrorKind::UnexpectedEof, "no tensor record"))
}

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[Tensor], dtype: DType) -> io::Result<()> {
    tensors.iter().try_for_each(|t| write_tensor(w, t, dtype))
}

pub fn read_tensors<R: Read>(r: &mut R) -> io::Result<Vec<Tensor>> {
    let mut out = Vec::new();
    while let Some((t, _)) = read_record(r)? {
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::from_vec(vec![1.5, -2.0], &[1, 2]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, DType::F64).unwrap();
        assert_eq!(&buf[..4], b"TNSR");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 1.5);
        assert_eq!(buf.len(), 24 + 16);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_tensor(&mut &b"NOPE\x01\x00\x00\x00"[..]).is_err());
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::ones(&[3]), DType::F32).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_tensor(&mut &buf[..]).is_err());
    }

    #[test]
    fn f32_storage_rounds() {
        let t = Tensor::from_vec(vec![0.1], &[1]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, DType::F32).unwrap();
        let (back, dtype) = read_tensor(&mut &buf[..]).unwrap();
        assert_eq!(dtype, DType::F32);
        assert_eq!(back.data()[0], 0.1f32 as f64);
    }

    proptest! {
        #[test]
        fn sequence_roundtrip(shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 1..4), seed in any::<u64>()) {
            let tensors: Vec<Tensor> = shapes.iter().enumerate().map(|(k, s)| {
                let n: usize = s.iter().product();
                let data = (0..n).map(|i| ((seed as f64) * 1e-9 + (i * 31 + k) as f64).sin()).collect();
                Tensor::from_vec(data, s).unwrap()
            }).collect();
            let mut buf = Vec::new();
            write_tensors(&mut buf, &tensors, DType::F64).unwrap();
            let back = read_tensors(&mut &buf[..]).unwrap();
            prop_assert_eq!(back.len(), tensors.len());
            for (a, b) in back.iter().zip(&tensors) {
                prop_assert_eq!(a.shape(), b.shape());
                prop_assert_eq!(a.data(), b.data());
            }
        }
    }
}
