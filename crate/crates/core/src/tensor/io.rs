//! Flat binary tensor format:
//! `"DLGT" | version u32 | rank u32 | dims u32 * rank | dtype u8 | data`,
//! all little-endian. Tensors are always written with rank 4.

use std::io::{Read, Write};

use super::{DType, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DLGT";
const VERSION: u32 = 1;

pub fn write_tensor<T: Scalar, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(21 + 16 + t.len() * T::DTYPE.size());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&4u32.to_le_bytes());
    for d in t.shape().dims() {
        let d = u32::try_from(d).map_err(|_| Error::Usage(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.push(T::DTYPE.tag());
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Byte-counting reader so parse errors can report an offset.
pub(crate) struct Cursor<'a, R> {
    inner: &'a mut R,
    pub offset: usize,
}

impl<'a, R: Read> Cursor<'a, R> {
    pub fn new(inner: &'a mut R, offset: usize) -> Self {
        Cursor { inner, offset }
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Parse {
                offset: self.offset,
                msg: format!("truncated: expected {n} more bytes"),
            },
            _ => Error::Io(e),
        })?;
        self.offset += n;
        Ok(buf)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.offset,
            msg: msg.into(),
        })
    }
}

/// Read one tensor, converting the stored element type to `T` if needed.
pub fn read_tensor<T: Scalar, R: Read>(input: &mut R) -> Result<Tensor<T>> {
    read_tensor_at(&mut Cursor::new(input, 0))
}

pub(crate) fn read_tensor_at<T: Scalar, R: Read>(cur: &mut Cursor<'_, R>) -> Result<Tensor<T>> {
    let start = cur.offset;
    if cur.bytes(4)? != MAGIC {
        return Err(Error::Parse {
            offset: start,
            msg: "bad tensor magic".into(),
        });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return cur.fail(format!("unsupported tensor version {version}"));
    }
    let rank = cur.u32()? as usize;
    if rank > 4 {
        return cur.fail(format!("rank {rank} exceeds 4"));
    }
    let mut dims = [1usize; 4];
    for d in dims.iter_mut().take(rank) {
        *d = cur.u32()? as usize;
    }
    let tag = cur.bytes(1)?[0];
    let Some(dtype) = DType::from_tag(tag) else {
        return cur.fail(format!("unknown element type tag {tag}"));
    };
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let raw = cur.bytes(shape.numel() * dtype.size())?;
    let data = match dtype {
        DType::F32 => raw.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
    };
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"DLGT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 4);
        assert_eq!(buf[28], DType::F32.tag());
        assert_eq!(buf.len(), 29 + 8);
        let back: Tensor<f32> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn f32_widens_to_f64() {
        let t = Tensor::<f32>::from_vec(Shape::vector(3), vec![0.1, 2.5, -7.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back: Tensor<f64> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.data()[0], 0.1f32 as f64);
    }

    #[test]
    fn truncation_reports_offset() {
        let t = Tensor::<f64>::zeros(Shape::new(2, 2, 2, 2));
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(40);
        match read_tensor::<f64, _>(&mut buf.as_slice()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 29),
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor::<f64, _>(&mut bad.as_slice()), Err(Error::Parse { offset: 0, .. })));
    }
}
