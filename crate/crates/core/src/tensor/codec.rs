//! Binary tensor codec: `"SRDT"`, `u32` version (1), `u32` rank,
//! `u32` dims, then row-major little-endian `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"SRDT";
const VERSION: u32 = 1;

pub fn encode_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads exactly `len` bytes, reporting how many arrived on a short read.
pub(crate) fn read_exactly<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    let mut got = 0;
    while got < len {
        match r.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    what: what.to_string(),
                    expected: len,
                    actual: got,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(buf)
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let b = read_exactly(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn decode_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let what = "tensor";
    let magic = read_exactly(r, 4, what)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Malformed {
            what: what.into(),
            detail: format!("bad magic {magic:?}, expected \"SRDT\""),
        });
    }
    let version = read_u32(r, what)?;
    if version != VERSION {
        return Err(Error::Malformed {
            what: what.into(),
            detail: format!("unsupported version {version}"),
        });
    }
    let rank = read_u32(r, what)? as usize;
    if rank > 8 {
        return Err(Error::Malformed {
            what: what.into(),
            detail: format!("implausible rank {rank}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r, what)? as usize);
    }
    let n: usize = shape.iter().product();
    let payload = read_exactly(r, n * 4, "tensor payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(data, &shape)
}

pub fn write_tensor_file(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(&mut buf, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    decode_tensor(&mut bytes.as_slice())
}
