//! Little-endian binary encoding of tensors.
//!
//! Layout of one record:
//!
//! ```text
//! "LLT1" | width u8 (4 = f32, 8 = f64) | rank u8 | rank × u64 extents | payload
//! ```
//!
//! The same record is embedded in checkpoints and replay-buffer files.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"LLT1";

/// Cursor over a byte slice that reports offsets on failure.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                at,
                format!("bad magic {:?}, expected {:?}", got, expected),
            ));
        }
        Ok(())
    }
}

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(T::WIDTH);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn tensor_to_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::new();
    encode_tensor(t, &mut out);
    out
}

/// Decodes one record, converting the payload to `T` when the stored width differs.
pub fn decode_tensor<T: Scalar>(r: &mut Reader<'_>) -> Result<Tensor<T>> {
    let start = r.position();
    r.magic(TENSOR_MAGIC)?;
    let width_at = r.position();
    let width = r.u8("precision flag")?;
    if width != 4 && width != 8 {
        return Err(Error::format(
            width_at,
            format!("unknown precision flag {width}"),
        ));
    }
    let rank = r.u8("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let at = r.position();
        let e = r.u64("extent")?;
        if e == 0 || e > u32::MAX as u64 {
            return Err(Error::format(at, format!("invalid extent {e}")));
        }
        shape.push(e as usize);
    }
    let n: usize = shape.iter().product();
    let payload = r.take(n * width as usize, "tensor payload")?;
    let data: Vec<T> = if width == 4 {
        payload
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect()
    };
    Tensor::new(shape, data).map_err(|e| Error::format(start, e.to_string()))
}

pub fn tensor_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader::new(bytes);
    let t = decode_tensor(&mut r)?;
    if !r.is_empty() {
        return Err(Error::format(r.position(), "trailing bytes after tensor"));
    }
    Ok(t)
}
