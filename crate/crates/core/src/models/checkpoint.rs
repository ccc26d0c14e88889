//! Binary parameter files.
//!
//! Layout, all integers little-endian: magic `IVAE`, `u32` format version,
//! `u32` array count, then per array a `u32` name length, the UTF-8 name,
//! a `u32` rank, `rank` `u64` extents and the row-major `f64` data.

use std::fs;
use std::path::Path;

use super::ModelError;
use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 4] = b"IVAE";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_arrays<'a>(arrays: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let arrays: Vec<_> = arrays.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_arrays(buf: &[u8]) -> Result<Vec<(String, Tensor)>, ModelError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| ModelError::Checkpoint("array name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let numel = numel.ok_or_else(|| ModelError::Checkpoint(format!("{name}: extents overflow")))?;
        let bytes = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| ModelError::Checkpoint("size overflow".into()))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

/// Writes through a temporary file so a crash never leaves a partial checkpoint.
pub fn write_arrays<'a>(
    path: &Path,
    arrays: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), ModelError> {
    let tmp = path.with_extension("tmp");
    let io = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    fs::write(&tmp, encode_arrays(arrays)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_arrays(path: &Path) -> Result<Vec<(String, Tensor)>, ModelError> {
    let buf = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_arrays(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let a = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, f64::MIN_POSITIVE, 7.0]).unwrap();
        let b = Tensor::vector(vec![0.25]);
        let bytes = encode_arrays([("enc.w", &a), ("b", &b)]);
        assert_eq!(&bytes[..4], b"IVAE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        // header 12 + (4+5+4+16+48) + (4+1+4+8+8)
        assert_eq!(bytes.len(), 12 + 77 + 25);
        let back = decode_arrays(&bytes).unwrap();
        assert_eq!(back, vec![("enc.w".to_string(), a), ("b".to_string(), b)]);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::vector(vec![1.0, 2.0]);
        let bytes = encode_arrays([("x", &t)]);
        assert!(decode_arrays(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_arrays(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_arrays(&extra).is_err());
    }
}
