//! Named-tensor checkpoint files.
//!
//! Layout, all integers little-endian:
//! `b"SPGAN1"`, `u32` version, `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank, `rank × u64` dims and
//! `product(dims) × f64` values.

use std::fs;
use std::path::Path;

use spgan_core::tensor::Tensor;

use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 6] = b"SPGAN1";
pub const VERSION: u32 = 1;

pub fn encode(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    origin: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint {
            origin: self.origin.to_string(),
            msg: format!("byte {}: {}", self.pos, msg.into()),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.err(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(origin: &str, bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { origin, bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(r.err("not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.err(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= bytes.len() / 8)
            .ok_or_else(|| r.err(format!("tensor `{name}` has implausible shape {shape:?}")))?;
        let raw = r.take(n * 8, &format!("values of `{name}`"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| r.err(e.to_string()))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, encode(tensors)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&path.display().to_string(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("gen.w".into(), Tensor::matrix(2, 3, vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE, 0.0, -0.0]).unwrap()),
            ("ß.bias".into(), Tensor::new(vec![2], vec![1e300, -1e-300]).unwrap()),
            ("scalar".into(), Tensor::scalar(0.1)),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = sample();
        let back = decode("mem", &encode(&t)).unwrap();
        assert_eq!(back.len(), 3);
        for ((na, ta), (nb, tb)) in t.iter().zip(&back) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(ta), bits(tb));
        }
    }

    #[test]
    fn header_bytes() {
        let b = encode(&[]);
        assert_eq!(b, [b"SPGAN1".as_slice(), &[1, 0, 0, 0], &[0, 0, 0, 0]].concat());
        let one = encode(&[("a".into(), Tensor::new(vec![1], vec![1.0]).unwrap())]);
        // name len, name, rank, one dim, one value
        assert_eq!(one.len(), 14 + 4 + 1 + 4 + 8 + 8);
        assert_eq!(&one[one.len() - 8..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let good = encode(&sample());
        assert!(decode("x", b"SPGAN2\x01\0\0\0\0\0\0\0").is_err());
        assert!(decode("x", &good[..good.len() - 3]).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(decode("x", &trailing).is_err());
        let mut v2 = good;
        v2[6] = 2;
        let err = decode("ck.bin", &v2).unwrap_err().to_string();
        assert!(err.contains("ck.bin") && err.contains("version 2"), "{err}");
    }
}
