//! `CDLB1` classifier checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! "CDLB1"  n_params:u32
//! n_params x { name_len:u16  name:utf8  rank:u8  dims:rank x u64  values:f64... }
//! ```

use std::fs;
use std::path::Path;

use condebias_core::nn::Classifier;
use condebias_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"CDLB1";

pub fn encode(model: &Classifier) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.named_params() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.at.checked_add(n)?;
        let s = self.bytes.get(self.at..end)?;
        self.at = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|s| u16::from_le_bytes([s[0], s[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_le_bytes(s.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|s| f64::from_le_bytes(s.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Classifier> {
    let truncated = || Error::format(path, "truncated CDLB1 checkpoint");
    let mut c = Cursor { bytes, at: 0 };
    if c.take(5) != Some(MAGIC.as_slice()) {
        return Err(Error::format(path, "not a CDLB1 checkpoint"));
    }
    let n = c.u32().ok_or_else(truncated)? as usize;
    if n != Classifier::PARAM_NAMES.len() {
        return Err(Error::format(path, format!("expected {} tensors, found {n}", Classifier::PARAM_NAMES.len())));
    }
    let mut params = Vec::with_capacity(n);
    for expected in Classifier::PARAM_NAMES {
        let len = c.u16().ok_or_else(truncated)? as usize;
        let name = c.take(len).ok_or_else(truncated)?;
        if name != expected.as_bytes() {
            return Err(Error::format(
                path,
                format!("expected tensor {expected}, found {}", String::from_utf8_lossy(name)),
            ));
        }
        let rank = c.u8().ok_or_else(truncated)? as usize;
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Option<Vec<usize>>>()
            .ok_or_else(truncated)?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(truncated)?;
        if count > bytes.len() / 8 {
            return Err(truncated());
        }
        let data = (0..count).map(|_| c.f64()).collect::<Option<Vec<f64>>>().ok_or_else(truncated)?;
        params.push(Tensor::new(shape, data)?);
    }
    if c.at != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    Classifier::from_params(params).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_checkpoint(model: &Classifier, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Classifier> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
