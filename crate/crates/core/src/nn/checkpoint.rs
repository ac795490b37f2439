//! Binary checkpoint container.
//!
//! Layout (little endian): magic `CANTOUMT`, `u32` version, `u64` manifest
//! length, manifest text (`key = value` lines), `u32` tensor count, then per
//! tensor a `u32` name length, the name, `u64` rows, `u64` cols and the
//! values as `f64`.

use std::path::Path;

use super::params::Mat;
use crate::hash::sha256_hex;
use crate::kv::KvFile;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CANTOUMT";
pub const VERSION: u32 = 1;
pub const TENSORS_HASH_KEY: &str = "tensors_sha256";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub manifest: KvFile,
    pub tensors: Vec<(String, Mat)>,
}

fn encode_tensors(tensors: &[(String, Mat)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((m.nrows() as u64).to_le_bytes());
        out.extend((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format("checkpoint", "length overflow"))
    }
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Mat> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = encode_tensors(&self.tensors);
        let mut manifest = self.manifest.clone();
        manifest.set(TENSORS_HASH_KEY, sha256_hex(&body));
        let text = manifest.to_text();
        let mut out = Vec::with_capacity(body.len() + text.len() + 32);
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((text.len() as u64).to_le_bytes());
        out.extend(text.as_bytes());
        out.extend(body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let n = r.len()?;
        let text = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::format("checkpoint", "manifest is not UTF-8"))?;
        let mut manifest = KvFile::parse(text)?;
        let body_start = r.pos;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?
                .to_string();
            let rows = r.len()?;
            let cols = r.len()?;
            let len = rows
                .checked_mul(cols)
                .and_then(|l| l.checked_mul(8))
                .ok_or_else(|| Error::format("checkpoint", "tensor size overflow"))?;
            let data = r.take(len)?;
            let values = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Mat::from_shape_vec((rows, cols), values)
                .map_err(|e| Error::format("checkpoint", e.to_string()))?;
            tensors.push((name, m));
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        let expected = manifest
            .remove(TENSORS_HASH_KEY)
            .ok_or_else(|| Error::format("checkpoint", "manifest lacks tensor hash"))?;
        let found = sha256_hex(&bytes[body_start..]);
        if expected != found {
            return Err(Error::HashMismatch {
                what: "checkpoint tensors".into(),
                expected,
                found,
            });
        }
        Ok(Checkpoint { manifest, tensors })
    }

    /// Writes via a temporary file and rename so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
