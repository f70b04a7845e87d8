//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SACL"                      magic
//! u16                         format version
//! u32                         entry count
//! per entry:
//!   u32 + UTF-8               name
//!   u32                       rank
//!   u32 * rank                dims
//!   f32 * prod(dims)          payload
//! u32 + UTF-8                 manifest (JSON, may be empty)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"SACL";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: IndexMap<String, Tensor<f32>>,
    pub manifest: String,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Format(format!("duplicate checkpoint entry `{name}`")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    /// Adds every entry of `store` under `prefix/`.
    pub fn add_store<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) -> Result<()> {
        for (name, t) in store.iter() {
            self.insert(format!("{prefix}/{name}"), t.cast())?;
        }
        Ok(())
    }

    /// Overwrites `store` from the entries under `prefix/`; names and shapes must match.
    pub fn read_store<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        // validate before mutating anything
        for (name, t) in store.iter() {
            let key = format!("{prefix}/{name}");
            let src = self
                .entries
                .get(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks entry `{key}`")))?;
            if src.shape != t.shape {
                return Err(Error::Format(format!(
                    "entry `{key}` has shape {:?}, expected {:?}",
                    src.shape, t.shape
                )));
            }
        }
        for (name, t) in store.iter_mut() {
            let src = &self.entries[&format!("{prefix}/{name}")];
            for (d, &s) in t.data.iter_mut().zip(&src.data) {
                *d = T::of(s as f64);
            }
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks entry `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(self.entries.len())?.to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&u32_len(name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&u32_len(t.shape.len())?.to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&u32_len(d)?.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&u32_len(self.manifest.len())?.to_le_bytes());
        out.extend_from_slice(self.manifest.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let count = r.u32()? as usize;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format("entry size overflows".into()))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("entry size overflows".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            ckpt.insert(name, Tensor { shape, data })?;
        }
        ckpt.manifest = r.string()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after manifest".into()));
        }
        Ok(ckpt)
    }

    /// Writes via a temporary sibling so a failed write never leaves a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("length {n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
    }
}
