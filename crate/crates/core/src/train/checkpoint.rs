//! Checkpoint container.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! "FATC"                 4 bytes magic
//! version      u8        currently 1
//! iteration    u64
//! config_len   u32, then config_len bytes of `key = value` text
//! count        u32
//! count entries of:
//!   name_len   u32, then the UTF-8 name
//!   blob_len   u64, then one FATN tensor record
//! ```
//!
//! Entry names are dotted parameter paths (`generator.lffb.0.branch3.conv1.weight`),
//! optimizer moments (`adam.m.<param>`, `adam.v.<param>`, plus
//! `adam.generator.step` and `adam.discriminator.step`) and spectral-norm vectors
//! (`discriminator.sn.<layer>.u`, `discriminator.sn.<layer>.v`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{io as fatn, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"FATC";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub iteration: u64,
    pub config: String,
    /// `(name, FATN record)` in insertion order.
    pub entries: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn new(iteration: u64, config: String) -> Self {
        Checkpoint {
            iteration,
            config,
            entries: Vec::new(),
        }
    }

    pub fn put<T: Element>(&mut self, name: &str, t: &Tensor<T>) {
        self.entries.push((name.to_string(), fatn::encode(t)));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    /// Decodes entry `name`, converting the stored dtype to `T`.
    pub fn get<T: Element>(&self, name: &str) -> Option<Result<Tensor<T>>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(n, blob)| fatn::decode(blob, n))
    }

    pub fn require<T: Element>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .unwrap_or_else(|| Err(Error::Contract(format!("checkpoint has no entry {name}"))))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, blob) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
            out.extend_from_slice(blob);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != MAGIC {
            return Err(Error::format(origin, "not a checkpoint (bad magic)"));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported checkpoint version {version}")));
        }
        let iteration = r.u64()?;
        let len = r.u32()? as usize;
        let config = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::format(origin, "config text is not UTF-8"))?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let nl = r.u32()? as usize;
            let name = String::from_utf8(r.take(nl)?.to_vec())
                .map_err(|_| Error::format(origin, "entry name is not UTF-8"))?;
            let bl = r.u64()? as usize;
            let blob = r.take(bl)?.to_vec();
            // validate eagerly so corrupt files fail at load time
            let (_, used) = fatn::decode_prefix::<f64>(&blob, &name)?;
            if used != blob.len() {
                return Err(Error::format(origin, format!("entry {name} has trailing bytes")));
            }
            entries.push((name, blob));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after last entry"));
        }
        Ok(Checkpoint {
            iteration,
            config,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.origin, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
