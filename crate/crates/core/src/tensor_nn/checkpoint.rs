//! Binary parameter checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      "COPG"
//! version    u32
//! count      u32
//! per segment:
//!   name_len u16, name bytes (utf-8)
//!   rank     u8, dims u32 * rank
//!   values   f64 * prod(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"COPG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[f64]) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape,
            values: values.to_vec(),
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensors whose name starts with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a NamedTensor)> {
        self.tensors
            .iter()
            .filter_map(move |t| t.name.strip_prefix(prefix).map(|n| (n, t)))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&u32::try_from(self.tensors.len()).map_err(|_| too_big("segment count"))?.to_le_bytes())?;
        for t in &self.tensors {
            let size: usize = t.shape.iter().product();
            if size != t.values.len() {
                return Err(Error::Checkpoint(format!(
                    "segment `{}` has shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.values.len()
                )));
            }
            let name = t.name.as_bytes();
            w.write_all(&u16::try_from(name.len()).map_err(|_| too_big("name"))?.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[u8::try_from(t.shape.len()).map_err(|_| too_big("rank"))?])?;
            for &d in &t.shape {
                w.write_all(&u32::try_from(d).map_err(|_| too_big("dimension"))?.to_le_bytes())?;
            }
            for v in &t.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("segment name is not utf-8".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let shape = (0..rank[0])
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let size: usize = shape.iter().product();
            let mut values = Vec::with_capacity(size.min(1 << 20));
            let mut buf = [0u8; 8];
            for _ in 0..size {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            tensors.push(NamedTensor { name, shape, values });
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn too_big(what: &str) -> Error {
    Error::Checkpoint(format!("{what} does not fit the checkpoint format"))
}
