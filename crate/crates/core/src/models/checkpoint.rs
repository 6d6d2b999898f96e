//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "TSXD"                      magic
//! u16                         format version (1)
//! u8                          model kind (1 teacher, 2 student, 3 fusion)
//! u8                          bytes per stored value (4 = f32, 8 = f64)
//! u32 + UTF-8                 architecture as JSON
//! u32                         parameter count
//! per parameter:
//!   u32 + UTF-8               name
//!   u32                       rank
//!   u32 × rank                dims
//!   f32/f64 × product(dims)   values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Model};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSXD";
const VERSION: u16 = 1;

/// Precision of stored parameter values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoragePrecision {
    #[default]
    F32,
    F64,
}

impl StoragePrecision {
    fn width(self) -> u8 {
        match self {
            StoragePrecision::F32 => 4,
            StoragePrecision::F64 => 8,
        }
    }
}

pub fn write_checkpoint(model: &Model, precision: StoragePrecision) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.kind().tag());
    out.push(precision.width());
    let arch = serde_json::to_vec(model.architecture()).expect("architecture serializes");
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(&arch);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params().iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            match precision {
                StoragePrecision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                StoragePrecision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
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
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let kind = r.u8()?;
    let precision = match r.u8()? {
        4 => StoragePrecision::F32,
        8 => StoragePrecision::F64,
        w => return Err(Error::Format(format!("unsupported value width {w}"))),
    };
    let arch_len = r.u32()?;
    let arch: Architecture =
        serde_json::from_slice(r.take(arch_len)?).map_err(|e| Error::Format(format!("architecture: {e}")))?;
    let mut model = Model::new(arch, 0)?;
    if model.kind().tag() != kind {
        return Err(Error::Format(format!("kind tag {kind} does not match architecture")));
    }
    let count = r.u32()?;
    if count != model.params().len() {
        return Err(Error::Architecture(format!(
            "checkpoint has {count} parameters, architecture declares {}",
            model.params().len()
        )));
    }
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let name = r.string()?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let expected = model.params().get(id);
        if name != expected.name || dims != expected.value.shape() {
            return Err(Error::Architecture(format!(
                "parameter {name} {dims:?} does not match declared {} {:?}",
                expected.name,
                expected.value.shape()
            )));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * usize::from(precision.width()))?;
        let dst = model.params_mut().value_mut(id).data_mut();
        match precision {
            StoragePrecision::F32 => {
                for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
                    *d = f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")));
                }
            }
            StoragePrecision::F64 => {
                for (d, c) in dst.iter_mut().zip(raw.chunks_exact(8)) {
                    *d = f64::from_le_bytes(c.try_into().expect("8 bytes"));
                }
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path, precision: StoragePrecision) -> Result<()> {
    fs::write(path, write_checkpoint(model, precision)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
