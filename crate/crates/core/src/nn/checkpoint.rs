//! Parameter checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "OSSLCKPT"
//! version      u32      1
//! config_len   u32      length of the UTF-8 config text that follows
//! config       bytes
//! count        u32      number of records
//! record*:
//!   name_len   u32
//!   name       bytes (UTF-8)
//!   rank       u32
//!   dims       rank x u32
//!   data       prod(dims) x f32
//! ```

use std::io::Write;

use super::{ModelParams, NnError, Tensor};

const MAGIC: &[u8; 8] = b"OSSLCKPT";
const VERSION: u32 = 1;

/// One `(name, shape, values)` record.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Parameter records plus the configuration text they were trained with.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config: String,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn new(config: impl Into<String>) -> Self {
        Checkpoint {
            config: config.into(),
            records: Vec::new(),
        }
    }

    /// Appends every entry of `params`, trainable or not.
    pub fn push_params(&mut self, params: &ModelParams<f32>) {
        for p in params.iter() {
            self.records.push(Record {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            });
        }
    }

    /// Writes every matching record into `params`. Each entry of `params`
    /// must be present with the same shape.
    pub fn load_params(&self, params: &mut ModelParams<f32>) -> Result<(), NnError> {
        let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
        for name in names {
            let rec = self
                .records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| NnError::Checkpoint {
                    offset: 0,
                    reason: format!("missing record {name}"),
                })?;
            params.set_value(&name, Tensor::from_vec(&rec.shape, rec.data.clone())?)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.config.len() as u32).to_le_bytes())?;
        w.write_all(self.config.as_bytes())?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for r in &self.records {
            w.write_all(&(r.name.len() as u32).to_le_bytes())?;
            w.write_all(r.name.as_bytes())?;
            w.write_all(&(r.shape.len() as u32).to_le_bytes())?;
            for &d in &r.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in &r.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Checkpoint {
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint {
                offset: 8,
                reason: format!("unsupported version {version}"),
            });
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let config = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| NnError::Checkpoint {
            offset: at,
            reason: "config is not UTF-8".into(),
        })?;
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| NnError::Checkpoint {
                offset: at,
                reason: "record name is not UTF-8".into(),
            })?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or(NnError::Checkpoint {
                offset: r.pos,
                reason: "record too large".into(),
            })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push(Record { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint {
                offset: r.pos,
                reason: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint { config, records })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NnError::Checkpoint {
                offset: self.pos,
                reason: format!("truncated: wanted {n} bytes"),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
