//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic    b"TFPARAMS"
//! version  1
//! count    number of records
//! record*  name_len, name (utf-8), ndim, dims[ndim], f32 payload (LE)
//! ```
//!
//! Records are written in registration order, so a store built the same way
//! always serializes to the same bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::store::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TFPARAMS";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn put_u32(w: &mut impl Write, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_records(w: &mut impl Write, records: &[TensorRecord]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, records.len() as u32)?;
    for rec in records {
        put_u32(w, rec.name.len() as u32)?;
        w.write_all(rec.name.as_bytes())?;
        put_u32(w, rec.shape.len() as u32)?;
        for &d in &rec.shape {
            put_u32(w, d as u32)?;
        }
        for &x in &rec.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_records(r: &mut impl Read) -> Result<Vec<TensorRecord>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("missing header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = get_u32(r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = get_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not utf-8".into()))?;
        let ndim = get_u32(r)? as usize;
        let shape = (0..ndim).map(|_| get_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated payload of {name}: {e}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(TensorRecord { name, shape, data });
    }
    Ok(out)
}

impl ParamStore<f32> {
    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.params()
            .map(|(_, p)| TensorRecord {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
                data: p.value().to_vec(),
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_records(&mut buf, &self.to_records()).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_records(&mut w, &self.to_records()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Overwrites values of every registered array from `records`. Every
    /// registered name must be present with the same shape; extra records are
    /// an error too. Checkpoints carry no optimizer state, so the Adam
    /// moments restart from zero.
    pub fn restore(&mut self, records: &[TensorRecord]) -> Result<()> {
        if records.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} arrays, model expects {}",
                records.len(),
                self.len()
            )));
        }
        for rec in records {
            let id = self
                .id(&rec.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown array {}", rec.name)))?;
            if self.param(id).shape() != rec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "array {} has shape {:?}, model expects {:?}",
                    rec.name,
                    rec.shape,
                    self.param(id).shape()
                )));
            }
            self.get_mut(id).copy_from_slice(&rec.data);
        }
        self.reset_optimizer();
        Ok(())
    }

    pub fn load_from(&mut self, path: &Path) -> Result<()> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let records = read_records(&mut BufReader::new(file))?;
        self.restore(&records)
    }
}
