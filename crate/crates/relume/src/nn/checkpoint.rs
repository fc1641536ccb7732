//! Checkpoint file format: magic bytes, a format version, then a table of
//! (name, shape, little-endian f64 payload) records. Round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RLMCKPT\x01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    for rec in records {
        let name = rec.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::invalid("checkpoint record name too long"));
        }
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(rec.shape.len() as u8).to_le_bytes())?;
        let mut expect = 1usize;
        for d in &rec.shape {
            out.write_all(&(*d as u64).to_le_bytes())?;
            expect *= d;
        }
        if expect != rec.data.len() {
            return Err(Error::invalid(format!(
                "record {:?}: shape does not match payload",
                rec.name
            )));
        }
        for v in &rec.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    reader
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint too short".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = read_u32(&mut reader)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut reader)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut reader)? as usize;
        let mut name = vec![0u8; name_len];
        reader.read_exact(&mut name).map_err(|_| truncated())?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("non-UTF8 checkpoint record name".into()))?;
        let mut ndim = [0u8; 1];
        reader.read_exact(&mut ndim).map_err(|_| truncated())?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        let mut n = 1usize;
        for _ in 0..ndim[0] {
            let d = read_u64(&mut reader)? as usize;
            shape.push(d);
            n = n
                .checked_mul(d)
                .ok_or_else(|| Error::Format("checkpoint shape overflow".into()))?;
        }
        let mut raw = vec![0u8; n * 8];
        reader.read_exact(&mut raw).map_err(|_| truncated())?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

fn truncated() -> Error {
    Error::Format("truncated checkpoint".into())
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(|_| truncated())?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| truncated())?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| truncated())?;
    Ok(u64::from_le_bytes(b))
}
