//! Named-tensor checkpoint container.
//!
//! Layout: 8-byte magic, little-endian u32 tensor count, then per tensor in
//! sorted name order: u32 name length, UTF-8 name, u32 rank, u64 dims,
//! little-endian f32 payload. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CPCK0001";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> NamedTensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NamedTensor { name: name.into(), shape, data }
    }
}

/// Writes tensors sorted by name. Duplicate names are rejected.
pub fn write_checkpoint<W: Write>(w: &mut W, tensors: &[NamedTensor]) -> Result<()> {
    let mut order: Vec<usize> = (0..tensors.len()).collect();
    order.sort_by(|&a, &b| tensors[a].name.cmp(&tensors[b].name));
    for pair in order.windows(2) {
        if tensors[pair[0]].name == tensors[pair[1]].name {
            return Err(Error::Format(format!(
                "duplicate tensor name {:?}",
                tensors[pair[0]].name
            )));
        }
    }
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for &idx in &order {
        let t = &tensors[idx];
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let len: usize = t.shape.iter().product();
        if len != t.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {:?} has {} values for shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            )));
        }
        let mut buf = Vec::with_capacity(len * 4);
        for &v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a checkpoint, verifying the magic and sorted unique names.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("missing checkpoint magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let count = read_u32(r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    let mut prev_name: Option<String> = None;
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!("unreasonable name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| Error::Format("truncated tensor name".into()))?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("tensor name not UTF-8".into()))?;
        if let Some(prev) = &prev_name {
            if *prev >= name {
                return Err(Error::Format("tensor names not sorted".into()));
            }
        }
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("unreasonable rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut len = 1usize;
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| Error::Format("truncated shape".into()))?;
            let d = u64::from_le_bytes(b) as usize;
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
            shape.push(d);
        }
        let mut buf = vec![0u8; len * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated payload for {name:?}")))?;
        let data: Vec<f32> =
            buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        prev_name = Some(name.clone());
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok(tensors)
}

pub fn save_checkpoint(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<NamedTensor>> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated header field".into()))?;
    Ok(u32::from_le_bytes(b))
}
