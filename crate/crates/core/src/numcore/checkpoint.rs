//! Binary tensor checkpoints.
//!
//! Layout: the 8-byte magic `DIFFRX01`, then one record per tensor until end
//! of file: `u32` name length, UTF-8 name, `u32` rank, `rank × u32` dims,
//! `f64` payload. All integers and floats are little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::params::TensorMap;
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DIFFRX01";

pub fn write_checkpoint<W: Write>(mut w: W, tensors: &TensorMap) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for (name, t) in tensors.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn checkpoint_bytes(tensors: &TensorMap) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(&mut out, tensors).expect("writing to a Vec cannot fail");
    out
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<TensorMap> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_checkpoint(&bytes)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {pos}")))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn take_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4)?.try_into().unwrap()))
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<TensorMap> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a DIFFRX01 checkpoint".into()));
    }
    let mut pos = 8;
    let mut map = TensorMap::new();
    while pos < bytes.len() {
        let n = take_u32(bytes, &mut pos)? as usize;
        let name = std::str::from_utf8(take(bytes, &mut pos, n)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = take_u32(bytes, &mut pos)? as usize;
        if rank > 4 {
            return Err(Error::Format(format!("tensor '{name}' has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(bytes, &mut pos)? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = take(bytes, &mut pos, numel * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        map.insert(name, Tensor::new(&shape, data)?);
    }
    Ok(map)
}
