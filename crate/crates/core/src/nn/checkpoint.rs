//! `UAW1` parameter checkpoints.
//!
//! Layout: magic `UAW1`, u32 entry count, then per entry a u32 name length,
//! the UTF-8 name, a u32 rank, `rank` u32 extents and the data as
//! little-endian f64. All integers are little-endian.

use std::io::{Read, Write};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{bail, Result};

pub const MAGIC: &[u8; 4] = b"UAW1";

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!(Format, "not a UAW1 checkpoint (magic {:?})", String::from_utf8_lossy(&magic));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| crate::error::Error::Format("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

/// Copies values from `loaded` into `target`, matching by name and shape.
pub fn load_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<()> {
    if target.len() != loaded.len() {
        bail!(Format, "checkpoint has {} tensors, model expects {}", loaded.len(), target.len());
    }
    let ids: Vec<_> = target.ids().collect();
    for id in ids {
        let name = target.name(id).to_string();
        let Some(src) = loaded.id(&name) else { bail!(Format, "checkpoint lacks parameter {name}") };
        if loaded.get(src).shape() != target.get(id).shape() {
            bail!(Format, "parameter {name}: checkpoint shape {:?}, model {:?}", loaded.get(src).shape(), target.get(id).shape());
        }
        *target.get_mut(id) = loaded.get(src).clone();
    }
    Ok(())
}
