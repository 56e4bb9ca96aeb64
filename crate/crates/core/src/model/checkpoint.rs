//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!   magic "MUKD" | u32 version | u64 config_len | config text (key=value)
//!   | u64 tensor count | per tensor: u64 name_len, name bytes, u64 rank,
//!   u64 dims[rank], f32 data.
//!
//! Files are written to a temporary sibling and renamed into place, and
//! loading validates sizes before returning, so a truncated or corrupt file
//! never yields partial state.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MUKD";
pub const CHECKPOINT_VERSION: u32 = 1;

pub struct LoadedCheckpoint {
    pub config_text: String,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

pub fn save_tensors(path: &Path, named: &[(String, Tensor)], config_text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = std::fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let cfg = config_text.as_bytes();
        w.write_all(&(cfg.len() as u64).to_le_bytes())?;
        w.write_all(cfg)?;
        w.write_all(&(named.len() as u64).to_le_bytes())?;
        for (name, tensor) in named {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u64).to_le_bytes())?;
            w.write_all(nb)?;
            let shape = tensor.shape();
            w.write_all(&(shape.len() as u64).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let data = tensor.data();
            for &v in data.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint(format!("truncated file while reading {what}")))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn load_tensors(path: &Path) -> Result<LoadedCheckpoint> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut ver = [0u8; 4];
    read_exact_or(&mut r, &mut ver, "version")?;
    let version = u32::from_le_bytes(ver);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_len = read_u64(&mut r, "config length")? as usize;
    if cfg_len > 1 << 30 {
        return Err(Error::Checkpoint("implausible config length".into()));
    }
    let mut cfg = vec![0u8; cfg_len];
    read_exact_or(&mut r, &mut cfg, "config block")?;
    let config_text = String::from_utf8(cfg)
        .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;

    let n_tensors = read_u64(&mut r, "tensor count")? as usize;
    let mut tensors = BTreeMap::new();
    for i in 0..n_tensors {
        let name_len = read_u64(&mut r, "tensor name length")? as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint(format!("tensor {i}: implausible name length")));
        }
        let mut nb = vec![0u8; name_len];
        read_exact_or(&mut r, &mut nb, "tensor name")?;
        let name = String::from_utf8(nb)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?;
        let rank = read_u64(&mut r, &format!("rank of `{name}`"))? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor `{name}`: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, &format!("dims of `{name}`"))? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > 1 << 31 {
            return Err(Error::Checkpoint(format!("tensor `{name}`: implausible size")));
        }
        let mut bytes = vec![0u8; numel * 4];
        read_exact_or(&mut r, &mut bytes, &format!("data of `{name}`"))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if tensors.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    Ok(LoadedCheckpoint { config_text, tensors })
}
