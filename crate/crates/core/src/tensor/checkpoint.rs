//! Binary checkpoint container.
//!
//! Layout (little-endian):
//! `b"EXGNCKPT"`, `u32` version, 32-byte config digest, `u32` block count,
//! then per block: `u32` name length, UTF-8 name, `u32` rank, `u64` per axis,
//! and the `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::param::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EXGNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, store: &ParamStore, config_digest: &[u8; 32]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&CHECKPOINT_VERSION.to_le_bytes())?;
    write(config_digest)?;
    write(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        write(&(p.name.len() as u32).to_le_bytes())?;
        write(p.name.as_bytes())?;
        write(&(p.tensor.rank() as u32).to_le_bytes())?;
        for &d in p.tensor.shape() {
            write(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.tensor.len() * 8);
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        write(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the digest and every named block without validating against a model.
pub fn read_checkpoint(path: &Path) -> Result<([u8; 32], Vec<(String, Tensor)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut read = |n: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(buf)
    };
    if read(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let digest: [u8; 32] = read(32)?.try_into().unwrap();
    let count = u32::from_le_bytes(read(4)?.try_into().unwrap()) as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = u32::from_le_bytes(read(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(read(nlen)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(read(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read(8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = read(n * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        blocks.push((name, Tensor::new(shape, data)?));
    }
    Ok((digest, blocks))
}

/// Loads weights into `store`, requiring the config digest and the exact
/// set of parameter names and shapes to agree.
pub fn load_checkpoint(path: &Path, store: &mut ParamStore, config_digest: &[u8; 32]) -> Result<()> {
    let (digest, blocks) = read_checkpoint(path)?;
    if &digest != config_digest {
        return Err(Error::Checkpoint("model config digest does not match checkpoint".into()));
    }
    if blocks.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            blocks.len(),
            store.len()
        )));
    }
    for (name, tensor) in blocks {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let p = store.get_mut(id);
        if p.tensor.shape() != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "shape of `{name}`: checkpoint {:?}, model {:?}",
                tensor.shape(),
                p.tensor.shape()
            )));
        }
        p.tensor = tensor;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("enc.w", Tensor::matrix(2, 3, vec![1.0, -2.5, 3.25, 0.0, 1e-300, -7.0]).unwrap()).unwrap();
        s.add("enc.b", Tensor::vector(vec![0.5, 0.25])).unwrap();
        s
    }

    #[test]
    fn roundtrip_restores_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let digest = [7u8; 32];
        let src = store();
        save_checkpoint(&path, &src, &digest).unwrap();
        let mut dst = store();
        dst.get_mut(dst.id("enc.b").unwrap()).tensor.data_mut()[0] = 99.0;
        load_checkpoint(&path, &mut dst, &digest).unwrap();
        for ((_, a), (_, b)) in src.iter().zip(dst.iter()) {
            assert_eq!(a.tensor, b.tensor);
        }
    }

    #[test]
    fn rejects_digest_and_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &store(), &[1u8; 32]).unwrap();
        assert!(load_checkpoint(&path, &mut store(), &[2u8; 32]).is_err());

        let mut other = ParamStore::new();
        other.add("enc.w", Tensor::zeros(&[3, 2])).unwrap();
        other.add("enc.b", Tensor::zeros(&[2])).unwrap();
        let err = load_checkpoint(&path, &mut other, &[1u8; 32]).unwrap_err();
        assert!(err.to_string().contains("enc.w"));
    }
}
