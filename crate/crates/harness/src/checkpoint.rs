//! Binary checkpoints with a plain-text manifest.
//!
//! Layout (little endian): the magic `DFGCNCK1`, a `u32` entry count, then
//! per entry a `u32` name length, the UTF-8 name, `u32` rows, `u32` cols and
//! `rows·cols` `f64` values. Trainable tensors are stored under their own
//! names and batch-norm buffers under `buffer/<name>`.
//!
//! The manifest lists `name rows cols` per entry followed by a
//! `sha256 <hex>` line covering the binary file.

use std::path::{Path, PathBuf};

use dfgcn_core::matrix::Matrix;
use dfgcn_core::model::Model;
use dfgcn_core::params::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_at, HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"DFGCNCK1";
const BUFFER_PREFIX: &str = "buffer/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub store: ParamStore,
}

fn entries(store: &ParamStore) -> Vec<(String, &Matrix)> {
    let mut out: Vec<(String, &Matrix)> = store.iter().map(|(n, e)| (n.to_string(), &e.value)).collect();
    out.extend(store.buffers().map(|(n, m)| (format!("{BUFFER_PREFIX}{n}"), m)));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| HarnessError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn new(store: ParamStore) -> Self {
        Self { store }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let list = entries(&self.store);
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(list.len() as u32).to_le_bytes());
        for (name, m) in list {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(HarnessError::Checkpoint("bad magic".into()));
        }
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| HarnessError::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Matrix::from_vec(rows, cols, data)?;
            match name.strip_prefix(BUFFER_PREFIX) {
                Some(buffer) => store.set_buffer(buffer, m),
                None => store.insert(name, m)?,
            }
        }
        if r.pos != bytes.len() {
            return Err(HarnessError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { store })
    }

    pub fn manifest(&self, bytes: &[u8]) -> String {
        let mut text = String::new();
        for (name, m) in entries(&self.store) {
            text.push_str(&format!("{name} {} {}\n", m.rows(), m.cols()));
        }
        text.push_str(&format!("sha256 {}\n", hex::encode(Sha256::digest(bytes))));
        text
    }

    pub fn manifest_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".manifest");
        PathBuf::from(p)
    }

    /// Writes the binary file and `<path>.manifest`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(io_at(path))?;
        let mpath = Self::manifest_path(path);
        std::fs::write(&mpath, self.manifest(&bytes)).map_err(io_at(&mpath))
    }

    /// Reads a checkpoint, verifying the manifest digest when one exists.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_at(path))?;
        let mpath = Self::manifest_path(path);
        if mpath.exists() {
            let manifest = std::fs::read_to_string(&mpath).map_err(io_at(&mpath))?;
            let expected = manifest
                .lines()
                .find_map(|l| l.strip_prefix("sha256 "))
                .ok_or_else(|| HarnessError::Checkpoint("manifest has no sha256 line".into()))?;
            if hex::encode(Sha256::digest(&bytes)) != expected.trim() {
                return Err(HarnessError::Checkpoint("sha256 does not match manifest".into()));
            }
        }
        Self::from_bytes(&bytes)
    }

    /// Fails unless every tensor the config's model expects is present
    /// with the expected shape.
    pub fn check_compatible(&self, cfg: &RunConfig) -> Result<()> {
        let template = Model::new(cfg.model_config())?.init(&mut ChaCha8Rng::seed_from_u64(0))?;
        for (name, m) in entries(&template) {
            let found = match name.strip_prefix(BUFFER_PREFIX) {
                Some(b) => self.store.buffer(b).ok(),
                None => self.store.value(&name).ok(),
            };
            match found {
                None => return Err(HarnessError::Checkpoint(format!("missing entry `{name}`"))),
                Some(f) if f.shape() != m.shape() => {
                    return Err(HarnessError::CheckpointShape {
                        name,
                        found: f.shape(),
                        expected: m.shape(),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let cfg = RunConfig {
            hidden_dim: 8,
            ..RunConfig::default()
        };
        Model::new(cfg.model_config())
            .unwrap()
            .init(&mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let ck = Checkpoint::new(store());
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for (name, e) in ck.store.iter() {
            assert_eq!(back.store.value(name).unwrap(), &e.value);
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT\0\0\0\0").is_err());
    }

    #[test]
    fn save_load_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = Checkpoint::new(store());
        ck.save(&path).unwrap();
        let manifest = std::fs::read_to_string(Checkpoint::manifest_path(&path)).unwrap();
        assert!(manifest.contains("sgcode.0.omega 8 8\n"));
        assert!(manifest.contains("buffer/head.bn.running_var 1 8\n"));
        assert_eq!(Checkpoint::load(&path).unwrap().to_bytes(), ck.to_bytes());

        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(HarnessError::Checkpoint(_))));
    }

    #[test]
    fn incompatible_config_is_a_shape_error() {
        let ck = Checkpoint::new(store());
        let ok = RunConfig {
            hidden_dim: 8,
            ..RunConfig::default()
        };
        ck.check_compatible(&ok).unwrap();
        let wider = RunConfig::default();
        assert!(matches!(ck.check_compatible(&wider), Err(HarnessError::CheckpointShape { .. })));
    }
}
