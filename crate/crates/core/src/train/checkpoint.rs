//! Checkpoint archives.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic    8 bytes  "RADREGCK"
//! version  u32      1
//! meta     u32 length, then that many bytes of JSON metadata
//! count    u32      number of tensors
//! tensor   u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
//!          prod(dims) x f32 values
//! ```
//!
//! The metadata is also written next to the archive as `<name>.json`.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use radreg_nn::{load_state, state_dict, Linear, NamedTensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::train::{Encoder, LinearHead, Method, ModelConfig, TrainConfig};

const MAGIC: &[u8; 8] = b"RADREGCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Encoder,
    LinearHead,
}

/// Training metadata stored with every archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ArtifactKind,
    pub method: Method,
    pub epoch: usize,
    pub config_hash: String,
    pub model: ModelConfig,
    pub embedding_width: usize,
    pub classes: Option<usize>,
    pub config: TrainConfig,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

pub fn write_archive(path: &Path, meta: &CheckpointMeta, tensors: &[NamedTensor]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::UnwritableOutputDir {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let json = serde_json::to_vec(meta)?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_archive(path: &Path) -> Result<(CheckpointMeta, Vec<NamedTensor>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint archive".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported archive version {version}")));
    }
    let mut json = vec![0u8; read_u32(&mut r)? as usize];
    r.read_exact(&mut json)?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let mut name = vec![0u8; read_u32(&mut r)? as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok((meta, tensors))
}

/// A trained (or freshly initialised) encoder with its provenance.
#[derive(Debug, Clone)]
pub struct EncoderCheckpoint {
    method: Method,
    pub epoch: usize,
    pub config: TrainConfig,
    pub encoder: Encoder,
}

impl EncoderCheckpoint {
    pub fn new(method: Method, epoch: usize, config: TrainConfig, encoder: Encoder) -> Self {
        EncoderCheckpoint {
            method,
            epoch,
            config,
            encoder,
        }
    }

    /// Randomly initialised encoder for `config.model`.
    pub fn untrained(method: Method, config: TrainConfig) -> Self {
        let encoder = Encoder::new(config.model, &mut rng::stream(config.seed, &[0xe4c]));
        EncoderCheckpoint::new(method, 0, config, encoder)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            kind: ArtifactKind::Encoder,
            method: self.method,
            epoch: self.epoch,
            config_hash: self.config.hash(),
            model: self.encoder.model(),
            embedding_width: self.encoder.embedding_width(),
            classes: None,
            config: self.config.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_archive(path, &self.meta(), &state_dict(self.encoder.params()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = read_archive(path)?;
        if meta.kind != ArtifactKind::Encoder {
            return Err(Error::Checkpoint(format!("{} holds a {:?}, not an encoder", path.display(), meta.kind)));
        }
        let mut encoder = Encoder::new(meta.model, &mut rng::stream(0, &[]));
        load_state(encoder.params_mut(), &tensors)?;
        Ok(EncoderCheckpoint::new(meta.method, meta.epoch, meta.config, encoder))
    }
}

impl LinearHead {
    pub fn save(&self, path: &Path, method: Method, config: &TrainConfig) -> Result<()> {
        let meta = CheckpointMeta {
            kind: ArtifactKind::LinearHead,
            method,
            epoch: self.epochs_trained,
            config_hash: config.hash(),
            model: config.model,
            embedding_width: self.linear.in_features(),
            classes: Some(self.linear.out_features()),
            config: config.clone(),
        };
        write_archive(path, &meta, &state_dict(radreg_nn::Module::params(&self.linear)))
    }

    pub fn load(path: &Path) -> Result<(LinearHead, CheckpointMeta)> {
        let (meta, tensors) = read_archive(path)?;
        if meta.kind != ArtifactKind::LinearHead {
            return Err(Error::Checkpoint(format!("{} holds a {:?}, not a linear head", path.display(), meta.kind)));
        }
        let classes = meta.classes.unwrap_or(crate::NUM_REGIONS);
        let mut linear = Linear::new("head", meta.embedding_width, classes, true, &mut rng::stream(0, &[]));
        load_state(radreg_nn::Module::params_mut(&mut linear), &tensors)?;
        Ok((
            LinearHead {
                linear,
                epochs_trained: meta.epoch,
            },
            meta,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{Method, TrainConfig};

    #[test]
    fn encoder_archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = TrainConfig::pretrain(Method::Byol).desk();
        config.model.base_width = 4;
        let ck = EncoderCheckpoint::untrained(Method::Byol, config);
        let path = dir.path().join("enc.ckpt");
        ck.save(&path).unwrap();
        let sidecar: CheckpointMeta = serde_json::from_slice(&std::fs::read(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(sidecar, ck.meta());
        let back = EncoderCheckpoint::load(&path).unwrap();
        assert_eq!(back.method(), Method::Byol);
        assert_eq!(state_dict(back.encoder.params()), state_dict(ck.encoder.params()));
        assert!(LinearHead::load(&path).is_err());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(EncoderCheckpoint::load(&path), Err(Error::Checkpoint(_))));
        assert!(matches!(EncoderCheckpoint::load(&dir.path().join("none")), Err(Error::MissingFile(_))));
    }
}
