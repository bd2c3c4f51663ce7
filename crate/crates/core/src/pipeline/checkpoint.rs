//! Binary checkpoint container.
//!
//! Layout: 4-byte magic, `u32` format version, `u8` kind, `u64` payload
//! length, SHA-256 of the payload, then the bincode payload. Files are
//! written to a temporary sibling and renamed into place.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HNAS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 1 + 8 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Supernet = 1,
    Search = 2,
}

pub fn save_checkpoint<T: Serialize>(path: &Path, kind: CheckpointKind, value: &T) -> Result<()> {
    let payload = bincode::serialize(value).map_err(|e| Error::Serialization(e.to_string()))?;
    let mut bytes = Vec::with_capacity(HEADER + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.push(kind as u8);
    bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&Sha256::digest(&payload));
    bytes.extend_from_slice(&payload);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, kind: CheckpointKind) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::UnsupportedCheckpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedCheckpoint(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    if bytes[8] != kind as u8 {
        return Err(Error::UnsupportedCheckpoint(format!("checkpoint kind {} where {kind:?} was expected", bytes[8])));
    }
    let len = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER..];
    if payload.len() != len || Sha256::digest(payload).as_slice() != &bytes[17..HEADER] {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    bincode::deserialize(payload).map_err(|e| Error::Serialization(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        let v = (vec![1.5f64, -0.0, f64::MIN_POSITIVE], "abc".to_string());
        save_checkpoint(&p, CheckpointKind::Search, &v).unwrap();
        assert_eq!(load_checkpoint::<(Vec<f64>, String)>(&p, CheckpointKind::Search).unwrap(), v);
        assert!(matches!(
            load_checkpoint::<(Vec<f64>, String)>(&p, CheckpointKind::Supernet),
            Err(Error::UnsupportedCheckpoint(_))
        ));

        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint::<(Vec<f64>, String)>(&p, CheckpointKind::Search), Err(Error::Checksum(_))));

        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        fs::write(&p, &flipped).unwrap();
        assert!(matches!(load_checkpoint::<(Vec<f64>, String)>(&p, CheckpointKind::Search), Err(Error::Checksum(_))));

        let mut old = bytes;
        old[4] = 9;
        fs::write(&p, &old).unwrap();
        assert!(matches!(load_checkpoint::<(Vec<f64>, String)>(&p, CheckpointKind::Search), Err(Error::UnsupportedCheckpoint(_))));
    }
}
