//! Binary checkpoint: magic bytes, little-endian `u32` format version,
//! `u64` descriptor length, a JSON architecture descriptor, then every
//! parameter as little-endian `f64` in declaration order.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{Network, NetworkSpec, Param};

pub const MAGIC: &[u8; 8] = b"CXRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
/// Upper bound on the descriptor size accepted when loading.
const MAX_DESCRIPTOR: u64 = 16 << 20;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("format version mismatch: found {found}, expected {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    spec: NetworkSpec,
    frozen: BTreeSet<String>,
    params: Vec<(String, Vec<usize>)>,
}

pub fn write_checkpoint(net: &Network, mut w: impl Write) -> Result<(), CheckpointError> {
    let desc = Descriptor {
        spec: net.spec().clone(),
        frozen: net.frozen_layers().clone(),
        params: net.params.iter().map(|p| (p.name.clone(), p.shape.clone())).collect(),
    };
    let json = serde_json::to_vec(&desc).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(net.param_count() * 8);
    for p in &net.params {
        for v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Network, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Malformed("bad magic bytes".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let found = u32::from_le_bytes(word);
    if found != FORMAT_VERSION {
        return Err(CheckpointError::FormatVersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_DESCRIPTOR {
        return Err(CheckpointError::Malformed(format!("descriptor of {len} bytes")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let desc: Descriptor = serde_json::from_slice(&json).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let mut params = Vec::with_capacity(desc.params.len());
    for (name, shape) in desc.params {
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.push(Param { name, shape, data });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", rest.len())));
    }
    Network::from_params(desc.spec, params, desc.frozen).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path)?;
    write_checkpoint(net, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network, CheckpointError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
