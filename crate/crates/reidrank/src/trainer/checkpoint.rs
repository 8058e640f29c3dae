//! Checkpoint container: a JSON header describing the run plus raw
//! little-endian f64 tensor blobs, sealed by a trailing SHA-256 so partial
//! or corrupted writes are detected on load. Double-precision parameters
//! round-trip bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{init_params, NetConfig, ParamSet};
use crate::trainer::metrics::TrainMetrics;
use crate::trainer::TrainConfig;

const MAGIC: &[u8; 4] = b"RRCK";
const VERSION: u32 = 1;

/// Everything needed to resume a run: parameters (with running statistics),
/// counters, the training configuration, and the metrics recorded so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub completed_epochs: u64,
    pub completed_iterations: u64,
    pub train_config: TrainConfig,
    pub metrics: TrainMetrics,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    net_config: NetConfig,
    completed_epochs: u64,
    completed_iterations: u64,
    train_config: TrainConfig,
    metrics: TrainMetrics,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    checkpoint.params.for_each_tensor(|name, tensor| {
        entries.push(TensorEntry {
            name,
            shape: tensor.shape().to_vec(),
            offset,
            len: tensor.len(),
        });
        for v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += tensor.len();
    });

    let header = Header {
        schema_version: VERSION,
        net_config: checkpoint.params.config.clone(),
        completed_epochs: checkpoint.completed_epochs,
        completed_iterations: checkpoint.completed_iterations,
        train_config: checkpoint.train_config.clone(),
        metrics: checkpoint.metrics.clone(),
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut bytes = Vec::with_capacity(16 + header_json.len() + blob.len() + 32);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&blob);
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);

    fs::write(path, &bytes).map_err(|e| Error::io(path.display(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display(), e))?;
    if bytes.len() < 16 + 32 {
        return Err(Error::Checkpoint(format!("file too short ({} bytes)", bytes.len())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let expect = Sha256::digest(body);
    if digest != expect.as_slice() {
        return Err(Error::Checkpoint("trailing checksum mismatch: file is corrupt or truncated".into()));
    }
    if &body[0..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    if 16 + header_len > body.len() {
        return Err(Error::Checkpoint("header length exceeds file".into()));
    }
    let header: Header = serde_json::from_slice(&body[16..16 + header_len])
        .map_err(|e| Error::Checkpoint(format!("header parse failure: {e}")))?;
    let blob = &body[16 + header_len..];

    // Materialize a parameter set with the stored topology, then overwrite
    // every tensor from the blob.
    let mut params = init_params(&header.net_config, 0)?;
    let mut expected: std::collections::HashMap<String, (Vec<usize>, usize, usize)> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), (t.shape.clone(), t.offset, t.len)))
        .collect();
    let mut failure: Option<String> = None;
    params.for_each_tensor_mut(|name, tensor| {
        if failure.is_some() {
            return;
        }
        let Some((shape, offset, len)) = expected.remove(&name) else {
            failure = Some(format!("checkpoint is missing tensor {name}"));
            return;
        };
        if shape != tensor.shape() || len != tensor.len() {
            failure = Some(format!(
                "tensor {name}: stored shape {shape:?} does not match configured {:?}",
                tensor.shape()
            ));
            return;
        }
        let byte_start = offset * 8;
        let byte_end = byte_start + len * 8;
        if byte_end > blob.len() {
            failure = Some(format!("tensor {name} extends past the end of the blob"));
            return;
        }
        for (i, chunk) in blob[byte_start..byte_end].chunks_exact(8).enumerate() {
            tensor.data_mut()[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    });
    if let Some(msg) = failure {
        return Err(Error::Checkpoint(msg));
    }
    if let Some(name) = expected.keys().next() {
        return Err(Error::Checkpoint(format!("checkpoint has unexpected tensor {name}")));
    }

    Ok(Checkpoint {
        params,
        completed_epochs: header.completed_epochs,
        completed_iterations: header.completed_iterations,
        train_config: header.train_config,
        metrics: header.metrics,
    })
}
