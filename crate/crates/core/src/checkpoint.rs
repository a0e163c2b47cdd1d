//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `LIFTCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! tensor as consecutive little-endian `f64` values. The header carries the
//! network config, the run config, a tensor directory (name, shape, offset in
//! values) and a SHA-256 fingerprint of the weights and statistics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::NormStats;
use crate::model::{Network, NetworkConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LIFTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointStatus {
    Complete,
    /// Written when training aborted; weights are from the last finite step.
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub status: CheckpointStatus,
    pub epoch: usize,
    pub step: u64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: (usize, usize),
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    run: serde_json::Value,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub stats: NormStats,
    /// The resolved run configuration the model was trained under.
    pub run: serde_json::Value,
    pub meta: CheckpointMeta,
}

fn all_tensors<'a>(net: &'a Network, stats: &'a NormStats) -> Vec<(String, (usize, usize), &'a [f64])> {
    let mut t = net.state_tensors();
    for (name, v) in [
        ("stats.mean2d", &stats.mean2d),
        ("stats.std2d", &stats.std2d),
        ("stats.mean3d", &stats.mean3d),
        ("stats.std3d", &stats.std3d),
    ] {
        t.push((name.to_string(), (1, v.len()), v.as_slice()));
    }
    t
}

/// Hex SHA-256 (first 16 bytes) over the network config and every tensor,
/// statistics included.
pub fn fingerprint(net: &Network, stats: &NormStats) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(net.config()).expect("config serializes"));
    for (name, shape, values) in all_tensors(net, stats) {
        h.update(name.as_bytes());
        h.update((shape.0 as u64).to_le_bytes());
        h.update((shape.1 as u64).to_le_bytes());
        for v in values {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a checkpoint atomically (temporary file, then rename) and returns
/// its fingerprint.
pub fn save_checkpoint(
    path: &Path,
    net: &Network,
    stats: &NormStats,
    run: &serde_json::Value,
    status: CheckpointStatus,
    epoch: usize,
    step: u64,
) -> Result<String> {
    let tensors = all_tensors(net, stats);
    let mut dir = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, shape, values) in &tensors {
        dir.push(TensorEntry {
            name: name.clone(),
            shape: *shape,
            offset,
        });
        offset += values.len();
    }
    let fp = fingerprint(net, stats);
    let header = Header {
        network: net.config().clone(),
        run: run.clone(),
        meta: CheckpointMeta {
            status,
            epoch,
            step,
            fingerprint: fp.clone(),
        },
        tensors: dir,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(20 + header.len() + 8 * offset);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, _, values) in &tensors {
        for v in *values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))?;
    Ok(fp)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Schema(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version > CHECKPOINT_VERSION {
        return Err(bad(&format!(
            "checkpoint version {version} is newer than supported version {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(20..20usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
    let data = &bytes[20 + hlen..];
    if data.len() % 8 != 0 {
        return Err(bad("tensor data is not a whole number of f64 values"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let lookup = |name: &str, shape: (usize, usize)| -> Result<&[f64]> {
        let e = header
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| bad(&format!("missing tensor {name}")))?;
        if e.shape != shape {
            return Err(bad(&format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                e.shape
            )));
        }
        values
            .get(e.offset..e.offset + shape.0 * shape.1)
            .ok_or_else(|| bad(&format!("tensor {name} runs past the end of the file")))
    };

    let mut network = Network::zeros(header.network.clone()).map_err(|e| bad(&e.to_string()))?;
    for (name, shape, dst) in network.state_tensors_mut() {
        dst.copy_from_slice(lookup(&name, shape)?);
    }
    let (i, o) = (header.network.input_dim(), header.network.output_dim());
    let stats = NormStats {
        mean2d: lookup("stats.mean2d", (1, i))?.to_vec(),
        std2d: lookup("stats.std2d", (1, i))?.to_vec(),
        mean3d: lookup("stats.mean3d", (1, o))?.to_vec(),
        std3d: lookup("stats.std3d", (1, o))?.to_vec(),
    };
    if fingerprint(&network, &stats) != header.meta.fingerprint {
        return Err(bad("fingerprint does not match the stored tensors (corrupted file?)"));
    }
    Ok(Checkpoint {
        network,
        stats,
        run: header.run,
        meta: header.meta,
    })
}
