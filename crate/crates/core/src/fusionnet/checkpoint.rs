//! Single-file checkpoint archive: a JSON manifest (widths, topology and
//! config hashes, seed, epoch, tensor table) followed by raw
//! little-endian f64 tensor data in manifest order. Loading verifies
//! every width, every tensor shape, and the topology hash.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FusionNet, FEATURE_DIM, FUSED_DIM, GCN_OUT_DIM};
use crate::facegraph::NUM_CLASSES;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"EFCKPT1\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: u32,
    pub seed: u64,
    /// Epochs completed when the checkpoint was written.
    pub epoch: u32,
    pub topology_hash: String,
    pub config_hash: String,
    pub widths: BTreeMap<String, usize>,
    pub tensors: Vec<TensorInfo>,
}

fn expected_widths(model: &FusionNet) -> BTreeMap<String, usize> {
    BTreeMap::from([
        ("feature_dim".to_string(), FEATURE_DIM),
        ("gcn_out".to_string(), GCN_OUT_DIM),
        ("fused_dim".to_string(), FUSED_DIM),
        ("num_classes".to_string(), NUM_CLASSES),
        ("gcn_hidden".to_string(), model.config.gcn.hidden),
        ("cnn_bottleneck".to_string(), model.config.attn.cnn_bottleneck),
        ("gcn_bottleneck".to_string(), model.config.attn.gcn_bottleneck),
    ])
}

pub fn save_checkpoint(model: &FusionNet, path: &Path, seed: u64, epoch: u32) -> Result<()> {
    let params = model.params();
    let manifest = CheckpointManifest {
        format: 1,
        seed,
        epoch,
        topology_hash: model.topology_hash().to_string(),
        config_hash: model.config.content_hash(),
        widths: expected_widths(model),
        tensors: params
            .iter()
            .map(|p| TensorInfo {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let manifest_json = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Checkpoint { path: path.into(), message: e.to_string() })?;

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(manifest_json.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&manifest_json).map_err(io_err)?;
    for p in params {
        for v in p.value.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Loads parameter values into an already-constructed model, verifying
/// the manifest against it.
pub fn load_checkpoint(model: &mut FusionNet, path: &Path) -> Result<CheckpointManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let ck_err = |message: String| Error::Checkpoint { path: path.into(), message };

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(ck_err("bad magic bytes".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| Error::io(path, e))?;
    let manifest_len = u64::from_le_bytes(len) as usize;
    let mut manifest_json = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_json).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&manifest_json).map_err(|e| ck_err(format!("manifest: {e}")))?;

    if manifest.format != 1 {
        return Err(ck_err(format!("unsupported format {}", manifest.format)));
    }
    if manifest.topology_hash != model.topology_hash() {
        return Err(ck_err(format!(
            "topology hash mismatch: checkpoint {}, model {}",
            manifest.topology_hash,
            model.topology_hash()
        )));
    }
    let widths = expected_widths(model);
    if manifest.widths != widths {
        return Err(ck_err(format!(
            "width mismatch: checkpoint {:?}, model {:?}",
            manifest.widths, widths
        )));
    }

    let mut params = model.params_mut();
    if manifest.tensors.len() != params.len() {
        return Err(ck_err(format!(
            "tensor count mismatch: checkpoint {}, model {}",
            manifest.tensors.len(),
            params.len()
        )));
    }
    for (info, p) in manifest.tensors.iter().zip(params.iter_mut()) {
        if info.name != p.name {
            return Err(ck_err(format!(
                "tensor order mismatch: checkpoint '{}', model '{}'",
                info.name, p.name
            )));
        }
        if info.shape != p.value.shape() {
            return Err(ck_err(format!(
                "tensor '{}' shape mismatch: checkpoint {:?}, model {:?}",
                info.name,
                info.shape,
                p.value.shape()
            )));
        }
        let mut buf = [0u8; 8];
        for v in p.value.iter_mut() {
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    Ok(manifest)
}
