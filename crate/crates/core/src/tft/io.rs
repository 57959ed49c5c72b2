//! Model container: 8-byte magic, u32 version, u64 header length, JSON
//! header, then every parameter tensor as row-major little-endian f64 in
//! header order. The header carries a SHA-256 of the parameter bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{ModelMeta, TftModel};
use super::{TftConfig, TftError};

pub const MODEL_MAGIC: &[u8; 8] = b"BOXTIPM\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TftConfig,
    meta: ModelMeta,
    tensors: Vec<TensorInfo>,
    sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn param_bytes(model: &TftModel) -> Vec<u8> {
    model
        .params()
        .values()
        .iter()
        .flat_map(|v| v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>())
        .collect()
}

pub fn to_bytes(model: &TftModel) -> Result<Vec<u8>, TftError> {
    let data = param_bytes(model);
    let header = Header {
        config: model.config.clone(),
        meta: model.meta.clone(),
        tensors: model
            .params()
            .names()
            .iter()
            .zip(model.params().values())
            .map(|(n, v)| TensorInfo {
                name: n.clone(),
                rows: v.nrows(),
                cols: v.ncols(),
            })
            .collect(),
        sha256: hex(&Sha256::digest(&data)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| TftError::Container(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + data.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<TftModel, TftError> {
    if bytes.len() < 20 || &bytes[..8] != MODEL_MAGIC {
        return Err(TftError::Container("not a model container".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_VERSION {
        return Err(TftError::Version {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < len {
        return Err(TftError::Container("header truncated".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[..len]).map_err(|e| TftError::Container(e.to_string()))?;
    let data = &body[len..];
    if hex(&Sha256::digest(data)) != header.sha256 {
        return Err(TftError::Checksum);
    }
    let mut model = TftModel::new(header.config, header.meta)?;
    let names = model.params().names().to_vec();
    if names.len() != header.tensors.len() {
        return Err(TftError::Container(format!(
            "{} tensors stored, architecture has {}",
            header.tensors.len(),
            names.len()
        )));
    }
    let mut at = 0;
    for ((info, name), slot) in header
        .tensors
        .iter()
        .zip(&names)
        .zip(model.params_mut().values_mut())
    {
        if &info.name != name || (info.rows, info.cols) != slot.dim() {
            return Err(TftError::Container(format!(
                "tensor '{}' {}x{} does not match '{}' {:?}",
                info.name,
                info.rows,
                info.cols,
                name,
                slot.dim()
            )));
        }
        let n = info.rows * info.cols * 8;
        let chunk = data
            .get(at..at + n)
            .ok_or_else(|| TftError::Container("parameter data truncated".into()))?;
        let vals: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *slot = Array2::from_shape_vec((info.rows, info.cols), vals).expect("sized above");
        at += n;
    }
    if at != data.len() {
        return Err(TftError::Container("trailing parameter data".into()));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &TftModel) -> Result<(), TftError> {
    fs::write(path, to_bytes(model)?).map_err(|source| TftError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<TftModel, TftError> {
    let bytes = fs::read(path).map_err(|source| TftError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}

/// Loads a model and checks it was trained on `channel_names` in that order.
pub fn load_model_for(path: &Path, channel_names: &[String]) -> Result<TftModel, TftError> {
    let model = load_model(path)?;
    model.check_channels(channel_names)?;
    Ok(model)
}
