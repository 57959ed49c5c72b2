//! On-disk trajectory archives: `manifest.json` plus little-endian f64
//! row-major `channels.bin` and `noise.bin`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{channel_names, BoxParams, NoiseSeq, Source, Trajectory, Variant};

pub const ARCHIVE_FORMAT: &str = "boxtip-trajectory/1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: expected {expected} bytes, found {found} (truncated or padded)")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("manifest mismatch: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryManifest {
    pub format: String,
    pub source: Source,
    pub dt_years: f64,
    pub variant: Variant,
    pub channel_names: Vec<String>,
    pub n_steps: usize,
    pub n_fluxes: usize,
    pub params: BoxParams,
    pub seed: u64,
    pub sigma: f64,
    pub collapse_time_atlantic: Option<f64>,
    pub collapse_time_pacific: Option<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_f64s(
    path: &Path,
    values: impl Iterator<Item = f64>,
) -> Result<(), ArchiveError> {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

pub(crate) fn read_f64s(path: &Path, expected_len: usize) -> Result<Vec<f64>, ArchiveError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected_len * 8 {
        return Err(ArchiveError::Truncated {
            path: path.to_path_buf(),
            expected: expected_len * 8,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_archive(dir: &Path, traj: &Trajectory) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = TrajectoryManifest {
        format: ARCHIVE_FORMAT.to_string(),
        source: traj.source,
        dt_years: traj.dt_years,
        variant: traj.variant,
        channel_names: traj.channel_names.clone(),
        n_steps: traj.n_steps(),
        n_fluxes: traj.noise.n_fluxes(),
        params: traj.params.clone(),
        seed: traj.noise.seed,
        sigma: traj.noise.sigma,
        collapse_time_atlantic: traj.collapse_time_atlantic,
        collapse_time_pacific: traj.collapse_time_pacific,
    };
    let path = dir.join("manifest.json");
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|source| ArchiveError::Manifest {
            path: path.clone(),
            source,
        })?;
    fs::write(&path, text).map_err(io_err(&path))?;
    write_f64s(&dir.join("channels.bin"), traj.channels.iter().copied())?;
    write_f64s(&dir.join("noise.bin"), traj.noise.values.iter().copied())?;
    Ok(())
}

pub fn read_archive(dir: &Path) -> Result<Trajectory, ArchiveError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: TrajectoryManifest =
        serde_json::from_str(&text).map_err(|source| ArchiveError::Manifest {
            path: path.clone(),
            source,
        })?;
    if m.format != ARCHIVE_FORMAT {
        return Err(ArchiveError::Mismatch(format!(
            "format '{}' is not '{ARCHIVE_FORMAT}'",
            m.format
        )));
    }
    if m.channel_names != channel_names(m.variant) {
        return Err(ArchiveError::Mismatch(format!(
            "channel layout {:?} does not match the {} layout",
            m.channel_names, m.variant
        )));
    }
    if m.params.variant != m.variant || m.n_fluxes != m.variant.n_fluxes() {
        return Err(ArchiveError::Mismatch(
            "variant disagrees with params or flux count".into(),
        ));
    }
    let nc = m.channel_names.len();
    let ch = read_f64s(&dir.join("channels.bin"), m.n_steps * nc)?;
    let nz = read_f64s(&dir.join("noise.bin"), m.n_steps * m.n_fluxes)?;
    let channels = Array2::from_shape_vec((m.n_steps, nc), ch).expect("length checked");
    let values = Array2::from_shape_vec((m.n_steps, m.n_fluxes), nz).expect("length checked");
    Ok(Trajectory {
        dt_years: m.dt_years,
        variant: m.variant,
        channel_names: m.channel_names,
        channels,
        noise: NoiseSeq {
            seed: m.seed,
            sigma: m.sigma,
            values,
        },
        params: m.params,
        collapse_time_atlantic: m.collapse_time_atlantic,
        collapse_time_pacific: m.collapse_time_pacific,
        source: m.source,
    })
}
