use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const RUN_CONFIG: &str = "run_config.toml";
pub const ERROR_RECORD: &str = "error.json";

#[derive(Clone, Debug, Serialize)]
pub struct Versions {
    pub boxtip: &'static str,
    pub boxtip_cli: &'static str,
}

pub const VERSIONS: Versions = Versions {
    boxtip: boxtip::VERSION,
    boxtip_cli: env!("CARGO_PKG_VERSION"),
};

/// Written next to every command's artifacts. `run_config.toml` in the same
/// directory plus `rerun` reproduces the run.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub rerun: Vec<String>,
    pub config_sha256: String,
    pub seed: u64,
    pub profile: String,
    pub variant: String,
    pub workers: usize,
    pub versions: Versions,
    pub hardware: String,
    pub started_unix_s: u64,
    pub wall_seconds: f64,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorRecord {
    pub command: String,
    pub error: String,
    /// Outermost context first.
    pub chain: Vec<String>,
    pub config_sha256: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Writes the effective configuration and returns its hash.
pub fn write_config(dir: &Path, cfg: &RunConfig) -> Result<String> {
    let text = cfg.to_toml()?;
    let path = dir.join(RUN_CONFIG);
    std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    Ok(sha256_hex(text.as_bytes()))
}

/// Files and directories under `dir`, relative and sorted, without the
/// manifest itself.
pub fn list_artifacts(dir: &Path) -> Vec<String> {
    let mut out: Vec<String> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n != RUN_MANIFEST)
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
