use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalMode, PredictionSet};
use crate::boxmodel::{read_archive, write_archive, Variant};

pub const PREDICTIONS_FORMAT: &str = "boxtip-predictions/1";

/// `predictions.json`: describes a directory of per-sample trajectory
/// archives under `samples/NNNNN/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionManifest {
    pub format: String,
    pub model: String,
    pub loss: String,
    pub mode: EvalMode,
    pub variant: Variant,
    pub history: usize,
    pub horizon: usize,
    pub samples: Vec<String>,
}

fn sample_dir(dir: &Path, k: usize) -> std::path::PathBuf {
    dir.join("samples").join(format!("{k:05}"))
}

pub fn export_predictions(dir: &Path, set: &PredictionSet) -> Result<(), EvalError> {
    if set.samples.len() != set.rollouts.len() {
        return Err(EvalError::LengthMismatch(
            set.samples.len(),
            set.rollouts.len(),
        ));
    }
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let manifest = PredictionManifest {
        format: PREDICTIONS_FORMAT.to_string(),
        model: set.model.clone(),
        loss: set.loss.clone(),
        mode: set.mode,
        variant: set.variant,
        history: set.history,
        horizon: set.horizon,
        samples: set.samples.clone(),
    };
    let path = dir.join("predictions.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| EvalError::Manifest {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text).map_err(|source| EvalError::Io { path, source })?;
    for (k, r) in set.rollouts.iter().enumerate() {
        write_archive(&sample_dir(dir, k), r)?;
    }
    Ok(())
}

/// Reads a prediction directory written by [`export_predictions`] or by an
/// external model following the same layout.
pub fn ingest_external_predictions(dir: &Path) -> Result<PredictionSet, EvalError> {
    let path = dir.join("predictions.json");
    let text = fs::read_to_string(&path).map_err(|source| EvalError::Io {
        path: path.clone(),
        source,
    })?;
    let m: PredictionManifest =
        serde_json::from_str(&text).map_err(|source| EvalError::Manifest {
            path: path.clone(),
            source,
        })?;
    if m.format != PREDICTIONS_FORMAT {
        return Err(EvalError::Mismatch(format!(
            "format '{}' is not '{PREDICTIONS_FORMAT}'",
            m.format
        )));
    }
    if m.horizon == 0 || m.history == 0 {
        return Err(EvalError::Mismatch(
            "history and horizon must be positive".into(),
        ));
    }
    let rollouts = (0..m.samples.len())
        .map(|k| {
            let t = read_archive(&sample_dir(dir, k))?;
            if t.variant != m.variant {
                return Err(EvalError::Mismatch(format!(
                    "sample '{}' is a {} trajectory in a {} prediction set",
                    m.samples[k], t.variant, m.variant
                )));
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(PredictionSet {
        model: m.model,
        loss: m.loss,
        mode: m.mode,
        variant: m.variant,
        history: m.history,
        horizon: m.horizon,
        samples: m.samples,
        rollouts,
    })
}
