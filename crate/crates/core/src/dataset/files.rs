//! `dataset.json` plus one `<split>.bin` of flat example records per split.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{DataError, Dataset, DatasetManifest, WindowedExample};
use crate::boxmodel::{read_f64s, write_f64s, ArchiveError};

pub const DATASET_FORMAT: &str = "boxtip-dataset/1";

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn manifest_err(path: &Path, source: serde_json::Error) -> DataError {
    DataError::Archive(ArchiveError::Manifest {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Archive(ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Record layout: history, history_known, future_known, target (all
/// row-major), statics, trajectory index, offset.
pub fn write_examples(path: &Path, examples: &[WindowedExample]) -> Result<(), DataError> {
    let values = examples.iter().flat_map(|e| {
        e.history
            .iter()
            .chain(e.history_known.iter())
            .chain(e.future_known.iter())
            .chain(e.target.iter())
            .chain(e.statics.iter())
            .copied()
            .chain([e.trajectory as f64, e.offset as f64])
    });
    Ok(write_f64s(path, values)?)
}

pub fn read_examples(
    path: &Path,
    m: &DatasetManifest,
    count: usize,
) -> Result<Vec<WindowedExample>, DataError> {
    let rec = m.record_len();
    let flat = read_f64s(path, rec * count)?;
    let (h, l) = (m.geometry.history, m.geometry.horizon);
    let (c, k, s) = (m.channel_names.len(), m.n_known(), m.n_statics());
    Ok(flat
        .chunks_exact(rec)
        .map(|r| {
            let mut at = 0;
            let mut take = |n: usize| {
                let part = &r[at..at + n];
                at += n;
                part.to_vec()
            };
            let mat = |v: Vec<f64>, rows: usize, cols: usize| {
                Array2::from_shape_vec((rows, cols), v).expect("record layout")
            };
            let history = mat(take(h * c), h, c);
            let history_known = mat(take(h * k), h, k);
            let future_known = mat(take(l * k), l, k);
            let target = mat(take(l * c), l, c);
            let statics = Array1::from(take(s));
            let tail = take(2);
            WindowedExample {
                history,
                history_known,
                future_known,
                target,
                statics,
                trajectory: tail[0] as usize,
                offset: tail[1] as usize,
            }
        })
        .collect())
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&ds.manifest).map_err(|e| manifest_err(&path, e))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    for (name, ex) in SPLITS.iter().zip([&ds.train, &ds.val, &ds.test]) {
        write_examples(&dir.join(format!("{name}.bin")), ex)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let path = dir.join("dataset.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| manifest_err(&path, e))?;
    if manifest.format != DATASET_FORMAT {
        return Err(DataError::Layout(format!(
            "unsupported dataset format '{}'",
            manifest.format
        )));
    }
    let mut parts = Vec::with_capacity(3);
    for (k, name) in SPLITS.iter().enumerate() {
        parts.push(read_examples(
            &dir.join(format!("{name}.bin")),
            &manifest,
            manifest.n_examples[k],
        )?);
    }
    let test = parts.pop().expect("three splits");
    let val = parts.pop().expect("three splits");
    let train = parts.pop().expect("three splits");
    Ok(Dataset {
        manifest,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::boxmodel::{defaults, simulate, NoiseSeq};

    #[test]
    fn dataset_round_trip() {
        let trajs: Vec<Trajectory> = (0..4)
            .map(|k| {
                simulate(
                    &defaults::four_box(),
                    &NoiseSeq::generate(k, 1e5, 260, 2),
                    260,
                )
                .unwrap()
            })
            .map(|mut t| {
                t.params.m_ek += 1e5 * t.noise.seed as f64;
                t.params.fw_base[0] += 1e3 * t.noise.seed as f64;
                t
            })
            .collect();
        let statics = vec!["m_ek".to_string(), "fw_south".to_string()];
        let names: Vec<String> = (0..4).map(|k| format!("traj_{k}")).collect();
        let splits = Splits {
            train: vec![0, 1],
            val: vec![2],
            test: vec![3],
        };
        let geom = WindowGeometry {
            history: 100,
            horizon: 50,
            stride: 50,
        };
        let ds = build_dataset(
            &names,
            &trajs,
            &statics,
            splits,
            geom,
            Mode::Stochastic,
            CollapseFilter::All,
        )
        .unwrap();
        assert_eq!(ds.manifest.n_examples, [6, 3, 3]);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.train, ds.train);
        assert_eq!(back.test, ds.test);
    }
}
