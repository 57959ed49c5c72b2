//! Standardised, windowed supervised examples cut from trajectories.

mod files;
mod standardize;

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxmodel::{
    read_archive, simulate, split_seed, write_archive, ArchiveError, NoiseSeq, SimError,
    Trajectory, Variant,
};
use crate::ensemble::{sample_param_sets, ParamBounds};

pub use files::{load_dataset, read_examples, write_dataset, write_examples, DATASET_FORMAT};
pub use standardize::{fit_standardizer, Standardizer};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("channel '{0}' is constant over the training set")]
    ConstantChannel(String),
    #[error("no training trajectories")]
    NoTrajectories,
    #[error("trajectory has {have} steps, needs at least {need}")]
    TooShort { have: usize, need: usize },
    #[error("window geometry invalid: {0}")]
    Geometry(String),
    #[error("not enough trajectories: {0}")]
    Insufficient(String),
    #[error("split '{0}' is empty after filtering")]
    EmptySplit(&'static str),
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Source of the decoder's known covariates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Period-4 sinusoidal encoding of the step index.
    Deterministic,
    /// Realised freshwater perturbations.
    Stochastic,
}

impl Mode {
    pub fn n_known(self, variant: Variant) -> usize {
        match self {
            Mode::Deterministic => 2,
            Mode::Stochastic => variant.n_fluxes(),
        }
    }

    pub fn known_names(self, variant: Variant) -> Vec<String> {
        match self {
            Mode::Deterministic => vec!["time_sin".into(), "time_cos".into()],
            Mode::Stochastic => variant
                .flux_names()
                .iter()
                .map(|f| format!("noise_{f}"))
                .collect(),
        }
    }
}

/// `(sin 2πk/4, cos 2πk/4)` for step index `k`.
pub fn time_encoding(step: usize) -> [f64; 2] {
    // Reduce first so large step counts stay exact.
    let phase = 2.0 * PI * (step % 4) as f64 / 4.0;
    [phase.sin(), phase.cos()]
}

/// Raw known-covariate rows `start..start + len` of a trajectory.
pub fn known_rows(traj: &Trajectory, mode: Mode, start: usize, len: usize) -> Array2<f64> {
    known_from_noise(&traj.noise, mode, start, len)
}

/// Raw known-covariate rows `start..start + len` driven by `noise`.
pub fn known_from_noise(noise: &NoiseSeq, mode: Mode, start: usize, len: usize) -> Array2<f64> {
    match mode {
        Mode::Deterministic => {
            Array2::from_shape_fn((len, 2), |(i, j)| time_encoding(start + i)[j])
        }
        Mode::Stochastic => noise.values.slice(s![start..start + len, ..]).to_owned(),
    }
}

/// One supervised window, all parts standardised.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedExample {
    /// `[H × n_channels]`.
    pub history: Array2<f64>,
    /// `[H × n_known]`.
    pub history_known: Array2<f64>,
    /// `[L × n_known]`.
    pub future_known: Array2<f64>,
    /// `[L × n_targets]`; targets are all channels.
    pub target: Array2<f64>,
    pub statics: Array1<f64>,
    pub trajectory: usize,
    pub offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub history: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowGeometry {
    /// Window sizes used for each variant; stride defaults to the horizon.
    pub fn for_variant(variant: Variant) -> Self {
        let (h, l) = match variant {
            Variant::FourBox => (100, 50),
            Variant::SixBox => (200, 100),
        };
        WindowGeometry {
            history: h,
            horizon: l,
            stride: l,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.history == 0 || self.horizon == 0 || self.stride == 0 {
            return Err(DataError::Geometry(format!("{self:?} has a zero entry")));
        }
        Ok(())
    }

    pub fn n_windows(&self, n_steps: usize) -> usize {
        let span = self.history + self.horizon;
        if n_steps < span {
            0
        } else {
            (n_steps - span) / self.stride + 1
        }
    }
}

pub fn window_split(
    traj: &Trajectory,
    trajectory: usize,
    std: &Standardizer,
    geom: WindowGeometry,
    mode: Mode,
) -> Result<Vec<WindowedExample>, DataError> {
    geom.validate()?;
    let (h, l) = (geom.history, geom.horizon);
    let n = traj.n_steps();
    if n < h + l {
        return Err(DataError::TooShort {
            have: n,
            need: h + l,
        });
    }
    if traj.channel_names != std.channel_names {
        return Err(DataError::Layout(
            "trajectory channels differ from the standardizer".into(),
        ));
    }
    let channels = std.transform_channels(traj.channels.view());
    let known = std.transform_known(known_rows(traj, mode, 0, n).view());
    let statics = std.transform_statics(&traj.params)?;
    Ok((0..geom.n_windows(n))
        .map(|w| {
            let o = w * geom.stride;
            WindowedExample {
                history: channels.slice(s![o..o + h, ..]).to_owned(),
                history_known: known.slice(s![o..o + h, ..]).to_owned(),
                future_known: known.slice(s![o + h..o + h + l, ..]).to_owned(),
                target: channels.slice(s![o + h..o + h + l, ..]).to_owned(),
                statics: statics.clone(),
                trajectory,
                offset: o,
            }
        })
        .collect())
}

/// How trajectories are admitted to the splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollapseFilter {
    All,
    /// Only trajectories with at least one collapse.
    CollapseOnly,
    /// Equal numbers of collapsing and non-collapsing trajectories per split.
    Balanced,
}

/// Trajectory counts per split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Converts fractions of `n` to counts; fractions must sum to one.
    pub fn from_fractions(n: usize, train: f64, val: f64, test: f64) -> Result<Self, DataError> {
        if (train + val + test - 1.0).abs() > 1e-9 || [train, val, test].iter().any(|f| *f < 0.0) {
            return Err(DataError::Geometry(format!(
                "split fractions {train} + {val} + {test} do not sum to 1"
            )));
        }
        let tr = (train * n as f64).round() as usize;
        let va = (val * n as f64).round() as usize;
        Ok(SplitSpec {
            train: tr,
            val: va,
            test: n.saturating_sub(tr + va),
        })
    }
}

/// Trajectory indices per split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns whole trajectories to splits so no trajectory leaks across them.
pub fn assign_splits(
    collapsed: &[bool],
    spec: SplitSpec,
    filter: CollapseFilter,
    seed: u64,
) -> Result<Splits, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..collapsed.len()).filter(|&i| collapsed[i]).collect();
    let mut neg: Vec<usize> = (0..collapsed.len()).filter(|&i| !collapsed[i]).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let sizes = [spec.train, spec.val, spec.test];
    let mut out: [Vec<usize>; 3] = Default::default();
    match filter {
        CollapseFilter::All => {
            let mut all: Vec<usize> = (0..collapsed.len()).collect();
            all.shuffle(&mut rng);
            if all.len() < spec.total() {
                return Err(DataError::Insufficient(format!(
                    "{} trajectories for {} slots",
                    all.len(),
                    spec.total()
                )));
            }
            let mut it = all.into_iter();
            for (k, n) in sizes.iter().enumerate() {
                out[k] = it.by_ref().take(*n).collect();
            }
        }
        CollapseFilter::CollapseOnly => {
            let mut it = pos.into_iter();
            for (k, n) in sizes.iter().enumerate() {
                out[k] = it.by_ref().take(*n).collect();
            }
            if out[0].is_empty() {
                return Err(DataError::EmptySplit("train"));
            }
        }
        CollapseFilter::Balanced => {
            let need_pos: usize = sizes.iter().map(|n| n.div_ceil(2)).sum();
            let need_neg: usize = sizes.iter().map(|n| n / 2).sum();
            if pos.len() < need_pos || neg.len() < need_neg {
                return Err(DataError::Insufficient(format!(
                    "balanced splits need {need_pos} collapsing and {need_neg} non-collapsing, have {} and {}",
                    pos.len(),
                    neg.len()
                )));
            }
            let (mut p, mut q) = (pos.into_iter(), neg.into_iter());
            for (k, n) in sizes.iter().enumerate() {
                let mut part: Vec<usize> = p.by_ref().take(n.div_ceil(2)).collect();
                part.extend(q.by_ref().take(n / 2));
                part.sort_unstable();
                out[k] = part;
            }
        }
    }
    let [train, val, test] = out;
    Ok(Splits { train, val, test })
}

/// Samples `count` parameter sets from `bounds` and simulates each with its
/// own noise seed. Sampling is sequential, simulation parallel.
pub fn generate_trajectories(
    bounds: &ParamBounds,
    count: usize,
    sigma: f64,
    base_seed: u64,
    n_steps: usize,
) -> Result<Vec<Result<Trajectory, SimError>>, SimError> {
    let params = sample_param_sets(bounds, count)?;
    let nf = bounds.variant.n_fluxes();
    Ok(params
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            simulate(
                p,
                &NoiseSeq::generate(split_seed(base_seed, k as u64), sigma, n_steps, nf),
                n_steps,
            )
        })
        .collect())
}

/// Archive directory name of trajectory `k`.
pub fn trajectory_name(k: usize) -> String {
    format!("traj{k:05}")
}

/// Writes each trajectory to `dir/<name>/`.
pub fn write_trajectories(
    dir: &Path,
    names: &[String],
    trajs: &[Trajectory],
) -> Result<(), DataError> {
    names
        .par_iter()
        .zip(trajs)
        .try_for_each(|(n, t)| write_archive(&dir.join(n), t))?;
    Ok(())
}

/// Reads `dir/<name>/` for every name, in order.
pub fn read_trajectories(dir: &Path, names: &[String]) -> Result<Vec<Trajectory>, DataError> {
    Ok(names
        .par_iter()
        .map(|n| read_archive(&dir.join(n)))
        .collect::<Result<_, _>>()?)
}

/// Dataset header: geometry, layout, standardizer constants and splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub variant: Variant,
    pub mode: Mode,
    pub geometry: WindowGeometry,
    pub channel_names: Vec<String>,
    pub known_names: Vec<String>,
    pub static_names: Vec<String>,
    pub standardizer: Standardizer,
    pub filter: CollapseFilter,
    /// Trajectory identifiers (archive directory names), indexed by split lists.
    pub trajectories: Vec<String>,
    pub splits: Splits,
    pub n_examples: [usize; 3],
}

impl DatasetManifest {
    pub fn n_known(&self) -> usize {
        self.known_names.len()
    }

    pub fn n_statics(&self) -> usize {
        self.static_names.len()
    }

    /// Length of one flattened example record, see [`write_examples`].
    pub fn record_len(&self) -> usize {
        let (h, l) = (self.geometry.history, self.geometry.horizon);
        let (c, k) = (self.channel_names.len(), self.n_known());
        h * c + h * k + l * k + l * c + self.n_statics() + 2
    }
}

/// Examples of each split plus the manifest that describes them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<WindowedExample>,
    pub val: Vec<WindowedExample>,
    pub test: Vec<WindowedExample>,
}

/// Fits the standardizer on the train split and windows every split.
pub fn build_dataset(
    names: &[String],
    trajectories: &[Trajectory],
    static_names: &[String],
    splits: Splits,
    geom: WindowGeometry,
    mode: Mode,
    filter: CollapseFilter,
) -> Result<Dataset, DataError> {
    let first = trajectories.first().ok_or(DataError::NoTrajectories)?;
    let variant = first.variant;
    if splits.train.is_empty() {
        return Err(DataError::EmptySplit("train"));
    }
    let train_refs: Vec<&Trajectory> = splits.train.iter().map(|&i| &trajectories[i]).collect();
    let std = fit_standardizer(&train_refs, static_names, mode)?;
    let window = |ids: &[usize]| -> Result<Vec<WindowedExample>, DataError> {
        let per: Vec<Vec<WindowedExample>> = ids
            .par_iter()
            .map(|&i| window_split(&trajectories[i], i, &std, geom, mode))
            .collect::<Result<_, _>>()?;
        Ok(per.into_iter().flatten().collect())
    };
    let train = window(&splits.train)?;
    let val = window(&splits.val)?;
    let test = window(&splits.test)?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.to_string(),
        variant,
        mode,
        geometry: geom,
        channel_names: first.channel_names.clone(),
        known_names: mode.known_names(variant),
        static_names: static_names.to_vec(),
        standardizer: std,
        filter,
        trajectories: names.to_vec(),
        splits,
        n_examples: [train.len(), val.len(), test.len()],
    };
    Ok(Dataset {
        manifest,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxmodel::{defaults, DEFAULT_SIGMA};

    fn traj(seed: u64, n: usize) -> Trajectory {
        let p = defaults::four_box();
        simulate(&p, &NoiseSeq::generate(seed, DEFAULT_SIGMA, n, 2), n).unwrap()
    }

    #[test]
    fn window_counts() {
        let g = WindowGeometry {
            history: 200,
            horizon: 100,
            stride: 100,
        };
        assert_eq!(g.n_windows(4000), 38);
        assert_eq!(g.n_windows(300), 1);
        assert_eq!(g.n_windows(299), 0);
    }

    #[test]
    fn encoding_at_zero() {
        assert_eq!(time_encoding(0), [0.0, 1.0]);
        let e = time_encoding(1);
        assert!((e[0] - 1.0).abs() < 1e-15 && e[1].abs() < 1e-15);
    }

    #[test]
    fn windows_round_trip_to_raw_rows() {
        let t = traj(1, 400);
        let std = fit_standardizer(&[&t, &traj(2, 400)], &[], Mode::Stochastic).unwrap();
        let g = WindowGeometry {
            history: 100,
            horizon: 50,
            stride: 50,
        };
        let ex = window_split(&t, 0, &std, g, Mode::Stochastic).unwrap();
        assert_eq!(ex.len(), 6);
        for e in &ex {
            let raw = std.inverse_channels(e.target.view());
            let truth = t.channels.slice(s![e.offset + 100..e.offset + 150, ..]);
            let err = (&raw - &truth).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            assert!(err < 1e-10, "{err}");
            let noise = std.inverse_known(e.future_known.view());
            let truth = t.noise.values.slice(s![e.offset + 100..e.offset + 150, ..]);
            assert!((&noise - &truth).iter().all(|d| d.abs() < 1e-6));
        }
        let short = traj(3, 120);
        assert!(matches!(
            window_split(&short, 0, &std, g, Mode::Stochastic),
            Err(DataError::TooShort { .. })
        ));
    }

    #[test]
    fn balanced_splits_are_disjoint() {
        let collapsed: Vec<bool> = (0..100).map(|i| i % 3 == 0).collect();
        let spec = SplitSpec {
            train: 40,
            val: 10,
            test: 10,
        };
        let s = assign_splits(&collapsed, spec, CollapseFilter::Balanced, 7).unwrap();
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        for part in [&s.train, &s.val, &s.test] {
            let pos = part.iter().filter(|&&i| collapsed[i]).count();
            assert_eq!(pos * 2, part.len());
        }
        let none = vec![false; 50];
        assert!(matches!(
            assign_splits(&none, spec, CollapseFilter::CollapseOnly, 0),
            Err(DataError::EmptySplit("train"))
        ));
        assert!(SplitSpec::from_fractions(10, 0.5, 0.3, 0.3).is_err());
        assert_eq!(
            SplitSpec::from_fractions(280, 200.0 / 280.0, 40.0 / 280.0, 40.0 / 280.0).unwrap(),
            SplitSpec {
                train: 200,
                val: 40,
                test: 40
            }
        );
    }
}
