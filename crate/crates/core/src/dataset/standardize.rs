use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{known_rows, DataError, Mode};
use crate::boxmodel::{BoxParams, Trajectory};

/// Train-set mean and population standard deviation per channel, per known
/// covariate and per static covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardizer {
    pub channel_names: Vec<String>,
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    pub known_mean: Vec<f64>,
    pub known_std: Vec<f64>,
    pub static_names: Vec<String>,
    pub static_mean: Vec<f64>,
    pub static_std: Vec<f64>,
}

fn moments(columns: &[Vec<f64>], names: &[String]) -> Result<(Vec<f64>, Vec<f64>), DataError> {
    let mut mean = Vec::with_capacity(columns.len());
    let mut std = Vec::with_capacity(columns.len());
    for (col, name) in columns.iter().zip(names) {
        let n = col.len() as f64;
        let m = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(DataError::ConstantChannel(name.clone()));
        }
        mean.push(m);
        std.push(sd);
    }
    Ok((mean, std))
}

fn columns(mats: &[ArrayView2<'_, f64>]) -> Vec<Vec<f64>> {
    let nc = mats[0].ncols();
    (0..nc)
        .map(|j| mats.iter().flat_map(|m| m.column(j).to_vec()).collect())
        .collect()
}

pub fn fit_standardizer(
    train: &[&Trajectory],
    static_names: &[String],
    mode: Mode,
) -> Result<Standardizer, DataError> {
    let first = train.first().ok_or(DataError::NoTrajectories)?;
    let channel_names = first.channel_names.clone();
    if train.iter().any(|t| t.channel_names != channel_names) {
        return Err(DataError::Layout(
            "mixed channel layouts in training set".into(),
        ));
    }
    let views: Vec<_> = train.iter().map(|t| t.channels.view()).collect();
    let (channel_mean, channel_std) = moments(&columns(&views), &channel_names)?;

    let (known_mean, known_std) = match mode {
        Mode::Deterministic => (vec![0.0; 2], vec![1.0; 2]),
        Mode::Stochastic => {
            let known: Vec<Array2<f64>> = train
                .iter()
                .map(|t| known_rows(t, mode, 0, t.n_steps()))
                .collect();
            let views: Vec<_> = known.iter().map(|k| k.view()).collect();
            let names = mode.known_names(first.variant);
            moments(&columns(&views), &names)?
        }
    };

    let statics: Vec<Vec<f64>> = train
        .iter()
        .map(|t| t.params.covariates(static_names))
        .collect::<Result<_, _>>()?;
    let static_cols: Vec<Vec<f64>> = (0..static_names.len())
        .map(|j| statics.iter().map(|row| row[j]).collect())
        .collect();
    let (static_mean, static_std) = moments(&static_cols, static_names)?;

    Ok(Standardizer {
        channel_names,
        channel_mean,
        channel_std,
        known_mean,
        known_std,
        static_names: static_names.to_vec(),
        static_mean,
        static_std,
    })
}

fn forward(x: ArrayView2<'_, f64>, mean: &[f64], std: &[f64]) -> Array2<f64> {
    let mut out = x.to_owned();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|v| (v - mean[j]) / std[j]);
    }
    out
}

fn backward(z: ArrayView2<'_, f64>, mean: &[f64], std: &[f64]) -> Array2<f64> {
    let mut out = z.to_owned();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|v| v * std[j] + mean[j]);
    }
    out
}

impl Standardizer {
    /// Zero mean, unit scale everywhere; used for toy models and stubs.
    pub fn identity(channel_names: &[String], n_known: usize, static_names: &[String]) -> Self {
        let n = channel_names.len();
        let s = static_names.len();
        Standardizer {
            channel_names: channel_names.to_vec(),
            channel_mean: vec![0.0; n],
            channel_std: vec![1.0; n],
            known_mean: vec![0.0; n_known],
            known_std: vec![1.0; n_known],
            static_names: static_names.to_vec(),
            static_mean: vec![0.0; s],
            static_std: vec![1.0; s],
        }
    }

    pub fn transform_channels(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        forward(x, &self.channel_mean, &self.channel_std)
    }

    pub fn inverse_channels(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        backward(z, &self.channel_mean, &self.channel_std)
    }

    pub fn transform_known(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        forward(x, &self.known_mean, &self.known_std)
    }

    pub fn inverse_known(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        backward(z, &self.known_mean, &self.known_std)
    }

    pub fn transform_statics(&self, params: &BoxParams) -> Result<Array1<f64>, DataError> {
        let raw = params.covariates(&self.static_names)?;
        Ok(raw
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.static_mean[j]) / self.static_std[j])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxmodel::{defaults, simulate, NoiseSeq, Trajectory};

    fn with_channels(ch: Array2<f64>) -> Trajectory {
        let p = defaults::four_box();
        let mut t = simulate(&p, &NoiseSeq::generate(1, 1e5, ch.nrows(), 2), ch.nrows()).unwrap();
        t.channels = ch;
        t
    }

    #[test]
    fn constant_channel_rejected_by_name() {
        let mut ch = Array2::from_shape_fn((4, 11), |(i, j)| (i * 11 + j) as f64);
        ch.column_mut(4).fill(5.0);
        let t = with_channels(ch);
        let err = fit_standardizer(&[&t], &[], Mode::Deterministic).unwrap_err();
        assert!(
            matches!(err, DataError::ConstantChannel(ref n) if n == "d_pyc"),
            "{err}"
        );
    }

    #[test]
    fn two_point_moments() {
        let (m, s) = moments(&[vec![0.0, 2.0]], &["x".into()]).unwrap();
        assert_eq!((m[0], s[0]), (1.0, 1.0));
    }

    #[test]
    fn round_trip_identity() {
        let ch = Array2::from_shape_fn((50, 11), |(i, j)| {
            ((i * 7 + j * 13) % 17) as f64 * 1e3 - 4e3
        });
        let t = with_channels(ch.clone());
        let s = fit_standardizer(&[&t], &[], Mode::Stochastic).unwrap();
        let z = s.transform_channels(ch.view());
        let col_mean = z.column(3).sum() / 50.0;
        assert!(col_mean.abs() < 1e-12);
        let again = s.transform_channels(s.inverse_channels(z.view()).view());
        assert!((&again - &z).iter().all(|d| d.abs() < 1e-12));
    }
}
