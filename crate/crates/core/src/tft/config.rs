use serde::{Deserialize, Serialize};

use super::TftError;
use crate::boxmodel::{n_channels, Variant};
use crate::dataset::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Pinball loss at the median.
    QuantileMedian,
    Sdtw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size architecture and optimiser settings.
    Paper,
    /// Small network that trains on one workstation in minutes.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TftConfig {
    pub d_model: usize,
    pub n_lstm_layers: usize,
    pub dropout: f64,
    pub history: usize,
    pub horizon: usize,
    pub n_channels: usize,
    pub n_known: usize,
    pub n_statics: usize,
    /// Targets are the leading `n_targets` channels.
    pub n_targets: usize,
    pub loss: LossKind,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Predict increments over the last observed row instead of levels.
    #[serde(default)]
    pub last_value_skip: bool,
    /// Caps optimiser steps per epoch; `None` sweeps the whole split.
    #[serde(default)]
    pub max_batches_per_epoch: Option<usize>,
}

impl TftConfig {
    pub fn preset(preset: Preset, variant: Variant, mode: Mode, n_statics: usize) -> Self {
        let n_channels = n_channels(variant);
        let n_known = mode.n_known(variant);
        let (history, horizon) = match variant {
            Variant::FourBox => (100, 50),
            Variant::SixBox => (200, 100),
        };
        let loss = match variant {
            Variant::FourBox => LossKind::QuantileMedian,
            Variant::SixBox => LossKind::Sdtw,
        };
        let base = TftConfig {
            d_model: 64,
            n_lstm_layers: 2,
            dropout: 0.2,
            history,
            horizon,
            n_channels,
            n_known,
            n_statics,
            n_targets: n_channels,
            loss,
            gamma: 1.0,
            lr: 1e-4,
            batch_size: 128,
            max_epochs: 19,
            patience: 5,
            clip_norm: 1.0,
            seed: 0,
            last_value_skip: false,
            max_batches_per_epoch: None,
        };
        match (preset, variant) {
            (Preset::Paper, Variant::FourBox) => base,
            (Preset::Paper, Variant::SixBox) => TftConfig {
                d_model: 128,
                n_lstm_layers: 3,
                batch_size: 32,
                max_epochs: 10,
                patience: 3,
                ..base
            },
            (Preset::Desk, _) => TftConfig {
                d_model: 16,
                n_lstm_layers: 2,
                dropout: 0.0,
                lr: 2e-3,
                batch_size: 64,
                max_epochs: 6,
                patience: 3,
                last_value_skip: true,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), TftError> {
        let bad = |msg: String| Err(TftError::Config(msg));
        if self.d_model == 0 || self.n_lstm_layers == 0 {
            return bad("d_model and n_lstm_layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.history == 0 || self.horizon == 0 {
            return bad("history and horizon must be positive".into());
        }
        if self.n_channels == 0 || self.n_known == 0 {
            return bad("at least one channel and one known covariate are required".into());
        }
        if self.n_targets == 0 || self.n_targets > self.n_channels {
            return bad(format!(
                "n_targets {} must be in 1..={}",
                self.n_targets, self.n_channels
            ));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma {} must be positive", self.gamma));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return bad("lr and clip_norm must be positive".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_presets() {
        let four = TftConfig::preset(Preset::Paper, Variant::FourBox, Mode::Stochastic, 14);
        assert_eq!(
            (four.n_lstm_layers, four.d_model, four.history, four.horizon),
            (2, 64, 100, 50)
        );
        assert_eq!(
            (four.batch_size, four.max_epochs, four.patience),
            (128, 19, 5)
        );
        let six = TftConfig::preset(Preset::Paper, Variant::SixBox, Mode::Stochastic, 22);
        assert_eq!(
            (six.n_lstm_layers, six.d_model, six.history, six.horizon),
            (3, 128, 200, 100)
        );
        assert_eq!((six.batch_size, six.max_epochs, six.patience), (32, 10, 3));
        for c in [&four, &six] {
            assert_eq!((c.dropout, c.lr, c.clip_norm), (0.2, 1e-4, 1.0));
            assert!(!c.last_value_skip);
            c.validate().unwrap();
        }
        assert_eq!(six.n_known, 4);
        assert_eq!(six.loss, LossKind::Sdtw);
    }

    #[test]
    fn rejects_bad_dropout() {
        let mut c = TftConfig::preset(Preset::Desk, Variant::FourBox, Mode::Deterministic, 0);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        c.dropout = 0.0;
        c.d_model = 0;
        assert!(c.validate().is_err());
    }
}
