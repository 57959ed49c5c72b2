use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use boxtip::boxmodel::{defaults, BoxParams, Variant, DEFAULT_SIGMA, DEFAULT_STEPS};
use boxtip::dataset::{CollapseFilter, Mode, SplitSpec, WindowGeometry};
use boxtip::ensemble::ParamBounds;
use boxtip::tft::{LossKind, Preset, TftConfig};
use serde::{Deserialize, Serialize};

/// Which parameter set a single-configuration command runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamChoice {
    Default,
    NearThreshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory written by `gen-data`.
    pub dataset: PathBuf,
    /// Model container written by `train`.
    pub model: PathBuf,
    /// Sampling ranges; the variant defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<PathBuf>,
    /// Extra prediction directories scored by `eval`.
    #[serde(default)]
    pub external: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub params: ParamChoice,
    /// Named covariate overrides applied on top of `params`.
    #[serde(default)]
    pub set: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub flux: String,
    pub low: f64,
    pub high: f64,
    pub points: usize,
    pub settle_years: f64,
    /// Branch separation, Sv, that counts as bistable.
    pub threshold_sv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Trajectories simulated before splitting and filtering.
    pub pool: usize,
    pub split: SplitSpec,
    pub filter: CollapseFilter,
    /// Window stride; the horizon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

/// Optional replacements for the preset network and optimiser settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TftOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_lstm_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_value_skip: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_batches_per_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    /// Forecast blocks; enough to cover `n_steps` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_blocks: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub params: ParamChoice,
    /// Also forecast the ensemble with the trained model.
    pub surrogate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Label of the trained model in the report.
    pub model_name: String,
    pub persistence: bool,
    pub bin_years: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedConfig {
    pub variant: Variant,
    pub n_sims: usize,
    /// Time an untrained surrogate of the profile's size when no model file
    /// for the variant is available.
    pub surrogate: bool,
}

/// Everything a command needs. Loaded from TOML layered over the profile
/// defaults; unknown keys are errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Preset,
    pub variant: Variant,
    pub mode: Mode,
    pub seed: u64,
    pub sigma: f64,
    pub n_steps: usize,
    pub paths: Paths,
    pub simulate: SimulateConfig,
    pub sweep: SweepConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub tft: TftOverrides,
    pub rollout: RolloutConfig,
    pub ensemble: EnsembleConfig,
    pub eval: EvalConfig,
    pub speed: SpeedConfig,
}

/// Sub-seeds derived from the global seed, one per consumer.
pub mod streams {
    pub const BOUNDS: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SPLITS: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const ENSEMBLE: u64 = 5;
    pub const SPEED: u64 = 6;
}

impl RunConfig {
    pub fn for_profile(profile: Preset) -> Self {
        let (pool, split, stride, members) = match profile {
            Preset::Desk => (
                360,
                SplitSpec {
                    train: 200,
                    val: 40,
                    test: 40,
                },
                Some(100),
                200,
            ),
            Preset::Paper => (
                7600,
                SplitSpec {
                    train: 6000,
                    val: 401,
                    test: 401,
                },
                None,
                1000,
            ),
        };
        RunConfig {
            profile,
            variant: Variant::FourBox,
            mode: Mode::Stochastic,
            seed: 42,
            sigma: DEFAULT_SIGMA,
            n_steps: DEFAULT_STEPS,
            paths: Paths {
                dataset: PathBuf::from("runs/gen-data"),
                model: PathBuf::from("runs/train/model.bin"),
                bounds: None,
                external: Vec::new(),
            },
            simulate: SimulateConfig {
                params: ParamChoice::Default,
                set: BTreeMap::new(),
            },
            sweep: SweepConfig {
                flux: "fw_north".into(),
                low: -2e5,
                high: 8e5,
                points: 41,
                settle_years: 3000.0,
                threshold_sv: 5.0,
            },
            data: DataConfig {
                pool,
                split,
                filter: CollapseFilter::Balanced,
                stride,
            },
            tft: TftOverrides::default(),
            rollout: RolloutConfig { n_blocks: None },
            ensemble: EnsembleConfig {
                members,
                params: ParamChoice::NearThreshold,
                surrogate: false,
            },
            eval: EvalConfig {
                model_name: "TFT".into(),
                persistence: true,
                bin_years: 25.0,
            },
            speed: SpeedConfig {
                variant: Variant::SixBox,
                n_sims: 100,
                surrogate: true,
            },
        }
    }

    /// Profile defaults, then the file, then `profile` if given.
    pub fn load(path: Option<&Path>, profile: Option<Preset>) -> Result<Self> {
        let file: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                text.parse()
                    .with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        let from_file = match file.get("profile") {
            Some(v) => Some(
                Preset::deserialize(v.clone()).context("profile must be \"desk\" or \"paper\"")?,
            ),
            None => None,
        };
        let chosen = profile.or(from_file).unwrap_or(Preset::Desk);
        let mut merged = toml::Table::try_from(RunConfig::for_profile(chosen))?;
        merge(&mut merged, file);
        merged.insert("profile".into(), toml::Value::try_from(chosen)?);
        let cfg: RunConfig = RunConfig::deserialize(merged).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            bail!("n_steps must be positive");
        }
        if !(self.sigma >= 0.0) {
            bail!("sigma must be non-negative");
        }
        if self.sweep.points == 0 || !(self.sweep.low <= self.sweep.high) {
            bail!("sweep grid is empty");
        }
        if self.data.split.train == 0 {
            bail!("train split is empty");
        }
        if self.data.stride == Some(0) {
            bail!("stride must be positive");
        }
        if let Some(p) = &self.paths.bounds {
            if !p.exists() {
                bail!("bounds file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn geometry(&self) -> WindowGeometry {
        let mut g = WindowGeometry::for_variant(self.variant);
        if let Some(s) = self.data.stride {
            g.stride = s;
        }
        g
    }

    pub fn bounds(&self) -> Result<ParamBounds> {
        let seed = boxtip::boxmodel::split_seed(self.seed, streams::BOUNDS);
        let Some(path) = &self.paths.bounds else {
            return Ok(ParamBounds::defaults(self.variant, seed));
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let b: ParamBounds =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if b.variant != self.variant {
            bail!(
                "bounds file is for the {} model, config asks for {}",
                b.variant,
                self.variant
            );
        }
        b.validate()?;
        Ok(b)
    }

    pub fn params(&self, choice: ParamChoice) -> Result<BoxParams> {
        let mut p = match choice {
            ParamChoice::Default => defaults::params(self.variant),
            ParamChoice::NearThreshold => defaults::near_threshold(self.variant),
        };
        for (name, value) in &self.simulate.set {
            p.set(name, *value)?;
        }
        p.validate()?;
        Ok(p)
    }

    /// Preset for the profile and `variant` with the `[tft]` overrides applied.
    pub fn tft_config(&self, variant: Variant, n_statics: usize) -> Result<TftConfig> {
        let mut c = TftConfig::preset(self.profile, variant, self.mode, n_statics);
        let o = &self.tft;
        macro_rules! apply {
            ($($f:ident),*) => { $(if let Some(v) = o.$f { c.$f = v; })* };
        }
        apply!(
            d_model,
            n_lstm_layers,
            dropout,
            loss,
            gamma,
            lr,
            batch_size,
            max_epochs,
            patience,
            clip_norm,
            last_value_skip
        );
        if o.max_batches_per_epoch.is_some() {
            c.max_batches_per_epoch = o.max_batches_per_epoch;
        }
        c.seed = boxtip::boxmodel::split_seed(self.seed, streams::TRAIN);
        c.validate()?;
        Ok(c)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn profile_defaults_round_trip() {
        for p in [Preset::Desk, Preset::Paper] {
            let c = RunConfig::for_profile(p);
            let text = c.to_toml().unwrap();
            let f = write(&text);
            assert_eq!(RunConfig::load(Some(f.path()), None).unwrap(), c);
        }
    }

    #[test]
    fn file_overrides_nested_keys() {
        let f = write("seed = 7\n[data]\npool = 10\n[tft]\nd_model = 8\n");
        let c = RunConfig::load(Some(f.path()), None).unwrap();
        assert_eq!((c.seed, c.data.pool, c.tft.d_model), (7, 10, Some(8)));
        assert_eq!(c.data.split.train, 200);
        assert_eq!(c.tft_config(Variant::FourBox, 14).unwrap().d_model, 8);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["sead = 1\n", "[data]\npol = 3\n", "[tft]\nd_modle = 3\n"] {
            let f = write(text);
            assert!(RunConfig::load(Some(f.path()), None).is_err(), "{text}");
        }
    }

    #[test]
    fn flag_profile_wins() {
        let f = write("profile = \"desk\"\n");
        let c = RunConfig::load(Some(f.path()), Some(Preset::Paper)).unwrap();
        assert_eq!(c.profile, Preset::Paper);
        assert_eq!(c.data.split.train, 6000);
    }

    #[test]
    fn missing_bounds_file_rejected() {
        let f = write("[paths]\nbounds = \"/nonexistent/bounds.toml\"\n");
        assert!(RunConfig::load(Some(f.path()), None).is_err());
    }
}
