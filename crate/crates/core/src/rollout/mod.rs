//! Autoregressive long-horizon forecasting and noise-conditioned ensemble
//! forecasts with a trained surrogate.

mod stubs;

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rayon::prelude::*;
use thiserror::Error;

use crate::boxmodel::{
    channel_names, n_channels, split_seed, write_archive, ArchiveError, BoxParams, NoiseSeq,
    SimError, Source, Trajectory, Variant, DT_YEARS,
};
use crate::dataset::{known_from_noise, DataError, Mode, Standardizer};
use crate::ensemble::{collapse_stats, CollapseStats};
use crate::tft::{Batch, TftError, TftModel, WindowInputs};

pub use stubs::{Persistence, SimulatorOracle};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("non-finite prediction in block {block}")]
    NonFinite { block: usize },
    #[error("seed window is {rows}×{cols}, expected {expected_rows}×{expected_cols}")]
    SeedWindow {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("noise covers {have} steps, rollout needs {need}")]
    NoiseTooShort { have: usize, need: usize },
    #[error("noise has {got} flux columns, expected {expected}")]
    NoiseShape { expected: usize, got: usize },
    #[error("model forecasts the {model} model, input is {input}")]
    VariantMismatch { model: Variant, input: Variant },
    #[error("forecast is {got:?}, expected {expected:?}")]
    ForecastShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("model returned {got} forecasts for {expected} requests")]
    ForecastCount { expected: usize, got: usize },
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("ensemble forecasts need a stochastic-mode model")]
    NotStochastic,
    #[error(transparent)]
    Model(#[from] TftError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

/// Everything a forecaster may look at for one block. Learned models use
/// only `inputs`; reference stubs may use the raw forcing.
#[derive(Clone, Debug)]
pub struct ForecastRequest<'a> {
    pub inputs: WindowInputs<'a>,
    /// Row index of the first forecast step.
    pub start: usize,
    pub params: &'a BoxParams,
    pub noise: &'a NoiseSeq,
}

/// A model that maps a standardised history window to the next
/// standardised `horizon × n_channels` block. Read-only during forecasting.
pub trait Forecaster: Sync {
    fn variant(&self) -> Variant;
    fn mode(&self) -> Mode;
    fn history(&self) -> usize;
    fn horizon(&self) -> usize;
    fn standardizer(&self) -> &Standardizer;

    /// Largest number of requests worth passing in one call.
    fn max_batch(&self) -> usize {
        64
    }

    fn forecast(&self, requests: &[ForecastRequest<'_>]) -> Result<Vec<Array2<f64>>, RolloutError>;
}

impl Forecaster for TftModel {
    fn variant(&self) -> Variant {
        self.meta.variant
    }

    fn mode(&self) -> Mode {
        self.meta.mode
    }

    fn history(&self) -> usize {
        self.config.history
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn standardizer(&self) -> &Standardizer {
        &self.meta.standardizer
    }

    fn max_batch(&self) -> usize {
        self.config.batch_size.max(1)
    }

    fn forecast(&self, requests: &[ForecastRequest<'_>]) -> Result<Vec<Array2<f64>>, RolloutError> {
        let inputs: Vec<WindowInputs<'_>> = requests.iter().map(|r| r.inputs).collect();
        let batch = Batch::from_inputs(&inputs, &self.config)?;
        Ok(self.predict(&batch)?)
    }
}

/// One member of a rollout batch.
#[derive(Clone, Copy, Debug)]
pub struct RolloutInput<'a> {
    /// First `history` rows in raw units.
    pub seed_window: ArrayView2<'a, f64>,
    pub params: &'a BoxParams,
    /// Forcing for the whole rollout; rows beyond the rollout are ignored.
    pub noise: &'a NoiseSeq,
}

/// A stitched forecast stored as a surrogate trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub trajectory: Trajectory,
    pub history: usize,
    pub horizon: usize,
    /// First row of each forecast block.
    pub block_starts: Vec<usize>,
}

impl RolloutResult {
    pub fn n_blocks(&self) -> usize {
        self.block_starts.len()
    }

    pub fn collapse_time(&self, basin: usize) -> Option<f64> {
        self.trajectory.collapse_time(basin)
    }

    /// Writes the trajectory archive with `source: surrogate`.
    pub fn write(&self, dir: &Path) -> Result<(), RolloutError> {
        Ok(write_archive(dir, &self.trajectory)?)
    }
}

/// Rows produced by a rollout of `n_blocks` blocks.
pub fn rollout_len(history: usize, horizon: usize, n_blocks: usize) -> usize {
    history + n_blocks * horizon
}

/// Smallest block count whose rollout covers `total_steps` rows.
pub fn blocks_for(total_steps: usize, history: usize, horizon: usize) -> usize {
    total_steps.saturating_sub(history).div_ceil(horizon.max(1))
}

/// Block count covering `years` of forecast beyond the seed window.
pub fn blocks_for_years(years: f64, horizon: usize) -> usize {
    let steps = (years / DT_YEARS).round().max(0.0) as usize;
    steps.div_ceil(horizon.max(1))
}

struct Member<'a> {
    input: RolloutInput<'a>,
    statics: Array1<f64>,
    channels: Array2<f64>,
}

fn prepare<'a, F: Forecaster + ?Sized>(
    model: &F,
    input: RolloutInput<'a>,
    n_blocks: usize,
) -> Result<Member<'a>, RolloutError> {
    let (h, l) = (model.history(), model.horizon());
    let variant = model.variant();
    if input.params.variant != variant {
        return Err(RolloutError::VariantMismatch {
            model: variant,
            input: input.params.variant,
        });
    }
    let nc = n_channels(variant);
    let (rows, cols) = input.seed_window.dim();
    if rows != h || cols != nc {
        return Err(RolloutError::SeedWindow {
            rows,
            cols,
            expected_rows: h,
            expected_cols: nc,
        });
    }
    if input.noise.n_fluxes() != variant.n_fluxes() {
        return Err(RolloutError::NoiseShape {
            expected: variant.n_fluxes(),
            got: input.noise.n_fluxes(),
        });
    }
    let total = rollout_len(h, l, n_blocks);
    if input.noise.n_steps() < total {
        return Err(RolloutError::NoiseTooShort {
            have: input.noise.n_steps(),
            need: total,
        });
    }
    let statics = model.standardizer().transform_statics(input.params)?;
    let mut channels = Array2::zeros((total, nc));
    channels.slice_mut(s![..h, ..]).assign(&input.seed_window);
    Ok(Member {
        input,
        statics,
        channels,
    })
}

struct BlockInputs {
    history: Array2<f64>,
    history_known: Array2<f64>,
    future_known: Array2<f64>,
}

fn block_inputs<F: Forecaster + ?Sized>(model: &F, m: &Member<'_>, start: usize) -> BlockInputs {
    let (h, l, mode) = (model.history(), model.horizon(), model.mode());
    let std = model.standardizer();
    BlockInputs {
        history: std.transform_channels(m.channels.slice(s![start - h..start, ..])),
        history_known: std
            .transform_known(known_from_noise(m.input.noise, mode, start - h, h).view()),
        future_known: std.transform_known(known_from_noise(m.input.noise, mode, start, l).view()),
    }
}

/// Forecasts for `live` members, retrying one by one if the joint call
/// fails so a single bad member cannot sink the batch.
fn forecast_isolated<F: Forecaster + ?Sized>(
    model: &F,
    requests: &[ForecastRequest<'_>],
) -> Vec<Result<Array2<f64>, RolloutError>> {
    match model.forecast(requests) {
        Ok(preds) if preds.len() == requests.len() => preds.into_iter().map(Ok).collect(),
        Ok(preds) if requests.len() == 1 => vec![Err(RolloutError::ForecastCount {
            expected: 1,
            got: preds.len(),
        })],
        Err(e) if requests.len() == 1 => vec![Err(e)],
        _ => requests
            .iter()
            .map(|r| {
                let mut one = model.forecast(std::slice::from_ref(r))?;
                match one.len() {
                    1 => Ok(one.remove(0)),
                    got => Err(RolloutError::ForecastCount { expected: 1, got }),
                }
            })
            .collect(),
    }
}

/// Rolls every input forward `n_blocks` blocks in lockstep: standardise the
/// last `history` rows, forecast `horizon` rows with known covariates from
/// the member's noise, de-standardise, append, slide. Members fail
/// independently.
pub fn rollout_batch<F: Forecaster + ?Sized>(
    model: &F,
    inputs: &[RolloutInput<'_>],
    n_blocks: usize,
) -> Vec<Result<RolloutResult, RolloutError>> {
    let (h, l) = (model.history(), model.horizon());
    let nc = n_channels(model.variant());
    let mut members: Vec<Result<Member<'_>, RolloutError>> = inputs
        .iter()
        .map(|&i| prepare(model, i, n_blocks))
        .collect();
    for block in 0..n_blocks {
        let start = h + block * l;
        let live: Vec<usize> = (0..members.len()).filter(|&k| members[k].is_ok()).collect();
        if live.is_empty() {
            break;
        }
        let prepared: Vec<BlockInputs> = live
            .iter()
            .map(|&k| block_inputs(model, members[k].as_ref().expect("live"), start))
            .collect();
        let requests: Vec<ForecastRequest<'_>> = live
            .iter()
            .zip(&prepared)
            .map(|(&k, b)| {
                let m = members[k].as_ref().expect("live");
                ForecastRequest {
                    inputs: WindowInputs {
                        history: b.history.view(),
                        history_known: b.history_known.view(),
                        future_known: b.future_known.view(),
                        statics: m.statics.view(),
                    },
                    start,
                    params: m.input.params,
                    noise: m.input.noise,
                }
            })
            .collect();
        let preds = forecast_isolated(model, &requests);
        drop(requests);
        for (&k, pred) in live.iter().zip(preds) {
            let outcome = pred.and_then(|p| {
                if p.dim() != (l, nc) {
                    return Err(RolloutError::ForecastShape {
                        expected: (l, nc),
                        got: p.dim(),
                    });
                }
                let raw = model.standardizer().inverse_channels(p.view());
                if raw.iter().all(|x| x.is_finite()) {
                    Ok(raw)
                } else {
                    Err(RolloutError::NonFinite { block })
                }
            });
            match outcome {
                Ok(raw) => {
                    let m = members[k].as_mut().expect("live");
                    m.channels.slice_mut(s![start..start + l, ..]).assign(&raw);
                }
                Err(e) => members[k] = Err(e),
            }
        }
    }
    let variant = model.variant();
    members
        .into_iter()
        .map(|m| {
            let m = m?;
            let total = m.channels.nrows();
            let noise = NoiseSeq {
                seed: m.input.noise.seed,
                sigma: m.input.noise.sigma,
                values: m.input.noise.values.slice(s![..total, ..]).to_owned(),
            };
            let mut trajectory = Trajectory {
                dt_years: DT_YEARS,
                variant,
                channel_names: channel_names(variant),
                channels: m.channels,
                noise,
                params: m.input.params.clone(),
                collapse_time_atlantic: None,
                collapse_time_pacific: None,
                source: Source::Surrogate,
            };
            trajectory.annotate();
            Ok(RolloutResult {
                trajectory,
                history: h,
                horizon: l,
                block_starts: (0..n_blocks).map(|b| h + b * l).collect(),
            })
        })
        .collect()
}

/// Single-trajectory rollout.
pub fn autoregressive_rollout<F: Forecaster + ?Sized>(
    model: &F,
    seed_window: ArrayView2<'_, f64>,
    params: &BoxParams,
    noise: &NoiseSeq,
    n_blocks: usize,
) -> Result<RolloutResult, RolloutError> {
    let input = RolloutInput {
        seed_window,
        params,
        noise,
    };
    rollout_batch(model, &[input], n_blocks).remove(0)
}

/// Rollouts of many independent inputs, batched up to the model's
/// preferred size and run in parallel. Output order follows `inputs`.
pub fn rollout_many<F: Forecaster + ?Sized>(
    model: &F,
    inputs: &[RolloutInput<'_>],
    n_blocks: usize,
) -> Vec<Result<RolloutResult, RolloutError>> {
    inputs
        .par_chunks(model.max_batch().max(1))
        .flat_map_iter(|chunk| rollout_batch(model, chunk, n_blocks))
        .collect()
}

/// Members share the seed window and parameters and differ only in the
/// noise fed to the decoder.
#[derive(Debug)]
pub struct ForecastEnsemble {
    pub members: Vec<Result<RolloutResult, RolloutError>>,
    pub seeds: Vec<u64>,
    pub atlantic: CollapseStats,
    /// Present for the six-box model.
    pub pacific: Option<CollapseStats>,
}

impl ForecastEnsemble {
    pub fn collapse_times(&self, basin: usize) -> Vec<Option<f64>> {
        self.members
            .iter()
            .map(|m| m.as_ref().ok().and_then(|r| r.collapse_time(basin)))
            .collect()
    }

    pub fn n_failed(&self) -> usize {
        self.members.iter().filter(|m| m.is_err()).count()
    }
}

/// Ensemble with member `k` driven by `split_seed(base_seed, k)`.
pub fn ensemble_forecast<F: Forecaster + ?Sized>(
    model: &F,
    seed_window: ArrayView2<'_, f64>,
    params: &BoxParams,
    n_members: usize,
    sigma: f64,
    base_seed: u64,
    n_blocks: usize,
) -> Result<ForecastEnsemble, RolloutError> {
    let seeds: Vec<u64> = (0..n_members as u64)
        .map(|k| split_seed(base_seed, k))
        .collect();
    ensemble_forecast_seeds(model, seed_window, params, &seeds, sigma, n_blocks)
}

/// Ensemble over explicit member seeds.
pub fn ensemble_forecast_seeds<F: Forecaster + ?Sized>(
    model: &F,
    seed_window: ArrayView2<'_, f64>,
    params: &BoxParams,
    seeds: &[u64],
    sigma: f64,
    n_blocks: usize,
) -> Result<ForecastEnsemble, RolloutError> {
    if seeds.is_empty() {
        return Err(RolloutError::NoMembers);
    }
    if model.mode() != Mode::Stochastic {
        return Err(RolloutError::NotStochastic);
    }
    let total = rollout_len(model.history(), model.horizon(), n_blocks);
    let nf = model.variant().n_fluxes();
    let noises: Vec<NoiseSeq> = seeds
        .par_iter()
        .map(|&seed| NoiseSeq::generate(seed, sigma, total, nf))
        .collect();
    let inputs: Vec<RolloutInput<'_>> = noises
        .iter()
        .map(|noise| RolloutInput {
            seed_window,
            params,
            noise,
        })
        .collect();
    let members = rollout_many(model, &inputs, n_blocks);
    let mut run = ForecastEnsemble {
        members,
        seeds: seeds.to_vec(),
        atlantic: collapse_stats(&[], 0),
        pacific: None,
    };
    run.atlantic = collapse_stats(&run.collapse_times(0), seeds.len());
    if model.variant() == Variant::SixBox {
        run.pacific = Some(collapse_stats(&run.collapse_times(1), seeds.len()));
    }
    Ok(run)
}
