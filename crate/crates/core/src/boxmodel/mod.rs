//! Four-box and six-box overturning simulators with additive stochastic
//! freshwater forcing.

mod archive;
pub mod defaults;
mod dynamics;
mod noise;
mod params;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{read_archive, write_archive, ArchiveError, TrajectoryManifest, ARCHIVE_FORMAT};
pub(crate) use archive::{read_f64s, write_f64s};
pub use dynamics::{compute_fluxes, euler_step, tendencies, volumes, BoxState, FluxSet, Tendency};
pub use noise::{split_seed, stream_rng, NoiseSeq};
pub use params::{density, BoxParams, Variant};

pub const MAX_BOXES: usize = 6;
pub const MAX_BASINS: usize = 2;
pub const MAX_DEPTH: f64 = 4000.0;
pub const MAX_SALINITY: f64 = 60.0;
pub const SECONDS_PER_YEAR: f64 = 365.25 * 86_400.0;
/// Seasonal step used for every generated trajectory.
pub const DT_YEARS: f64 = 0.25;
/// Full-length run: 1000 years of seasonal steps.
pub const DEFAULT_STEPS: usize = 4000;
/// Freshwater perturbation amplitude, m³/s.
pub const DEFAULT_SIGMA: f64 = 1e5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown covariate '{0}'")]
    UnknownCovariate(String),
    #[error("pycnocline depth {0} m is not positive")]
    NonPositiveDepth(f64),
    #[error("noise row has {got} entries, expected {expected}")]
    NoiseShape { expected: usize, got: usize },
    #[error("non-finite tendency")]
    NonFiniteTendency,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error("noise has {have} rows, {need} steps requested")]
    NoiseTooShort { have: usize, need: usize },
    #[error("basin {basin} does not exist in the {variant} model")]
    UnknownBasin { basin: usize, variant: Variant },
}

/// Where a trajectory came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Simulator,
    Surrogate,
    External,
}

/// Ordered names of the observed channels.
pub fn channel_names(variant: Variant) -> Vec<String> {
    let mut names: Vec<String> = match variant {
        Variant::FourBox => [
            "m_n",
            "m_u",
            "m_eddy",
            "m_s_residual",
            "d_pyc",
            "t_low",
            "t_north",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        Variant::SixBox => [
            "m_n_atl",
            "m_n_pac",
            "m_u_atl",
            "m_u_pac",
            "m_eddy",
            "m_s_residual",
            "m_ib",
            "d_pyc_atl",
            "d_pyc_pac",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    };
    if variant == Variant::SixBox {
        names.extend(variant.box_names().iter().map(|b| format!("t_{b}")));
    }
    names.extend(variant.box_names().iter().map(|b| format!("s_{b}")));
    names
}

pub fn n_channels(variant: Variant) -> usize {
    match variant {
        Variant::FourBox => 11,
        Variant::SixBox => 21,
    }
}

/// Channel holding the overturning strength of `basin`.
pub fn overturning_channel(variant: Variant, basin: usize) -> Result<usize, SimError> {
    if basin >= variant.n_basins() {
        return Err(SimError::UnknownBasin { basin, variant });
    }
    Ok(basin)
}

/// Writes the observed channels of `state` into `row`. Transports in Sv.
fn record(state: &BoxState, params: &BoxParams, row: &mut [f64]) -> Result<(), SimError> {
    const SV: f64 = 1e-6;
    let f = compute_fluxes(state, params)?;
    let sal = state.salinities(params);
    let v = params.variant;
    match v {
        Variant::FourBox => {
            row[0] = f.m_n[0] * SV;
            row[1] = f.m_u[0] * SV;
            row[2] = f.m_eddy[0] * SV;
            row[3] = f.m_s[0] * SV;
            row[4] = state.d_pyc[0];
            row[5] = state.t_box[v.low(0)];
            row[6] = state.t_box[v.north(0)];
            row[7..11].copy_from_slice(&sal[..4]);
        }
        Variant::SixBox => {
            row[0] = f.m_n[0] * SV;
            row[1] = f.m_n[1] * SV;
            row[2] = f.m_u[0] * SV;
            row[3] = f.m_u[1] * SV;
            row[4] = f.m_eddy_total() * SV;
            row[5] = f.m_s_total() * SV;
            row[6] = f.m_ib * SV;
            row[7] = state.d_pyc[0];
            row[8] = state.d_pyc[1];
            row[9..15].copy_from_slice(&state.t_box[..6]);
            row[15..21].copy_from_slice(&sal[..6]);
        }
    }
    Ok(())
}

/// A simulated (or forecast) run with its forcing and collapse annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt_years: f64,
    pub variant: Variant,
    pub channel_names: Vec<String>,
    /// `[n_steps × n_channels]`; row `k` is the state at `k·dt_years`.
    /// Transports in Sv, depths in m, temperatures in °C, salinities in psu.
    pub channels: Array2<f64>,
    pub noise: NoiseSeq,
    pub params: BoxParams,
    pub collapse_time_atlantic: Option<f64>,
    pub collapse_time_pacific: Option<f64>,
    pub source: Source,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.channels.nrows()
    }

    /// Recomputes both collapse annotations from the stored channels.
    pub fn annotate(&mut self) {
        let series = |b: usize| self.channels.column(b);
        self.collapse_time_atlantic = first_crossing(series(0), self.dt_years);
        self.collapse_time_pacific = match self.variant {
            Variant::SixBox => first_crossing(series(1), self.dt_years),
            Variant::FourBox => None,
        };
    }

    pub fn collapse_time(&self, basin: usize) -> Option<f64> {
        match basin {
            0 => self.collapse_time_atlantic,
            _ => self.collapse_time_pacific,
        }
    }

    pub fn collapsed(&self) -> bool {
        self.collapse_time_atlantic.is_some() || self.collapse_time_pacific.is_some()
    }
}

/// Time of the first sample strictly below zero.
pub fn first_crossing(series: ArrayView1<'_, f64>, dt_years: f64) -> Option<f64> {
    series
        .iter()
        .position(|&x| x < 0.0)
        .map(|i| i as f64 * dt_years)
}

/// Earliest time the overturning of `basin` drops below zero.
pub fn detect_collapse(traj: &Trajectory, basin: usize) -> Result<Option<f64>, SimError> {
    let ch = overturning_channel(traj.variant, basin)?;
    Ok(first_crossing(traj.channels.column(ch), traj.dt_years))
}

/// Integrates `n_steps - 1` Euler steps from the initial conditions and
/// records `n_steps` rows. Noise row `k` forces the step from row `k` to
/// row `k + 1`.
pub fn simulate(
    params: &BoxParams,
    noise: &NoiseSeq,
    n_steps: usize,
) -> Result<Trajectory, SimError> {
    params.validate()?;
    let v = params.variant;
    if noise.n_fluxes() != v.n_fluxes() {
        return Err(SimError::NoiseShape {
            expected: v.n_fluxes(),
            got: noise.n_fluxes(),
        });
    }
    if noise.n_steps() < n_steps {
        return Err(SimError::NoiseTooShort {
            have: noise.n_steps(),
            need: n_steps,
        });
    }
    let nc = n_channels(v);
    let mut channels = Array2::zeros((n_steps, nc));
    let mut state = BoxState::initial(params);
    let wrap = |step: usize| {
        move |e: SimError| SimError::Step {
            step,
            source: Box::new(e),
        }
    };
    let mut row = [0.0; 21];
    for k in 0..n_steps {
        record(&state, params, &mut row[..nc]).map_err(wrap(k))?;
        channels
            .row_mut(k)
            .iter_mut()
            .zip(&row[..nc])
            .for_each(|(c, r)| *c = *r);
        if k + 1 < n_steps {
            let forcing = noise.values.row(k);
            let forcing = forcing.as_slice().expect("noise rows are contiguous");
            state = euler_step(&state, params, forcing, DT_YEARS).map_err(wrap(k))?;
        }
    }
    let mut traj = Trajectory {
        dt_years: DT_YEARS,
        variant: v,
        channel_names: channel_names(v),
        channels,
        noise: noise.clone(),
        params: params.clone(),
        collapse_time_atlantic: None,
        collapse_time_pacific: None,
        source: Source::Simulator,
    };
    traj.annotate();
    Ok(traj)
}

/// Runs the model forward with constant forcing and returns the final state.
/// Used for equilibration and bifurcation sweeps.
pub fn integrate_state(
    state: BoxState,
    params: &BoxParams,
    n_steps: usize,
) -> Result<BoxState, SimError> {
    let zeros = [0.0; 4];
    let forcing = &zeros[..params.variant.n_fluxes()];
    let mut st = state;
    for k in 0..n_steps {
        st = euler_step(&st, params, forcing, DT_YEARS).map_err(|e| SimError::Step {
            step: k,
            source: Box::new(e),
        })?;
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn channel_counts() {
        assert_eq!(channel_names(Variant::FourBox).len(), 11);
        assert_eq!(channel_names(Variant::SixBox).len(), 21);
    }

    #[test]
    fn crossing_rules() {
        let never = Array1::from_elem(100, 10.0);
        assert_eq!(first_crossing(never.view(), 0.25), None);
        let mut s = Array1::from_elem(800, 1.0);
        s.slice_mut(ndarray::s![560..]).fill(-1.0);
        assert_eq!(first_crossing(s.view(), 0.25), Some(140.0));
        let mut twice = Array1::from_elem(100, 1.0);
        twice[10] = -1.0;
        twice[50] = -2.0;
        assert_eq!(first_crossing(twice.view(), 0.25), Some(2.5));
    }

    #[test]
    fn simulate_length_and_determinism() {
        let p = defaults::four_box();
        let noise = NoiseSeq::generate(11, DEFAULT_SIGMA, DEFAULT_STEPS, 2);
        let a = simulate(&p, &noise, DEFAULT_STEPS).unwrap();
        let b = simulate(&p, &noise, DEFAULT_STEPS).unwrap();
        assert_eq!(a.n_steps(), 4000);
        assert_eq!((a.n_steps() as f64) * a.dt_years, 1000.0);
        assert_eq!(a.channels, b.channels);
        assert_eq!(detect_collapse(&a, 0).unwrap(), a.collapse_time_atlantic);
        assert!(detect_collapse(&a, 1).is_err());
    }

    #[test]
    fn simulate_rejects_short_noise() {
        let p = defaults::four_box();
        let noise = NoiseSeq::zeros(10, 2);
        assert!(matches!(
            simulate(&p, &noise, 20),
            Err(SimError::NoiseTooShort { .. })
        ));
    }

    #[test]
    fn six_box_runs() {
        let p = defaults::six_box();
        let noise = NoiseSeq::generate(3, DEFAULT_SIGMA, DEFAULT_STEPS, 4);
        let t = simulate(&p, &noise, DEFAULT_STEPS).unwrap();
        assert_eq!(t.channels.ncols(), 21);
        assert!(t.channels.iter().all(|x| x.is_finite()));
    }
}
