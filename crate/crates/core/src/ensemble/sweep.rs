use serde::{Deserialize, Serialize};

use crate::boxmodel::{
    compute_fluxes, integrate_state, tendencies, BoxParams, BoxState, SimError, DT_YEARS,
};

/// Relative rate below which a settled state counts as an equilibrium, s⁻¹.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepDirection {
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub flux: f64,
    /// Overturning per basin after settling, Sv.
    pub m_n: Vec<f64>,
    pub converged: bool,
    /// Largest relative tendency at the settled state, s⁻¹.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchTable {
    pub flux_name: String,
    pub direction: SweepDirection,
    pub points: Vec<BranchPoint>,
}

fn settle_steps(settle_years: f64) -> usize {
    (settle_years / DT_YEARS).round().max(1.0) as usize
}

fn walk(
    params: &BoxParams,
    flux_name: &str,
    grid: &[f64],
    direction: SweepDirection,
    steps: usize,
    mut state: BoxState,
) -> Result<(BranchTable, BoxState), SimError> {
    let mut p = params.clone();
    p.get(flux_name)?;
    let ordered: Vec<f64> = match direction {
        SweepDirection::Up => grid.to_vec(),
        SweepDirection::Down => grid.iter().rev().copied().collect(),
    };
    let zeros = vec![0.0; p.variant.n_fluxes()];
    let mut points = Vec::with_capacity(ordered.len());
    for value in ordered {
        p.set(flux_name, value)?;
        state = integrate_state(state, &p, steps)?;
        let residual = tendencies(&state, &p, &zeros)?.max_relative(&state, p.variant);
        let f = compute_fluxes(&state, &p)?;
        points.push(BranchPoint {
            flux: value,
            m_n: f.m_n[..p.n_basins()].iter().map(|x| x * 1e-6).collect(),
            converged: residual < EQUILIBRIUM_TOL,
            residual,
        });
    }
    let table = BranchTable {
        flux_name: flux_name.to_string(),
        direction,
        points,
    };
    Ok((table, state))
}

/// Quasi-static continuation along `grid` starting from the initial
/// conditions in `params`. Each point starts from the previous settled state.
pub fn bifurcation_sweep(
    params: &BoxParams,
    flux_name: &str,
    grid: &[f64],
    direction: SweepDirection,
    settle_years: f64,
) -> Result<BranchTable, SimError> {
    params.validate()?;
    let start = BoxState::initial(params);
    walk(
        params,
        flux_name,
        grid,
        direction,
        settle_steps(settle_years),
        start,
    )
    .map(|(t, _)| t)
}

/// Up sweep followed by a down sweep that continues from the last up state.
pub fn hysteresis_loop(
    params: &BoxParams,
    flux_name: &str,
    grid: &[f64],
    settle_years: f64,
) -> Result<(BranchTable, BranchTable), SimError> {
    params.validate()?;
    let steps = settle_steps(settle_years);
    let start = BoxState::initial(params);
    let (up, end) = walk(params, flux_name, grid, SweepDirection::Up, steps, start)?;
    let (down, _) = walk(params, flux_name, grid, SweepDirection::Down, steps, end)?;
    Ok((up, down))
}

impl BranchTable {
    /// Overturning of `basin` at `flux`, if the grid contains that value.
    pub fn at(&self, flux: f64, basin: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.flux == flux)
            .map(|p| p.m_n[basin])
    }
}

/// Flux values where the two branches differ by more than `threshold` Sv.
pub fn bistable_interval(
    up: &BranchTable,
    down: &BranchTable,
    basin: usize,
    threshold: f64,
) -> Vec<f64> {
    up.points
        .iter()
        .filter_map(|p| {
            let other = down.at(p.flux, basin)?;
            ((p.m_n[basin] - other).abs() > threshold).then_some(p.flux)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxmodel::{defaults, Variant};

    #[test]
    fn default_point_is_on_state() {
        let p = defaults::four_box();
        let fw = p.fw_base[1];
        let t = bifurcation_sweep(&p, "fw_north", &[fw], SweepDirection::Up, 3000.0).unwrap();
        let pt = &t.points[0];
        assert!(pt.converged, "residual {}", pt.residual);
        assert!((pt.m_n[0] - 15.0).abs() < 2.0, "{}", pt.m_n[0]);
    }

    #[test]
    fn hysteresis_window() {
        let p = defaults::four_box();
        let grid: Vec<f64> = (0..=8).map(|i| -1e5 + 1e5 * i as f64).collect();
        let (up, down) = hysteresis_loop(&p, "fw_north", &grid, 3000.0).unwrap();
        let window = bistable_interval(&up, &down, 0, 5.0);
        assert!(!window.is_empty());
        let f_up = up.points.iter().find(|q| q.m_n[0] < 0.0).unwrap().flux;
        let f_down = down.points.iter().find(|q| q.m_n[0] > 0.0).unwrap().flux;
        assert!(f_down <= f_up);
        for pair in up.points.windows(2) {
            assert!(pair[1].m_n[0] <= pair[0].m_n[0] + 1e-9);
        }
    }

    #[test]
    fn monostable_grid_has_one_branch() {
        let p = defaults::four_box();
        let grid = [-3e5, -2e5, -1e5];
        let (up, down) = hysteresis_loop(&p, "fw_north", &grid, 3000.0).unwrap();
        assert!(bistable_interval(&up, &down, 0, 1e-3).is_empty());
    }

    #[test]
    fn unknown_flux_rejected() {
        let p = defaults::params(Variant::FourBox);
        assert!(bifurcation_sweep(&p, "nope", &[0.0], SweepDirection::Up, 10.0).is_err());
    }
}
