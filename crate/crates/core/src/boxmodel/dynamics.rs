//! Flux-form box-model physics and the forward Euler integrator.
//!
//! Every transport is an edge between two boxes carrying a signed volume
//! flow. Tracers are taken from the upstream box, so the salt budget
//! telescopes exactly: whatever leaves one box enters another. Freshwater
//! forcing enters as a virtual salt flux `F·s_ref` moved between boxes.

use super::params::{density, BoxParams, Variant};
use super::{SimError, MAX_BASINS, MAX_BOXES, MAX_DEPTH, MAX_SALINITY, SECONDS_PER_YEAR};

/// Prognostic state. Only the first `n_boxes`/`n_basins` entries are used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxState {
    /// Salt content per box, psu·m³.
    pub q_salt: [f64; MAX_BOXES],
    /// Temperature per box, °C.
    pub t_box: [f64; MAX_BOXES],
    /// Pycnocline depth per basin, m.
    pub d_pyc: [f64; MAX_BASINS],
    /// Model time, years.
    pub time: f64,
}

/// Volume transports in m³/s.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FluxSet {
    /// Northern sinking per basin; negative when reversed.
    pub m_n: [f64; MAX_BASINS],
    /// Diffusive upwelling through the pycnocline per basin.
    pub m_u: [f64; MAX_BASINS],
    /// Eddy return flow per basin.
    pub m_eddy: [f64; MAX_BASINS],
    /// Ekman minus eddy residual per basin.
    pub m_s: [f64; MAX_BASINS],
    /// Pacific-to-Atlantic low-latitude exchange.
    pub m_ib: f64,
}

impl FluxSet {
    pub fn m_eddy_total(&self) -> f64 {
        self.m_eddy.iter().sum()
    }

    pub fn m_s_total(&self) -> f64 {
        self.m_s.iter().sum()
    }
}

/// Time derivatives of the prognostic variables, per second.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tendency {
    pub q_salt: [f64; MAX_BOXES],
    pub t_box: [f64; MAX_BOXES],
    pub d_pyc: [f64; MAX_BASINS],
}

impl Tendency {
    /// Largest rate relative to the magnitude of the state, s⁻¹.
    pub fn max_relative(&self, state: &BoxState, variant: Variant) -> f64 {
        let nbox = variant.n_boxes();
        let nb = variant.n_basins();
        let rel = |rate: f64, x: f64, floor: f64| rate.abs() / x.abs().max(floor);
        let salt = (0..nbox).map(|i| rel(self.q_salt[i], state.q_salt[i], 1.0));
        let temp = (0..nbox).map(|i| rel(self.t_box[i], state.t_box[i], 1.0));
        let depth = (0..nb).map(|i| rel(self.d_pyc[i], state.d_pyc[i], 1.0));
        salt.chain(temp).chain(depth).fold(0.0, f64::max)
    }
}

impl BoxState {
    /// Initial state from the parameter set's initial conditions.
    pub fn initial(params: &BoxParams) -> Self {
        let mut st = BoxState {
            q_salt: [0.0; MAX_BOXES],
            t_box: [0.0; MAX_BOXES],
            d_pyc: [0.0; MAX_BASINS],
            time: 0.0,
        };
        let nb = params.n_basins();
        st.d_pyc[..nb].copy_from_slice(&params.d_init);
        let vols = volumes(&st, params);
        for i in 0..params.variant.n_boxes() {
            st.q_salt[i] = params.s_init[i] * vols[i];
            st.t_box[i] = params.t_init[i];
        }
        st
    }

    pub fn salinities(&self, params: &BoxParams) -> [f64; MAX_BOXES] {
        let vols = volumes(self, params);
        let mut s = [0.0; MAX_BOXES];
        for i in 0..params.variant.n_boxes() {
            s[i] = self.q_salt[i] / vols[i];
        }
        s
    }

    pub fn total_salt(&self, variant: Variant) -> f64 {
        self.q_salt[..variant.n_boxes()].iter().sum()
    }

    fn check(&self, params: &BoxParams) -> Result<(), String> {
        let v = params.variant;
        for b in 0..v.n_basins() {
            let d = self.d_pyc[b];
            if !(d > 0.0 && d < MAX_DEPTH) {
                return Err(format!("pycnocline depth {d} m outside (0, {MAX_DEPTH})"));
            }
        }
        let vols = volumes(self, params);
        if vols[v.deep()] <= 0.0 {
            return Err("deep box volume exhausted".into());
        }
        for i in 0..v.n_boxes() {
            let s = self.q_salt[i] / vols[i];
            if !(s > 0.0 && s < MAX_SALINITY) {
                return Err(format!(
                    "salinity {s} of box {} outside (0, 60)",
                    v.box_names()[i]
                ));
            }
            if !self.t_box[i].is_finite() {
                return Err(format!(
                    "non-finite temperature in box {}",
                    v.box_names()[i]
                ));
            }
        }
        Ok(())
    }
}

/// Box volumes; low-latitude boxes scale with the pycnocline and the deep
/// box takes the remainder of the fixed total.
pub fn volumes(state: &BoxState, params: &BoxParams) -> [f64; MAX_BOXES] {
    let v = params.variant;
    let mut vols = [0.0; MAX_BOXES];
    vols[v.south()] = params.v_south;
    let mut used = params.v_south;
    for b in 0..v.n_basins() {
        let low = params.area_low[b] * state.d_pyc[b];
        vols[v.low(b)] = low;
        vols[v.north(b)] = params.v_north[b];
        used += low + params.v_north[b];
    }
    vols[v.deep()] = params.v_total - used;
    vols
}

pub fn compute_fluxes(state: &BoxState, params: &BoxParams) -> Result<FluxSet, SimError> {
    let v = params.variant;
    let sal = state.salinities(params);
    let mut f = FluxSet::default();
    for b in 0..v.n_basins() {
        let d = state.d_pyc[b];
        if !(d > 0.0) {
            return Err(SimError::NonPositiveDepth(d));
        }
        let (lo, no) = (v.low(b), v.north(b));
        let rho_n = density(state.t_box[no], sal[no], params);
        let rho_l = density(state.t_box[lo], sal[lo], params);
        f.m_n[b] = params.c_hydraulic[b] * (rho_n - rho_l) * d * d;
        f.m_u[b] = params.k_v * params.area_low[b] / d;
        f.m_eddy[b] = params.basin_frac[b] * params.a_gm_coeff * d;
        f.m_s[b] = params.basin_frac[b] * params.m_ek - f.m_eddy[b];
    }
    if v == Variant::SixBox {
        f.m_ib = params.m_ib;
    }
    Ok(f)
}

/// Advective routing of one signed edge flow `flow` from box `from` to box `to`.
#[inline]
fn advect(
    tend: &mut Tendency,
    flow: f64,
    from: usize,
    to: usize,
    sal: &[f64; MAX_BOXES],
    temp: &[f64; MAX_BOXES],
    vols: &[f64; MAX_BOXES],
) {
    let (src, dst, mag) = if flow >= 0.0 {
        (from, to, flow)
    } else {
        (to, from, -flow)
    };
    let salt = mag * sal[src];
    tend.q_salt[src] -= salt;
    tend.q_salt[dst] += salt;
    tend.t_box[dst] += mag * (temp[src] - temp[dst]) / vols[dst];
}

/// Right-hand side of the box model with freshwater `baseline + noise_row`.
pub fn tendencies(
    state: &BoxState,
    params: &BoxParams,
    noise_row: &[f64],
) -> Result<Tendency, SimError> {
    let v = params.variant;
    if noise_row.len() != v.n_fluxes() {
        return Err(SimError::NoiseShape {
            expected: v.n_fluxes(),
            got: noise_row.len(),
        });
    }
    let fl = compute_fluxes(state, params)?;
    let vols = volumes(state, params);
    let mut sal = [0.0; MAX_BOXES];
    for i in 0..v.n_boxes() {
        sal[i] = state.q_salt[i] / vols[i];
    }
    let temp = &state.t_box;
    let mut tend = Tendency::default();
    let (s, d) = (v.south(), v.deep());

    for b in 0..v.n_basins() {
        let (lo, no) = (v.low(b), v.north(b));
        advect(&mut tend, fl.m_n[b], lo, no, &sal, temp, &vols);
        advect(&mut tend, fl.m_n[b], no, d, &sal, temp, &vols);
        advect(&mut tend, fl.m_u[b], d, lo, &sal, temp, &vols);
        advect(&mut tend, fl.m_s[b], d, s, &sal, temp, &vols);
        advect(&mut tend, fl.m_s[b], s, lo, &sal, temp, &vols);
        tend.d_pyc[b] = (fl.m_u[b] + fl.m_s[b] - fl.m_n[b]) / params.area_low[b];
    }

    let fw = |i: usize| params.fw_base[i] + noise_row[i];
    let sr = params.s_ref;
    match v {
        Variant::FourBox => {
            let (lo, no) = (v.low(0), v.north(0));
            tend.q_salt[s] -= fw(0) * sr;
            tend.q_salt[lo] += fw(0) * sr;
            tend.q_salt[no] -= fw(1) * sr;
            tend.q_salt[lo] += fw(1) * sr;
        }
        Variant::SixBox => {
            let (la, na, lp, np) = (v.low(0), v.north(0), v.low(1), v.north(1));
            advect(&mut tend, fl.m_ib, lp, la, &sal, temp, &vols);
            tend.d_pyc[0] += fl.m_ib / params.area_low[0];
            tend.d_pyc[1] -= fl.m_ib / params.area_low[1];

            let south = fw(0) * sr;
            tend.q_salt[s] -= south;
            tend.q_salt[la] += params.basin_frac[0] * south;
            tend.q_salt[lp] += params.basin_frac[1] * south;
            tend.q_salt[na] -= fw(1) * sr;
            tend.q_salt[la] += fw(1) * sr;
            tend.q_salt[np] -= fw(2) * sr;
            tend.q_salt[lp] += fw(2) * sr;
            // Atmospheric export of freshwater from the Atlantic to the Pacific.
            tend.q_salt[la] += fw(3) * sr;
            tend.q_salt[lp] -= fw(3) * sr;
        }
    }

    // Surface restoring; the deep box is only advected.
    for i in 0..v.n_boxes() {
        if i != d {
            tend.t_box[i] += (params.t_target[i] - temp[i]) / params.tau_relax;
        }
    }

    let finite = tend
        .q_salt
        .iter()
        .chain(&tend.t_box)
        .chain(&tend.d_pyc)
        .all(|x| x.is_finite());
    if !finite {
        return Err(SimError::NonFiniteTendency);
    }
    Ok(tend)
}

/// One forward Euler step of `dt_years`.
pub fn euler_step(
    state: &BoxState,
    params: &BoxParams,
    noise_row: &[f64],
    dt_years: f64,
) -> Result<BoxState, SimError> {
    if !(dt_years >= 0.0) {
        return Err(SimError::InvalidParams(format!(
            "dt must be non-negative, got {dt_years}"
        )));
    }
    if dt_years == 0.0 {
        return Ok(*state);
    }
    state.check(params).map_err(SimError::InvalidState)?;
    let tend = tendencies(state, params, noise_row)?;
    let h = dt_years * SECONDS_PER_YEAR;
    let mut next = *state;
    for i in 0..params.variant.n_boxes() {
        next.q_salt[i] += h * tend.q_salt[i];
        next.t_box[i] += h * tend.t_box[i];
    }
    for b in 0..params.n_basins() {
        next.d_pyc[b] += h * tend.d_pyc[b];
    }
    next.time += dt_years;
    next.check(params).map_err(SimError::InvalidState)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxmodel::defaults;

    fn uniform_state(params: &mut BoxParams) -> BoxState {
        // Uniform water masses remove every density contrast, so the only
        // remaining motion is the pycnocline balance k_v·A/D + m_ek = a·D.
        let a = params.a_gm_coeff;
        let nb = params.n_basins();
        for b in 0..nb {
            let ek = params.basin_frac[b] * params.m_ek;
            let ag = params.basin_frac[b] * a;
            let kva = params.k_v * params.area_low[b];
            params.d_init[b] = (ek + (ek * ek + 4.0 * ag * kva).sqrt()) / (2.0 * ag);
        }
        let n = params.variant.n_boxes();
        params.s_init = vec![35.0; n];
        params.t_target = vec![5.0; n];
        params.t_init = vec![5.0; n];
        params.fw_base = vec![0.0; params.variant.n_fluxes()];
        params.m_ib = 0.0;
        BoxState::initial(params)
    }

    #[test]
    fn zero_contrast_gives_zero_overturning() {
        let mut p = defaults::four_box();
        let st = uniform_state(&mut p);
        let f = compute_fluxes(&st, &p).unwrap();
        assert_eq!(f.m_n[0], 0.0);
    }

    #[test]
    fn hydraulic_and_diffusive_calibration() {
        let mut p = defaults::four_box();
        p.c_hydraulic = vec![62.5];
        p.k_v = 1e-5;
        p.area_low = vec![2e14];
        p.d_init = vec![400.0];
        p.alpha = 0.0;
        p.t_init = vec![5.0; 4];
        // Δρ = rho0·beta·ΔS = 1.5 kg/m³
        let ds = 1.5 / (p.rho0 * p.beta);
        p.s_init = vec![35.0, 35.0, 35.0 + ds, 35.0];
        p.v_total = 1e18;
        let st = BoxState::initial(&p);
        let f = compute_fluxes(&st, &p).unwrap();
        assert!((f.m_n[0] - 1.5e7).abs() < 1e-3, "{}", f.m_n[0]);
        assert!((f.m_u[0] - 5e6).abs() < 1e-6, "{}", f.m_u[0]);
    }

    #[test]
    fn fluxes_fault_on_non_positive_depth() {
        let p = defaults::four_box();
        let mut st = BoxState::initial(&p);
        st.d_pyc[0] = 0.0;
        assert!(matches!(
            compute_fluxes(&st, &p),
            Err(SimError::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn salt_tendencies_telescope_without_forcing() {
        for mut p in [defaults::four_box(), defaults::six_box()] {
            p.fw_base = vec![0.0; p.variant.n_fluxes()];
            let st = BoxState::initial(&p);
            let tend = tendencies(&st, &p, &vec![0.0; p.variant.n_fluxes()]).unwrap();
            let n = p.variant.n_boxes();
            let sum: f64 = tend.q_salt[..n].iter().sum();
            let scale: f64 = tend.q_salt[..n].iter().map(|x| x.abs()).sum();
            assert!(sum.abs() <= 1e-14 * scale.max(1.0), "{sum} vs {scale}");
        }
    }

    #[test]
    fn fixed_point_has_zero_tendency() {
        for mut p in [defaults::four_box(), defaults::six_box()] {
            let st = uniform_state(&mut p);
            let tend = tendencies(&st, &p, &vec![0.0; p.variant.n_fluxes()]).unwrap();
            let rel = tend.max_relative(&st, p.variant);
            assert!(rel < 1e-20, "{rel}");
        }
    }

    #[test]
    fn single_freshwater_term() {
        let mut p = defaults::four_box();
        let st = BoxState::initial(&p);
        p.fw_base = vec![0.0, 0.0];
        let base = tendencies(&st, &p, &[0.0, 0.0]).unwrap();
        p.fw_base = vec![0.0, 1e5];
        let forced = tendencies(&st, &p, &[0.0, 0.0]).unwrap();
        let v = p.variant;
        let dn = forced.q_salt[v.north(0)] - base.q_salt[v.north(0)];
        let dl = forced.q_salt[v.low(0)] - base.q_salt[v.low(0)];
        assert!((dn + 1e5 * p.s_ref).abs() < 1e-6);
        assert!((dl - 1e5 * p.s_ref).abs() < 1e-6);
        // noise enters exactly like the baseline
        let noisy = tendencies(&st, &p, &[0.0, 0.0]).unwrap();
        p.fw_base = vec![0.0, 0.0];
        let via_noise = tendencies(&st, &p, &[0.0, 1e5]).unwrap();
        assert_eq!(noisy, via_noise);
    }

    #[test]
    fn euler_zero_dt_is_identity() {
        let p = defaults::six_box();
        let st = BoxState::initial(&p);
        assert_eq!(euler_step(&st, &p, &[0.0; 4], 0.0).unwrap(), st);
    }

    #[test]
    fn euler_at_fixed_point_is_identity() {
        let mut p = defaults::four_box();
        let st = uniform_state(&mut p);
        let next = euler_step(&st, &p, &[0.0, 0.0], 0.25).unwrap();
        assert_eq!(next.q_salt, st.q_salt);
        assert_eq!(next.t_box, st.t_box);
        assert_eq!(next.d_pyc, st.d_pyc);
    }

    #[test]
    fn euler_single_step_matches_hand_update() {
        // Independent evaluation of the four-box right-hand side for the
        // default state: every edge is written out explicitly.
        let p = defaults::four_box();
        let st = BoxState::initial(&p);
        let (s, l, n, d) = (0, 1, 2, 3);
        let vol_l = p.area_low[0] * p.d_init[0];
        let vol_d = p.v_total - p.v_south - p.v_north[0] - vol_l;
        let vol = [p.v_south, vol_l, p.v_north[0], vol_d];
        let sal: Vec<f64> = p.s_init.clone();
        let t = p.t_init.clone();
        let rho =
            |i: usize| p.rho0 * (1.0 - p.alpha * (t[i] - p.t_ref) + p.beta * (sal[i] - p.s_ref));
        let dd = p.d_init[0];
        let mn = p.c_hydraulic[0] * (rho(n) - rho(l)) * dd * dd;
        let mu = p.k_v * p.area_low[0] / dd;
        let ms = p.m_ek - p.a_gm_coeff * dd;
        assert!(
            mn > 0.0 && ms > 0.0,
            "reference state must be in the 'on' regime"
        );

        let sr = p.s_ref;
        let dq = [
            ms * sal[d] - ms * sal[s] - p.fw_base[0] * sr,
            ms * sal[s] + mu * sal[d] - mn * sal[l] + (p.fw_base[0] + p.fw_base[1]) * sr,
            mn * sal[l] - mn * sal[n] - p.fw_base[1] * sr,
            mn * sal[n] - mu * sal[d] - ms * sal[d],
        ];
        let relax = |i: usize| (p.t_target[i] - t[i]) / p.tau_relax;
        let dt = [
            ms * (t[d] - t[s]) / vol[s] + relax(s),
            (ms * (t[s] - t[l]) + mu * (t[d] - t[l])) / vol[l] + relax(l),
            mn * (t[l] - t[n]) / vol[n] + relax(n),
            mn * (t[n] - t[d]) / vol[d],
        ];
        let h = 0.25 * SECONDS_PER_YEAR;
        let next = euler_step(&st, &p, &[0.0, 0.0], 0.25).unwrap();
        for i in 0..4 {
            let want_q = st.q_salt[i] + h * dq[i];
            assert!(
                (next.q_salt[i] - want_q).abs() <= 1e-12 * want_q.abs(),
                "q[{i}]"
            );
            let want_t = t[i] + h * dt[i];
            assert!(
                (next.t_box[i] - want_t).abs() < 1e-10,
                "t[{i}] {} vs {want_t}",
                next.t_box[i]
            );
        }
        let want_d = dd + h * (mu + ms - mn) / p.area_low[0];
        assert!((next.d_pyc[0] - want_d).abs() < 1e-9);
        assert_eq!(next.time, 0.25);
    }

    #[test]
    fn invalid_state_is_a_fault() {
        let p = defaults::four_box();
        let mut st = BoxState::initial(&p);
        st.q_salt[2] = -1.0;
        let err = euler_step(&st, &p, &[0.0, 0.0], 0.25);
        assert!(err.is_err());
    }
}
