use serde::{Deserialize, Serialize};

use super::SimError;

/// Which overturning model a parameter set describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Atlantic-only: south, low, north, deep.
    FourBox,
    /// Atlantic and Pacific: south, low/north per basin, shared deep.
    SixBox,
}

impl Variant {
    pub fn n_basins(self) -> usize {
        match self {
            Variant::FourBox => 1,
            Variant::SixBox => 2,
        }
    }

    pub fn n_boxes(self) -> usize {
        2 + 2 * self.n_basins()
    }

    pub fn n_fluxes(self) -> usize {
        match self {
            Variant::FourBox => 2,
            Variant::SixBox => 4,
        }
    }

    /// Index of the southern box.
    pub fn south(self) -> usize {
        0
    }

    /// Index of the low-latitude box of `basin`.
    pub fn low(self, basin: usize) -> usize {
        1 + 2 * basin
    }

    /// Index of the high-latitude box of `basin`.
    pub fn north(self, basin: usize) -> usize {
        2 + 2 * basin
    }

    /// Index of the shared deep box.
    pub fn deep(self) -> usize {
        self.n_boxes() - 1
    }

    pub fn box_names(self) -> &'static [&'static str] {
        match self {
            Variant::FourBox => &["south", "low", "north", "deep"],
            Variant::SixBox => &[
                "south",
                "low_atl",
                "north_atl",
                "low_pac",
                "north_pac",
                "deep",
            ],
        }
    }

    pub fn flux_names(self) -> &'static [&'static str] {
        match self {
            Variant::FourBox => &["fw_south", "fw_north"],
            Variant::SixBox => &["fw_south", "fw_north_atl", "fw_north_pac", "fw_interbasin"],
        }
    }

    pub fn basin_names(self) -> &'static [&'static str] {
        match self {
            Variant::FourBox => &["atlantic"],
            Variant::SixBox => &["atlantic", "pacific"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::FourBox => "four-box",
            Variant::SixBox => "six-box",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "four-box" | "four" | "4" => Ok(Variant::FourBox),
            "six-box" | "six" | "6" => Ok(Variant::SixBox),
            other => Err(SimError::InvalidParams(format!(
                "unknown variant '{other}'"
            ))),
        }
    }
}

/// Static configuration of a box-model run. All quantities in SI units
/// unless the field says otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxParams {
    pub variant: Variant,
    /// Baseline freshwater fluxes, m³/s, ordered as [`Variant::flux_names`].
    pub fw_base: Vec<f64>,
    /// Southern Ekman transport, m³/s.
    pub m_ek: f64,
    /// Eddy return coefficient with the zonal/meridional length ratio folded in, m²/s.
    pub a_gm_coeff: f64,
    /// Vertical diffusivity, m²/s.
    pub k_v: f64,
    /// Hydraulic overturning constant per basin, m⁴ s⁻¹ kg⁻¹.
    pub c_hydraulic: Vec<f64>,
    /// Low-latitude area per basin, m².
    pub area_low: Vec<f64>,
    /// Share of Ekman and eddy transport per basin; sums to one.
    pub basin_frac: Vec<f64>,
    /// Southern box volume, m³.
    pub v_south: f64,
    /// High-latitude box volume per basin, m³.
    pub v_north: Vec<f64>,
    /// Total ocean volume, m³.
    pub v_total: f64,
    /// Restoring target per box, °C. The deep entry is ignored.
    pub t_target: Vec<f64>,
    /// Surface temperature restoring timescale, s.
    pub tau_relax: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho0: f64,
    pub s_ref: f64,
    pub t_ref: f64,
    /// Initial pycnocline depth per basin, m.
    pub d_init: Vec<f64>,
    /// Initial salinity per box, psu.
    pub s_init: Vec<f64>,
    /// Initial temperature per box, °C.
    pub t_init: Vec<f64>,
    /// Pacific-to-Atlantic low-latitude volume exchange, m³/s (six-box only).
    pub m_ib: f64,
}

impl BoxParams {
    pub fn n_basins(&self) -> usize {
        self.variant.n_basins()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let v = self.variant;
        let nb = v.n_basins();
        let nbox = v.n_boxes();
        let bad = |msg: String| Err(SimError::InvalidParams(msg));

        if self.fw_base.len() != v.n_fluxes() {
            return bad(format!(
                "{v} expects {} flux baselines, got {}",
                v.n_fluxes(),
                self.fw_base.len()
            ));
        }
        for (name, vec, want) in [
            ("c_hydraulic", &self.c_hydraulic, nb),
            ("area_low", &self.area_low, nb),
            ("basin_frac", &self.basin_frac, nb),
            ("v_north", &self.v_north, nb),
            ("d_init", &self.d_init, nb),
            ("t_target", &self.t_target, nbox),
            ("s_init", &self.s_init, nbox),
            ("t_init", &self.t_init, nbox),
        ] {
            if vec.len() != want {
                return bad(format!(
                    "{name} has {} entries, {v} needs {want}",
                    vec.len()
                ));
            }
        }
        let all_finite = self
            .fw_base
            .iter()
            .chain(&self.c_hydraulic)
            .chain(&self.area_low)
            .chain(&self.basin_frac)
            .chain(&self.v_north)
            .chain(&self.d_init)
            .chain(&self.t_target)
            .chain(&self.s_init)
            .chain(&self.t_init)
            .chain(&[
                self.m_ek,
                self.a_gm_coeff,
                self.k_v,
                self.v_south,
                self.v_total,
                self.tau_relax,
                self.alpha,
                self.beta,
                self.rho0,
                self.s_ref,
                self.t_ref,
                self.m_ib,
            ])
            .all(|x| x.is_finite());
        if !all_finite {
            return bad("non-finite parameter".into());
        }
        if self.area_low.iter().any(|&a| a <= 0.0)
            || self.v_north.iter().any(|&x| x <= 0.0)
            || self.v_south <= 0.0
            || self.v_total <= 0.0
            || self.k_v <= 0.0
            || self.tau_relax <= 0.0
        {
            return bad("areas, volumes, k_v and tau_relax must be strictly positive".into());
        }
        if let Some(d) = self
            .d_init
            .iter()
            .find(|&&d| !(d > 0.0 && d < super::MAX_DEPTH))
        {
            return bad(format!("d_init {d} outside (0, {})", super::MAX_DEPTH));
        }
        if self.basin_frac.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return bad("basin_frac entries must lie in (0, 1]".into());
        }
        let frac_sum: f64 = self.basin_frac.iter().sum();
        if (frac_sum - 1.0).abs() > 1e-12 {
            return bad(format!("basin_frac sums to {frac_sum}, expected 1"));
        }
        if self
            .s_init
            .iter()
            .any(|&s| !(s > 0.0 && s < super::MAX_SALINITY))
        {
            return bad("initial salinities must lie in (0, 60) psu".into());
        }
        if v == Variant::FourBox && self.m_ib != 0.0 {
            return bad("four-box configuration has no inter-basin exchange".into());
        }
        let fixed = self.v_south + self.v_north.iter().sum::<f64>();
        let low: f64 = self
            .area_low
            .iter()
            .zip(&self.d_init)
            .map(|(a, d)| a * d)
            .sum();
        if fixed + low >= self.v_total {
            return bad("deep box has non-positive initial volume".into());
        }
        Ok(())
    }

    /// Canonical static covariates in order. [`get`](Self::get) and
    /// [`set`](Self::set) additionally address `c_hydraulic_<basin>`.
    pub fn covariate_names(variant: Variant) -> Vec<String> {
        let mut names: Vec<String> = variant.flux_names().iter().map(|s| s.to_string()).collect();
        names.extend(["m_ek", "a_gm_coeff", "k_v"].map(String::from));
        for b in variant.basin_names() {
            names.push(format!("d_init_{}", short_basin(b)));
        }
        for b in variant.box_names() {
            names.push(format!("s_init_{b}"));
        }
        for b in variant.box_names() {
            names.push(format!("t_init_{b}"));
        }
        if variant == Variant::SixBox {
            names.push("m_ib".into());
        }
        names
    }

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        let v = self.variant;
        if let Some(i) = v.flux_names().iter().position(|n| *n == name) {
            return self.fw_base.get_mut(i);
        }
        match name {
            "m_ek" => return Some(&mut self.m_ek),
            "a_gm_coeff" => return Some(&mut self.a_gm_coeff),
            "k_v" => return Some(&mut self.k_v),
            "m_ib" if v == Variant::SixBox => return Some(&mut self.m_ib),
            _ => {}
        }
        let basin_idx = |suffix: &str| {
            v.basin_names()
                .iter()
                .position(|b| short_basin(b) == suffix)
        };
        if let Some(rest) = name.strip_prefix("c_hydraulic_") {
            return basin_idx(rest).and_then(|i| self.c_hydraulic.get_mut(i));
        }
        if let Some(rest) = name.strip_prefix("d_init_") {
            return basin_idx(rest).and_then(|i| self.d_init.get_mut(i));
        }
        let box_idx = |suffix: &str| v.box_names().iter().position(|b| *b == suffix);
        if let Some(rest) = name.strip_prefix("s_init_") {
            return box_idx(rest).and_then(|i| self.s_init.get_mut(i));
        }
        if let Some(rest) = name.strip_prefix("t_init_") {
            return box_idx(rest).and_then(|i| self.t_init.get_mut(i));
        }
        None
    }

    pub fn get(&self, name: &str) -> Result<f64, SimError> {
        let mut copy = self.clone();
        copy.slot(name)
            .map(|x| *x)
            .ok_or_else(|| SimError::UnknownCovariate(name.to_string()))
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), SimError> {
        let slot = self
            .slot(name)
            .ok_or_else(|| SimError::UnknownCovariate(name.to_string()))?;
        *slot = value;
        Ok(())
    }

    /// Ordered values for a list of covariates, used as static model inputs.
    pub fn covariates(&self, names: &[String]) -> Result<Vec<f64>, SimError> {
        names.iter().map(|n| self.get(n)).collect()
    }
}

fn short_basin(b: &str) -> &str {
    match b {
        "atlantic" => "atl",
        "pacific" => "pac",
        other => other,
    }
}

/// Linear equation of state.
pub fn density(t: f64, s: f64, params: &BoxParams) -> f64 {
    params.rho0 * (1.0 - params.alpha * (t - params.t_ref) + params.beta * (s - params.s_ref))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxmodel::defaults;

    #[test]
    fn density_reference_point() {
        let p = defaults::four_box();
        assert_eq!(density(p.t_ref, p.s_ref, &p), p.rho0);
        let d = density(p.t_ref, p.s_ref + 1.0 / p.beta, &p);
        assert!((d - 2.0 * p.rho0).abs() < 1e-9 * p.rho0);
    }

    #[test]
    fn density_degenerate_eos() {
        let mut p = defaults::four_box();
        p.alpha = 0.0;
        p.beta = 0.0;
        assert_eq!(density(17.0, 12.0, &p), p.rho0);
    }

    #[test]
    fn covariate_round_trip() {
        for p in [defaults::four_box(), defaults::six_box()] {
            let names = BoxParams::covariate_names(p.variant);
            let mut q = p.clone();
            for (i, n) in names.iter().enumerate() {
                q.set(n, i as f64 + 0.5).unwrap();
            }
            for (i, n) in names.iter().enumerate() {
                assert_eq!(q.get(n).unwrap(), i as f64 + 0.5, "{n}");
            }
        }
        assert_eq!(BoxParams::covariate_names(Variant::SixBox).len(), 22);
        assert!(defaults::four_box().get("m_ib").is_err());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut p = defaults::six_box();
        p.basin_frac = vec![0.5, 0.6];
        assert!(p.validate().is_err());
        let mut p = defaults::four_box();
        p.fw_base.push(0.0);
        assert!(p.validate().is_err());
        let mut p = defaults::four_box();
        p.d_init[0] = 4500.0;
        assert!(p.validate().is_err());
        defaults::four_box().validate().unwrap();
        defaults::six_box().validate().unwrap();
    }
}
