//! Versioned default parameters and sampling bounds, shipped as
//! `data/defaults.json`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{BoxParams, Variant};

const DEFAULTS_JSON: &str = include_str!("../../data/defaults.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateRange {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantDefaults {
    pub params: BoxParams,
    /// Uniform sampling ranges; their order defines the static covariate order.
    pub bounds: Vec<CovariateRange>,
    /// Overrides placing the model just past its collapse threshold, so that
    /// forcing noise changes the collapse time.
    pub near_threshold: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultsFile {
    pub version: u32,
    pub four_box: VariantDefaults,
    pub six_box: VariantDefaults,
}

pub fn file() -> &'static DefaultsFile {
    static PARSED: OnceLock<DefaultsFile> = OnceLock::new();
    PARSED.get_or_init(|| {
        serde_json::from_str(DEFAULTS_JSON).expect("bundled defaults.json is valid")
    })
}

pub fn for_variant(variant: Variant) -> &'static VariantDefaults {
    match variant {
        Variant::FourBox => &file().four_box,
        Variant::SixBox => &file().six_box,
    }
}

pub fn params(variant: Variant) -> BoxParams {
    for_variant(variant).params.clone()
}

pub fn four_box() -> BoxParams {
    params(Variant::FourBox)
}

pub fn six_box() -> BoxParams {
    params(Variant::SixBox)
}

/// Default parameters with the near-threshold overrides applied.
pub fn near_threshold(variant: Variant) -> BoxParams {
    let d = for_variant(variant);
    let mut p = d.params.clone();
    for (name, value) in &d.near_threshold {
        p.set(name, *value).expect("defaults name known covariates");
    }
    p
}
