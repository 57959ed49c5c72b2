//! Parameter sampling, stochastic ensembles and collapse-time statistics.

mod sweep;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxmodel::{
    defaults::{self, CovariateRange},
    simulate, split_seed, write_archive, ArchiveError, BoxParams, NoiseSeq, SimError, Trajectory,
    Variant,
};

pub use sweep::{
    bifurcation_sweep, bistable_interval, hysteresis_loop, BranchPoint, BranchTable,
    SweepDirection, EQUILIBRIUM_TOL,
};

/// Uniform sampling ranges for the static covariates of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub variant: Variant,
    pub ranges: Vec<CovariateRange>,
    pub seed: u64,
}

impl ParamBounds {
    pub fn defaults(variant: Variant, seed: u64) -> Self {
        ParamBounds {
            variant,
            ranges: defaults::for_variant(variant).bounds.clone(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let known = BoxParams::covariate_names(self.variant);
        for r in &self.ranges {
            if !known.contains(&r.name) {
                return Err(SimError::UnknownCovariate(r.name.clone()));
            }
            if !(r.low <= r.high) || !r.low.is_finite() || !r.high.is_finite() {
                return Err(SimError::InvalidParams(format!(
                    "bounds for {} are not an interval: [{}, {}]",
                    r.name, r.low, r.high
                )));
            }
        }
        Ok(())
    }

    /// Names of the sampled covariates, i.e. the static model inputs.
    pub fn names(&self) -> Vec<String> {
        self.ranges.iter().map(|r| r.name.clone()).collect()
    }
}

/// Draws every bounded covariate uniformly on top of the variant defaults.
pub fn sample_params<R: Rng + ?Sized>(
    bounds: &ParamBounds,
    rng: &mut R,
) -> Result<BoxParams, SimError> {
    bounds.validate()?;
    let mut p = defaults::params(bounds.variant);
    for r in &bounds.ranges {
        let u: f64 = rng.random();
        p.set(&r.name, r.low + (r.high - r.low) * u)?;
    }
    p.validate()?;
    Ok(p)
}

/// `count` parameter sets drawn in sequence from a generator seeded with
/// `bounds.seed`.
pub fn sample_param_sets(bounds: &ParamBounds, count: usize) -> Result<Vec<BoxParams>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(bounds.seed);
    (0..count)
        .map(|_| sample_params(bounds, &mut rng))
        .collect()
}

/// Summary of collapse times over an ensemble. Moments and percentiles
/// cover collapsed members only and are absent when none collapsed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseStats {
    pub n_members: usize,
    pub n_collapsed: usize,
    pub fraction_collapsed: f64,
    pub mean: Option<f64>,
    /// Sample (n−1) standard deviation; needs two collapsed members.
    pub std: Option<f64>,
    pub p2_5: Option<f64>,
    pub p50: Option<f64>,
    pub p97_5: Option<f64>,
}

/// Linear interpolation between order statistics of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn collapse_stats(times: &[Option<f64>], n_members: usize) -> CollapseStats {
    let mut t: Vec<f64> = times.iter().flatten().copied().collect();
    t.sort_by(f64::total_cmp);
    let n = t.len();
    let fraction = if n_members == 0 {
        0.0
    } else {
        n as f64 / n_members as f64
    };
    if n == 0 {
        return CollapseStats {
            n_members,
            n_collapsed: 0,
            fraction_collapsed: fraction,
            mean: None,
            std: None,
            p2_5: None,
            p50: None,
            p97_5: None,
        };
    }
    let mean = t.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let ss: f64 = t.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    CollapseStats {
        n_members,
        n_collapsed: n,
        fraction_collapsed: fraction,
        mean: Some(mean),
        std,
        p2_5: Some(percentile(&t, 0.025)),
        p50: Some(percentile(&t, 0.5)),
        p97_5: Some(percentile(&t, 0.975)),
    }
}

/// Output of [`run_ensemble`]; failed members keep their error.
#[derive(Debug)]
pub struct EnsembleRun {
    pub members: Vec<Result<Trajectory, SimError>>,
    pub seeds: Vec<u64>,
    pub atlantic: CollapseStats,
    /// Present for the six-box model.
    pub pacific: Option<CollapseStats>,
}

impl EnsembleRun {
    pub fn collapse_times(&self, basin: usize) -> Vec<Option<f64>> {
        self.members
            .iter()
            .map(|m| m.as_ref().ok().and_then(|t| t.collapse_time(basin)))
            .collect()
    }

    pub fn n_failed(&self) -> usize {
        self.members.iter().filter(|m| m.is_err()).count()
    }
}

/// Identical parameters and initial conditions, independent noise per
/// member. Member `k` uses `split_seed(base_seed, k)`.
pub fn run_ensemble(
    params: &BoxParams,
    n_members: usize,
    sigma: f64,
    base_seed: u64,
    n_steps: usize,
) -> Result<EnsembleRun, SimError> {
    if n_members == 0 {
        return Err(SimError::InvalidParams(
            "ensemble needs at least one member".into(),
        ));
    }
    params.validate()?;
    let seeds: Vec<u64> = (0..n_members as u64)
        .map(|k| split_seed(base_seed, k))
        .collect();
    let nf = params.variant.n_fluxes();
    let members: Vec<Result<Trajectory, SimError>> = seeds
        .par_iter()
        .map(|&seed| {
            simulate(
                params,
                &NoiseSeq::generate(seed, sigma, n_steps, nf),
                n_steps,
            )
        })
        .collect();
    let mut run = EnsembleRun {
        members,
        seeds,
        atlantic: collapse_stats(&[], 0),
        pacific: None,
    };
    run.atlantic = collapse_stats(&run.collapse_times(0), n_members);
    if params.variant == Variant::SixBox {
        run.pacific = Some(collapse_stats(&run.collapse_times(1), n_members));
    }
    Ok(run)
}

#[derive(Serialize)]
struct StatsFile<'a> {
    atlantic: &'a CollapseStats,
    pacific: Option<&'a CollapseStats>,
    failures: Vec<(usize, String)>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes member archives under `members/`, plus `stats.json` and
/// `collapse_times.csv`. Failed members appear only in the csv and stats.
pub fn write_ensemble(dir: &Path, run: &EnsembleRun) -> Result<(), ArchiveError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ArchiveError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut csv = String::from("member,seed,status,collapse_time_atlantic,collapse_time_pacific\n");
    let mut failures = Vec::new();
    for (k, (m, seed)) in run.members.iter().zip(&run.seeds).enumerate() {
        match m {
            Ok(t) => {
                write_archive(&dir.join("members").join(format!("member_{k:05}")), t)?;
                csv += &format!(
                    "{k},{seed},ok,{},{}\n",
                    fmt_opt(t.collapse_time_atlantic),
                    fmt_opt(t.collapse_time_pacific)
                );
            }
            Err(e) => {
                csv += &format!("{k},{seed},fault,,\n");
                failures.push((k, e.to_string()));
            }
        }
    }
    let path = dir.join("collapse_times.csv");
    fs::write(&path, csv).map_err(io(&path))?;
    let stats = StatsFile {
        atlantic: &run.atlantic,
        pacific: run.pacific.as_ref(),
        failures,
    };
    let path = dir.join("stats.json");
    let text = serde_json::to_string_pretty(&stats).map_err(|source| ArchiveError::Manifest {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text).map_err(io(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_bounds_pin_value() {
        let b = ParamBounds {
            variant: Variant::FourBox,
            ranges: vec![CovariateRange {
                name: "fw_north".into(),
                low: 123.0,
                high: 123.0,
            }],
            seed: 0,
        };
        let p = sample_params(&b, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.fw_base[1], 123.0);
    }

    #[test]
    fn sampling_is_uniform_and_deterministic() {
        let b = ParamBounds {
            variant: Variant::FourBox,
            ranges: vec![CovariateRange {
                name: "m_ek".into(),
                low: 2e7,
                high: 3e7,
            }],
            seed: 9,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_params(&b, &mut rng).unwrap().m_ek)
            .sum::<f64>()
            / n as f64;
        assert!((mean / 2.5e7 - 1.0).abs() < 0.01, "{mean}");

        let full = ParamBounds::defaults(Variant::SixBox, 3);
        let a = sample_params(&full, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c = sample_params(&full, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn stats_basic_cases() {
        let s = collapse_stats(&[Some(100.0), Some(100.0), Some(100.0)], 3);
        assert_eq!(s.mean, Some(100.0));
        assert_eq!(s.std, Some(0.0));
        assert_eq!(s.fraction_collapsed, 1.0);

        let none = collapse_stats(&[None, None], 2);
        assert_eq!(none.fraction_collapsed, 0.0);
        assert!(none.mean.is_none() && none.std.is_none() && none.p50.is_none());

        let two = collapse_stats(&[Some(100.0), Some(200.0)], 2);
        assert_eq!(two.mean, Some(150.0));
        assert!((two.std.unwrap() - 70.710_678_118_654_76).abs() < 1e-9);
    }

    #[test]
    fn percentiles_interpolate() {
        let xs: Vec<f64> = (0..=10).map(f64::from).collect();
        assert_eq!(percentile(&xs, 0.5), 5.0);
        assert!((percentile(&xs, 0.025) - 0.25).abs() < 1e-12);
        assert!((percentile(&xs, 0.975) - 9.75).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_moments() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let d = Normal::new(500.0, 30.0).unwrap();
        let times: Vec<Option<f64>> = (0..1000)
            .map(|_| Some(f64::max(d.sample(&mut rng), 0.0)))
            .collect();
        let s = collapse_stats(&times, 1000);
        assert!((s.mean.unwrap() - 500.0).abs() < 3.0);
        assert!((s.std.unwrap() - 30.0).abs() < 3.0);
        assert!(s.p2_5 <= s.p50 && s.p50 <= s.p97_5);
    }

    #[test]
    fn zero_sigma_members_identical() {
        let p = defaults::near_threshold(Variant::FourBox);
        let run = run_ensemble(&p, 4, 0.0, 1, 1200).unwrap();
        let first = run.members[0].as_ref().unwrap();
        for m in &run.members {
            assert_eq!(m.as_ref().unwrap().channels, first.channels);
        }
        if run.atlantic.n_collapsed > 0 {
            assert_eq!(run.atlantic.std, Some(0.0));
        }
    }

    #[test]
    fn ensemble_files_written() {
        let p = defaults::near_threshold(Variant::FourBox);
        let run = run_ensemble(&p, 3, 1e5, 4, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_ensemble(dir.path(), &run).unwrap();
        let csv = fs::read_to_string(dir.path().join("collapse_times.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(dir
            .path()
            .join("members/member_00002/manifest.json")
            .exists());
        let stats: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("stats.json")).unwrap())
                .unwrap();
        assert_eq!(stats["atlantic"]["n_members"], 3);
    }

    #[test]
    fn failing_members_are_isolated() {
        let mut p = defaults::four_box();
        // An extreme flux drives the north box salinity negative.
        p.fw_base[1] = 5e8;
        let run = run_ensemble(&p, 3, 1e5, 0, 400).unwrap();
        assert_eq!(run.n_failed(), 3);
        assert_eq!(run.atlantic.n_members, 3);
    }

    proptest::proptest! {
        #[test]
        fn stats_invariant_under_permutation(
            mut times in proptest::collection::vec(proptest::option::of(0.0f64..1000.0), 1..40),
            rot in 0usize..40,
        ) {
            let n = times.len();
            let a = collapse_stats(&times, n);
            times.rotate_left(rot % n);
            times.reverse();
            let b = collapse_stats(&times, n);
            proptest::prop_assert_eq!(a.n_collapsed, b.n_collapsed);
            proptest::prop_assert_eq!(a.p50, b.p50);
            proptest::prop_assert_eq!(a.p2_5, b.p2_5);
            if let (Some(x), Some(y)) = (a.mean, b.mean) {
                proptest::prop_assert!((x - y).abs() < 1e-9);
            }
            if let (Some(lo), Some(mid), Some(hi)) = (a.p2_5, a.p50, a.p97_5) {
                proptest::prop_assert!(lo <= mid && mid <= hi);
            }
        }
    }
}
