use std::time::Instant;

use ndarray::s;
use rayon::prelude::*;
use serde::Serialize;

use super::EvalError;
use crate::boxmodel::{simulate, split_seed, BoxParams, NoiseSeq, Trajectory};
use crate::rollout::{blocks_for, rollout_many, Forecaster, RolloutInput};

/// Wall-clock comparison of simulator and surrogate on the same workload.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpeedReport {
    pub n_sims: usize,
    pub n_steps: usize,
    pub workers: usize,
    pub hardware: String,
    pub simulator_wall_s: f64,
    pub simulator_per_trajectory_s: f64,
    /// Absent in simulator-only runs.
    pub surrogate_wall_s: Option<f64>,
    pub surrogate_per_trajectory_s: Option<f64>,
    /// Simulator time over surrogate time; absent in simulator-only runs.
    pub ratio: Option<f64>,
    pub surrogate_rows: Option<usize>,
}

/// CPU model, logical core count, worker count, OS and architecture.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{cpu}; {cores} logical cores; {} workers; {}-{}",
        rayon::current_num_threads(),
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Simulates every parameter set for `n_steps`, then, when a model is given,
/// rolls it forward from each run's first `history` rows to at least the
/// same length with the same forcing. Both sides use the current worker
/// pool; the surrogate batches members.
pub fn speed_benchmark<F: Forecaster + ?Sized>(
    model: Option<&F>,
    params: &[BoxParams],
    n_steps: usize,
    sigma: f64,
    base_seed: u64,
) -> Result<SpeedReport, EvalError> {
    if params.is_empty() {
        return Err(EvalError::Empty("parameter set"));
    }
    let noises: Vec<NoiseSeq> = params
        .iter()
        .enumerate()
        .map(|(k, p)| {
            NoiseSeq::generate(
                split_seed(base_seed, k as u64),
                sigma,
                n_steps,
                p.variant.n_fluxes(),
            )
        })
        .collect();
    let t0 = Instant::now();
    let sims: Vec<Trajectory> = params
        .par_iter()
        .zip(&noises)
        .map(|(p, n)| simulate(p, n, n_steps))
        .collect::<Result<_, _>>()?;
    let simulator_wall_s = t0.elapsed().as_secs_f64();
    let n = params.len() as f64;
    let mut report = SpeedReport {
        n_sims: params.len(),
        n_steps,
        workers: rayon::current_num_threads(),
        hardware: hardware_descriptor(),
        simulator_wall_s,
        simulator_per_trajectory_s: simulator_wall_s / n,
        surrogate_wall_s: None,
        surrogate_per_trajectory_s: None,
        ratio: None,
        surrogate_rows: None,
    };
    let Some(model) = model else {
        return Ok(report);
    };
    let (h, l) = (model.history(), model.horizon());
    let n_blocks = blocks_for(n_steps, h, l);
    let total = h + n_blocks * l;
    let long_noises: Vec<NoiseSeq> = noises
        .iter()
        .zip(params)
        .enumerate()
        .map(|(k, (nz, p))| {
            if total <= nz.n_steps() {
                nz.clone()
            } else {
                NoiseSeq::generate(
                    split_seed(base_seed, k as u64),
                    sigma,
                    total,
                    p.variant.n_fluxes(),
                )
            }
        })
        .collect();
    let inputs: Vec<RolloutInput<'_>> = sims
        .iter()
        .zip(&long_noises)
        .map(|(t, noise)| RolloutInput {
            seed_window: t.channels.slice(s![..h, ..]),
            params: &t.params,
            noise,
        })
        .collect();
    let t1 = Instant::now();
    let out = rollout_many(model, &inputs, n_blocks);
    let surrogate_wall_s = t1.elapsed().as_secs_f64();
    if let Some((k, Err(e))) = out.iter().enumerate().find(|(_, r)| r.is_err()) {
        return Err(EvalError::Mismatch(format!(
            "surrogate rollout {k} failed: {e}"
        )));
    }
    report.surrogate_wall_s = Some(surrogate_wall_s);
    report.surrogate_per_trajectory_s = Some(surrogate_wall_s / n);
    report.ratio = Some(simulator_wall_s / surrogate_wall_s.max(f64::MIN_POSITIVE));
    report.surrogate_rows = Some(total);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxmodel::{defaults, Variant};
    use crate::dataset::{Mode, Standardizer};
    use crate::rollout::Persistence;

    #[test]
    fn smoke_and_simulator_only() {
        let p = defaults::four_box();
        let std = Standardizer::identity(&crate::boxmodel::channel_names(Variant::FourBox), 2, &[]);
        let m = Persistence::new(Variant::FourBox, Mode::Stochastic, 100, 50, std);
        let r = speed_benchmark(Some(&m), std::slice::from_ref(&p), 400, 1e5, 1).unwrap();
        assert_eq!(r.n_sims, 1);
        assert!(r.ratio.is_some_and(|x| x > 0.0));
        assert_eq!(r.surrogate_rows, Some(400));
        let only = speed_benchmark::<Persistence>(None, &[p], 400, 1e5, 1).unwrap();
        assert!(only.ratio.is_none() && only.surrogate_wall_s.is_none());
    }
}
