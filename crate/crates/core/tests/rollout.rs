use boxtip::boxmodel::{defaults, simulate, NoiseSeq, Trajectory, Variant};
use boxtip::dataset::{fit_standardizer, Mode, Standardizer};
use boxtip::ensemble::run_ensemble;
use boxtip::rollout::{
    autoregressive_rollout, ensemble_forecast, ensemble_forecast_seeds, rollout_batch, rollout_len,
    ForecastRequest, Forecaster, Persistence, RolloutError, RolloutInput, SimulatorOracle,
};
use ndarray::{s, Array2};

fn truth(seed: u64, n: usize) -> Trajectory {
    let p = defaults::near_threshold(Variant::FourBox);
    simulate(&p, &NoiseSeq::generate(seed, 1e5, n, 2), n).unwrap()
}

fn scaler(t: &Trajectory) -> Standardizer {
    fit_standardizer(&[t], &[], Mode::Stochastic).unwrap()
}

/// Persistence that breaks from the second block on for the member driven
/// by `noise_seed`, either with NaN output or by failing the whole call.
struct Poisoned {
    inner: Persistence,
    noise_seed: u64,
    fail_whole_batch: bool,
}

impl Forecaster for Poisoned {
    fn variant(&self) -> Variant {
        self.inner.variant()
    }
    fn mode(&self) -> Mode {
        self.inner.mode()
    }
    fn history(&self) -> usize {
        self.inner.history()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn standardizer(&self) -> &Standardizer {
        self.inner.standardizer()
    }
    fn forecast(&self, requests: &[ForecastRequest<'_>]) -> Result<Vec<Array2<f64>>, RolloutError> {
        let bad = requests
            .iter()
            .any(|r| r.noise.seed == self.noise_seed && r.start >= 150);
        if bad && self.fail_whole_batch {
            return Err(RolloutError::NoMembers);
        }
        let mut out = self.inner.forecast(requests)?;
        for (o, r) in out.iter_mut().zip(requests) {
            if r.noise.seed == self.noise_seed && r.start >= 150 {
                o.fill(f64::NAN);
            }
        }
        Ok(out)
    }
}

#[test]
fn twenty_blocks_give_1100_rows() {
    let t = truth(1, 1100);
    let m = Persistence::new(Variant::FourBox, Mode::Stochastic, 100, 50, scaler(&t));
    let r = autoregressive_rollout(&m, t.channels.slice(s![..100, ..]), &t.params, &t.noise, 20)
        .unwrap();
    assert_eq!(r.trajectory.n_steps(), rollout_len(100, 50, 20));
    assert_eq!(r.trajectory.n_steps(), 1100);
    assert_eq!(r.block_starts.first(), Some(&100));
    assert_eq!(r.block_starts.last(), Some(&1050));
    assert_eq!(
        r.trajectory.channels.slice(s![..100, ..]),
        t.channels.slice(s![..100, ..])
    );
}

#[test]
fn failing_member_is_isolated() {
    let t = truth(1, 400);
    let noises: Vec<NoiseSeq> = (0..3).map(|k| NoiseSeq::generate(k, 1e5, 400, 2)).collect();
    for fail_whole_batch in [false, true] {
        let m = Poisoned {
            inner: Persistence::new(Variant::FourBox, Mode::Stochastic, 100, 50, scaler(&t)),
            noise_seed: 1,
            fail_whole_batch,
        };
        let inputs: Vec<RolloutInput<'_>> = noises
            .iter()
            .map(|noise| RolloutInput {
                seed_window: t.channels.slice(s![..100, ..]),
                params: &t.params,
                noise,
            })
            .collect();
        let out = rollout_batch(&m, &inputs, 4);
        assert!(out[0].is_ok() && out[2].is_ok());
        if fail_whole_batch {
            assert!(matches!(out[1], Err(RolloutError::NoMembers)));
        } else {
            assert!(matches!(out[1], Err(RolloutError::NonFinite { block: 1 })));
        }
    }
}

#[test]
fn zero_sigma_members_identical() {
    let t = truth(1, 400);
    let m = SimulatorOracle::new(Variant::FourBox, Mode::Stochastic, 100, 50, scaler(&t));
    let ens =
        ensemble_forecast(&m, t.channels.slice(s![..100, ..]), &t.params, 4, 0.0, 9, 4).unwrap();
    let first = ens.members[0].as_ref().unwrap();
    for member in &ens.members {
        assert_eq!(
            member.as_ref().unwrap().trajectory.channels,
            first.trajectory.channels
        );
    }
}

#[test]
fn oracle_ensemble_matches_simulator_ensemble() {
    let t = truth(1, 1100);
    let m = SimulatorOracle::new(Variant::FourBox, Mode::Stochastic, 100, 50, scaler(&t));
    let n_blocks = 20;
    let total = rollout_len(100, 50, n_blocks);
    let reference = run_ensemble(&t.params, 12, 1e5, 77, total).unwrap();
    // The oracle ignores its history, so members differ from the reference
    // only inside the shared seed window, which ends long before any collapse.
    let seed0 = reference.members[0]
        .as_ref()
        .unwrap()
        .channels
        .slice(s![..100, ..])
        .to_owned();
    let ens = ensemble_forecast(&m, seed0.view(), &t.params, 12, 1e5, 77, n_blocks).unwrap();
    assert_eq!(ens.seeds, reference.seeds);
    let a = &ens.members[0].as_ref().unwrap().trajectory.channels;
    let b = &reference.members[0].as_ref().unwrap().channels;
    let err = (a - b).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(err < 1e-8, "{err:e}");
    assert_eq!(ens.collapse_times(0), reference.collapse_times(0));
    assert_eq!(ens.atlantic, reference.atlantic);
}

#[test]
fn permuting_seeds_leaves_stats_unchanged() {
    let t = truth(1, 1100);
    let m = SimulatorOracle::new(Variant::FourBox, Mode::Stochastic, 100, 50, scaler(&t));
    let seed = t.channels.slice(s![..100, ..]);
    let seeds: Vec<u64> = (10..18).collect();
    let mut reversed = seeds.clone();
    reversed.reverse();
    let a = ensemble_forecast_seeds(&m, seed, &t.params, &seeds, 1e5, 20).unwrap();
    let b = ensemble_forecast_seeds(&m, seed, &t.params, &reversed, 1e5, 20).unwrap();
    assert_eq!(a.atlantic, b.atlantic);
    let mut ta = a.collapse_times(0);
    ta.reverse();
    assert_eq!(ta, b.collapse_times(0));
    assert!(a.atlantic.n_collapsed > 0);
}

#[test]
fn ensemble_is_deterministic() {
    let t = truth(1, 400);
    let m = Persistence::new(Variant::FourBox, Mode::Stochastic, 100, 50, scaler(&t));
    let seed = t.channels.slice(s![..100, ..]);
    let run = || {
        let e = ensemble_forecast(&m, seed, &t.params, 5, 1e5, 3, 4).unwrap();
        e.members
            .into_iter()
            .map(|r| r.unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn deterministic_mode_rejected_for_ensembles() {
    let t = truth(1, 400);
    let mut std = scaler(&t);
    std.known_mean = vec![0.0; 2];
    std.known_std = vec![1.0; 2];
    let m = Persistence::new(Variant::FourBox, Mode::Deterministic, 100, 50, std);
    let err = ensemble_forecast(&m, t.channels.slice(s![..100, ..]), &t.params, 2, 1e5, 3, 1)
        .unwrap_err();
    assert!(matches!(err, RolloutError::NotStochastic));
}
