use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use boxtip::boxmodel::{
    channel_names, simulate, split_seed, write_archive, NoiseSeq, Trajectory, Variant,
};
use boxtip::dataset::{
    assign_splits, build_dataset, fit_standardizer, generate_trajectories, read_trajectories,
    trajectory_name, write_dataset, write_trajectories, DatasetManifest, Splits,
};
use boxtip::ensemble::{
    bistable_interval, hysteresis_loop, run_ensemble, sample_param_sets, write_ensemble,
    BranchTable, CollapseStats,
};
use boxtip::eval::{
    evaluate, export_predictions, ingest_external_predictions, persistence_set, predict_set,
    report_markdown, speed_benchmark, write_evaluation, write_reports, MetricReport, PredictionSet,
};
use boxtip::rollout::{blocks_for, ensemble_forecast};
use boxtip::sdtw::sdtw_value_grad;
use boxtip::tft::{
    load_model_for, save_model, train_step, train_with, write_history, Adam, Batch, LossKind,
    ModelMeta, TftModel,
};
use ndarray::{s, Array2};
use serde::Serialize;

use crate::config::{streams, RunConfig};
use crate::manifest::write_json;

/// Directory of trajectory archives inside a `gen-data` output.
pub const TRAJECTORY_DIR: &str = "trajectories";

pub fn loss_label(loss: LossKind) -> &'static str {
    match loss {
        LossKind::QuantileMedian => "Quantile (median)",
        LossKind::Sdtw => "SDTW",
    }
}

fn seed_for(cfg: &RunConfig, stream: u64) -> u64 {
    split_seed(cfg.seed, stream)
}

fn linspace(low: f64, high: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![low],
        _ => (0..n)
            .map(|i| low + (high - low) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub fn read_manifest(dataset: &Path) -> Result<DatasetManifest> {
    let path = dataset.join("dataset.json");
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Names and archives of the test split of a `gen-data` output.
pub fn test_split(dataset: &Path) -> Result<(DatasetManifest, Vec<String>, Vec<Trajectory>)> {
    let m = read_manifest(dataset)?;
    let names: Vec<String> = m
        .splits
        .test
        .iter()
        .map(|&i| m.trajectories[i].clone())
        .collect();
    ensure!(
        !names.is_empty(),
        "dataset {} has an empty test split",
        dataset.display()
    );
    let trajs = read_trajectories(&dataset.join(TRAJECTORY_DIR), &names)?;
    Ok((m, names, trajs))
}

pub fn load_trained(cfg: &RunConfig, m: &DatasetManifest) -> Result<TftModel> {
    let model = load_model_for(&cfg.paths.model, &m.channel_names)
        .with_context(|| format!("loading model {}", cfg.paths.model.display()))?;
    ensure!(
        model.meta.variant == m.variant && model.meta.mode == m.mode,
        "model is a {} {:?} surrogate, dataset is {} {:?}",
        model.meta.variant,
        model.meta.mode,
        m.variant,
        m.mode
    );
    Ok(model)
}

#[derive(Serialize)]
struct SimulateSummary {
    variant: Variant,
    n_steps: usize,
    noise_seed: u64,
    sigma: f64,
    collapse_time_atlantic: Option<f64>,
    collapse_time_pacific: Option<f64>,
}

pub fn simulate_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = cfg.params(cfg.simulate.params)?;
    let seed = seed_for(cfg, streams::NOISE);
    let noise = NoiseSeq::generate(seed, cfg.sigma, cfg.n_steps, p.variant.n_fluxes());
    let t = simulate(&p, &noise, cfg.n_steps)?;
    write_archive(&out.join("trajectory"), &t)?;
    write_json(
        &out.join("summary.json"),
        &SimulateSummary {
            variant: t.variant,
            n_steps: t.n_steps(),
            noise_seed: seed,
            sigma: cfg.sigma,
            collapse_time_atlantic: t.collapse_time_atlantic,
            collapse_time_pacific: t.collapse_time_pacific,
        },
    )?;
    eprintln!(
        "simulated {} steps; Atlantic collapse {:?}",
        t.n_steps(),
        t.collapse_time_atlantic
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepFile<'a> {
    up: &'a BranchTable,
    down: &'a BranchTable,
    threshold_sv: f64,
    /// Per basin, flux values where the branches separate.
    bistable: Vec<Vec<f64>>,
}

fn hysteresis_csv(up: &BranchTable, down: &BranchTable, variant: Variant) -> String {
    let mut header = vec!["flux".to_string()];
    for b in variant.basin_names() {
        let b = b.to_lowercase();
        header.push(format!("up_{b}_sv"));
        header.push(format!("down_{b}_sv"));
    }
    let mut out = header.join(",") + "\n";
    for p in &up.points {
        let mut row = vec![p.flux.to_string()];
        for (b, v) in p.m_n.iter().enumerate() {
            row.push(v.to_string());
            row.push(
                down.at(p.flux, b)
                    .map(|x| x.to_string())
                    .unwrap_or_default(),
            );
        }
        out += &(row.join(",") + "\n");
    }
    out
}

pub fn sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = cfg.params(cfg.simulate.params)?;
    let sw = &cfg.sweep;
    let grid = linspace(sw.low, sw.high, sw.points);
    let (up, down) = hysteresis_loop(&p, &sw.flux, &grid, sw.settle_years)?;
    let bistable: Vec<Vec<f64>> = (0..p.n_basins())
        .map(|b| bistable_interval(&up, &down, b, sw.threshold_sv))
        .collect();
    std::fs::write(
        out.join("hysteresis.csv"),
        hysteresis_csv(&up, &down, p.variant),
    )?;
    write_json(
        &out.join("branches.json"),
        &SweepFile {
            up: &up,
            down: &down,
            threshold_sv: sw.threshold_sv,
            bistable: bistable.clone(),
        },
    )?;
    for (b, name) in p.variant.basin_names().iter().enumerate() {
        match (bistable[b].first(), bistable[b].last()) {
            (Some(lo), Some(hi)) => eprintln!("{name}: bistable for {} in [{lo}, {hi}]", sw.flux),
            _ => eprintln!("{name}: no bistable interval above {} Sv", sw.threshold_sv),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct GenSummary {
    pool: usize,
    failed: Vec<(usize, String)>,
    collapsed: usize,
    selected: usize,
    n_examples: [usize; 3],
}

pub fn gen_data_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let bounds = cfg.bounds()?;
    let noise_seed = seed_for(cfg, streams::NOISE);
    let results =
        generate_trajectories(&bounds, cfg.data.pool, cfg.sigma, noise_seed, cfg.n_steps)?;
    let mut ok: Vec<(usize, Trajectory)> = Vec::new();
    let mut failed = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => ok.push((k, t)),
            Err(e) => failed.push((k, e.to_string())),
        }
    }
    let collapsed: Vec<bool> = ok.iter().map(|(_, t)| t.collapsed()).collect();
    let pool_splits = assign_splits(
        &collapsed,
        cfg.data.split,
        cfg.data.filter,
        seed_for(cfg, streams::SPLITS),
    )?;
    let chosen: Vec<usize> = [&pool_splits.train, &pool_splits.val, &pool_splits.test]
        .into_iter()
        .flatten()
        .copied()
        .collect();
    let (n_train, n_val) = (pool_splits.train.len(), pool_splits.val.len());
    let splits = Splits {
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..chosen.len()).collect(),
    };
    let names: Vec<String> = chosen.iter().map(|&i| trajectory_name(ok[i].0)).collect();
    let trajs: Vec<Trajectory> = chosen.iter().map(|&i| ok[i].1.clone()).collect();
    let ds = build_dataset(
        &names,
        &trajs,
        &bounds.names(),
        splits,
        cfg.geometry(),
        cfg.mode,
        cfg.data.filter,
    )?;
    write_trajectories(&out.join(TRAJECTORY_DIR), &names, &trajs)?;
    write_dataset(out, &ds)?;
    std::fs::write(out.join("bounds.toml"), toml::to_string(&bounds)?)?;
    let summary = GenSummary {
        pool: cfg.data.pool,
        failed,
        collapsed: collapsed.iter().filter(|&&c| c).count(),
        selected: names.len(),
        n_examples: ds.manifest.n_examples,
    };
    eprintln!(
        "{} of {} trajectories collapse; kept {}; examples {:?}",
        summary.collapsed,
        ok.len(),
        summary.selected,
        summary.n_examples
    );
    write_json(&out.join("summary.json"), &summary)
}

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    best_val_loss: f64,
    stopped_early: bool,
    steps: usize,
    wall_seconds: f64,
    n_examples: [usize; 3],
    n_parameters: usize,
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = boxtip::dataset::load_dataset(&cfg.paths.dataset)
        .with_context(|| format!("loading dataset {}", cfg.paths.dataset.display()))?;
    let m = &ds.manifest;
    ensure!(
        m.variant == cfg.variant && m.mode == cfg.mode,
        "dataset is {} {:?}, config asks for {} {:?}",
        m.variant,
        m.mode,
        cfg.variant,
        cfg.mode
    );
    let tc = cfg.tft_config(cfg.variant, m.n_statics())?;
    ensure!(
        (tc.history, tc.horizon) == (m.geometry.history, m.geometry.horizon),
        "dataset windows {}+{} differ from the network's {}+{}",
        m.geometry.history,
        m.geometry.horizon,
        tc.history,
        tc.horizon
    );
    let mut model = TftModel::new(tc, ModelMeta::from_manifest(m))?;
    let n_parameters = model.params().n_scalars();
    let t0 = Instant::now();
    let report = train_with(&mut model, &ds.train, &ds.val, |r| {
        eprintln!(
            "epoch {:>3}  train {:.6}  val {:.6}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.wall_seconds
        )
    })?;
    save_model(&out.join("model.bin"), &model)?;
    write_history(&out.join("history.csv"), &report.history)?;
    write_json(
        &out.join("train_report.json"),
        &TrainSummary {
            best_epoch: report.best_epoch,
            best_val_loss: report.best_val_loss,
            stopped_early: report.stopped_early,
            steps: report.steps,
            wall_seconds: t0.elapsed().as_secs_f64(),
            n_examples: m.n_examples,
            n_parameters,
        },
    )
}

fn eval_blocks(cfg: &RunConfig, truth: &[Trajectory], h: usize, l: usize) -> usize {
    cfg.rollout.n_blocks.unwrap_or_else(|| {
        blocks_for(
            truth.iter().map(Trajectory::n_steps).max().unwrap_or(0),
            h,
            l,
        )
    })
}

fn model_set(
    cfg: &RunConfig,
    m: &DatasetManifest,
    names: &[String],
    truth: &[Trajectory],
) -> Result<PredictionSet> {
    let model = load_trained(cfg, m)?;
    let n_blocks = eval_blocks(cfg, truth, model.config.history, model.config.horizon);
    Ok(predict_set(
        &model,
        &cfg.eval.model_name,
        loss_label(model.config.loss),
        names,
        truth,
        n_blocks,
    )?)
}

pub fn rollout_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (m, names, truth) = test_split(&cfg.paths.dataset)?;
    let set = model_set(cfg, &m, &names, &truth)?;
    export_predictions(&out.join("predictions"), &set)?;
    let mut csv = String::from("sample,truth_collapse_years,pred_collapse_years\n");
    for ((n, t), r) in names.iter().zip(&truth).zip(&set.rollouts) {
        let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        csv += &format!(
            "{n},{},{}\n",
            f(t.collapse_time_atlantic),
            f(r.collapse_time_atlantic)
        );
    }
    std::fs::write(out.join("collapse_times.csv"), csv)?;
    eprintln!("rolled out {} test trajectories", set.rollouts.len());
    Ok(())
}

#[derive(Serialize)]
struct EnsembleSummary {
    members: usize,
    sigma: f64,
    base_seed: u64,
    simulator: [Option<CollapseStats>; 2],
    simulator_failed: usize,
    surrogate: Option<[Option<CollapseStats>; 2]>,
    surrogate_failed: Option<usize>,
}

pub fn ensemble_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = cfg.params(cfg.ensemble.params)?;
    let base = seed_for(cfg, streams::ENSEMBLE);
    let run = run_ensemble(&p, cfg.ensemble.members, cfg.sigma, base, cfg.n_steps)?;
    write_ensemble(&out.join("simulator"), &run)?;
    let mut summary = EnsembleSummary {
        members: cfg.ensemble.members,
        sigma: cfg.sigma,
        base_seed: base,
        simulator: [Some(run.atlantic.clone()), run.pacific.clone()],
        simulator_failed: run.n_failed(),
        surrogate: None,
        surrogate_failed: None,
    };
    if cfg.ensemble.surrogate {
        let model = boxtip::tft::load_model_for(&cfg.paths.model, &channel_names(p.variant))
            .with_context(|| format!("loading model {}", cfg.paths.model.display()))?;
        let h = model.config.history;
        let seed_run = run
            .members
            .iter()
            .find_map(|m| m.as_ref().ok())
            .context("every simulator member failed; no seed window")?;
        ensure!(
            seed_run.n_steps() >= h,
            "simulated runs are shorter than the seed window"
        );
        let n_blocks = blocks_for(cfg.n_steps, h, model.config.horizon);
        let fc = ensemble_forecast(
            &model,
            seed_run.channels.slice(s![..h, ..]),
            &p,
            cfg.ensemble.members,
            cfg.sigma,
            base,
            n_blocks,
        )?;
        let dir = out.join("surrogate").join("members");
        for (k, m) in fc.members.iter().enumerate() {
            if let Ok(r) = m {
                r.write(&dir.join(format!("member_{k:05}")))?;
            }
        }
        summary.surrogate = Some([Some(fc.atlantic.clone()), fc.pacific.clone()]);
        summary.surrogate_failed = Some(fc.n_failed());
    }
    eprintln!(
        "simulator: {}/{} collapsed, mean {:?} yr, std {:?} yr",
        run.atlantic.n_collapsed, run.atlantic.n_members, run.atlantic.mean, run.atlantic.std
    );
    if let Some([Some(a), _]) = &summary.surrogate {
        eprintln!(
            "surrogate: {}/{} collapsed, mean {:?} yr, std {:?} yr",
            a.n_collapsed, a.n_members, a.mean, a.std
        );
    }
    write_json(&out.join("ensemble.json"), &summary)
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

pub fn eval_cmd(cfg: &RunConfig, out: &Path) -> Result<Vec<MetricReport>> {
    let (m, names, truth) = test_split(&cfg.paths.dataset)?;
    let std = &m.standardizer;
    let mut sets = Vec::new();
    if cfg.paths.model.exists() {
        let set = model_set(cfg, &m, &names, &truth)?;
        export_predictions(&out.join("predictions").join(slug(&set.model)), &set)?;
        sets.push(set);
    } else {
        eprintln!(
            "no model at {}; skipping the surrogate",
            cfg.paths.model.display()
        );
    }
    if cfg.eval.persistence {
        let g = m.geometry;
        let n_blocks = eval_blocks(cfg, &truth, g.history, g.horizon);
        sets.push(persistence_set(
            m.variant, m.mode, g.history, g.horizon, std, &names, &truth, n_blocks,
        )?);
    }
    for dir in &cfg.paths.external {
        let set = ingest_external_predictions(dir)
            .with_context(|| format!("ingesting {}", dir.display()))?;
        sets.push(set);
    }
    if sets.is_empty() {
        bail!("nothing to evaluate: no model, persistence disabled and no external predictions");
    }
    let mut reports = Vec::new();
    for set in &sets {
        let e = evaluate(set, &names, &truth, std)?;
        write_evaluation(
            &out.join(slug(&set.model)),
            &e,
            m.variant,
            cfg.eval.bin_years,
        )?;
        reports.push(e.report);
    }
    write_reports(out, &reports)?;
    eprint!("{}", report_markdown(&reports));
    Ok(reports)
}

#[derive(Serialize)]
struct BenchRecord {
    name: String,
    iterations: usize,
    seconds_per_iteration: f64,
}

fn time_it(
    name: &str,
    iterations: usize,
    mut f: impl FnMut() -> Result<()>,
) -> Result<BenchRecord> {
    f()?;
    let t0 = Instant::now();
    for _ in 0..iterations {
        f()?;
    }
    Ok(BenchRecord {
        name: name.to_string(),
        iterations,
        seconds_per_iteration: t0.elapsed().as_secs_f64() / iterations as f64,
    })
}

/// Untrained network of the profile's size with a standardizer fitted on
/// `trajs`.
pub fn untrained_model(
    cfg: &RunConfig,
    variant: Variant,
    trajs: &[Trajectory],
    statics: &[String],
) -> Result<TftModel> {
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let standardizer = fit_standardizer(&refs, statics, cfg.mode)?;
    let meta = ModelMeta {
        variant,
        mode: cfg.mode,
        channel_names: channel_names(variant),
        known_names: cfg.mode.known_names(variant),
        static_names: statics.to_vec(),
        standardizer,
    };
    Ok(TftModel::new(
        cfg.tft_config(variant, statics.len())?,
        meta,
    )?)
}

pub fn bench_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut records = Vec::new();
    for variant in [Variant::FourBox, Variant::SixBox] {
        let p = boxtip::boxmodel::defaults::params(variant);
        let noise = NoiseSeq::generate(cfg.seed, cfg.sigma, cfg.n_steps, variant.n_fluxes());
        records.push(time_it(
            &format!("simulate_{variant}_{}_steps", cfg.n_steps),
            5,
            || {
                simulate(&p, &noise, cfg.n_steps)?;
                Ok(())
            },
        )?);
    }
    let x = Array2::from_shape_fn((50, 11), |(i, j)| ((i * 7 + j * 3) % 13) as f64 / 13.0);
    let y = Array2::from_shape_fn((50, 11), |(i, j)| ((i * 5 + j * 11) % 17) as f64 / 17.0);
    records.push(time_it("sdtw_value_grad_50x50x11", 20, || {
        sdtw_value_grad(x.view(), y.view(), 1.0)?;
        Ok(())
    })?);

    let bounds =
        boxtip::ensemble::ParamBounds::defaults(cfg.variant, seed_for(cfg, streams::BOUNDS));
    let trajs: Vec<Trajectory> = generate_trajectories(
        &bounds,
        4,
        cfg.sigma,
        seed_for(cfg, streams::NOISE),
        cfg.n_steps,
    )?
    .into_iter()
    .collect::<Result<_, _>>()?;
    let names: Vec<String> = (0..trajs.len()).map(trajectory_name).collect();
    let splits = Splits {
        train: vec![0, 1],
        val: vec![2],
        test: vec![3],
    };
    let ds = build_dataset(
        &names,
        &trajs,
        &bounds.names(),
        splits,
        cfg.geometry(),
        cfg.mode,
        cfg.data.filter,
    )?;
    let mut model = TftModel::new(
        cfg.tft_config(cfg.variant, bounds.names().len())?,
        ModelMeta::from_manifest(&ds.manifest),
    )?;
    let bs = model.config.batch_size.min(ds.train.len());
    let refs: Vec<_> = ds.train.iter().take(bs).collect();
    let batch = Batch::from_examples(&refs, &model.config)?;
    records.push(time_it(&format!("tft_predict_batch_{bs}"), 3, || {
        model.predict(&batch)?;
        Ok(())
    })?);
    let mut adam = Adam::new(model.params(), model.config.lr);
    let mut rng = boxtip::boxmodel::stream_rng(cfg.seed, 0);
    records.push(time_it(&format!("tft_train_step_batch_{bs}"), 3, || {
        train_step(&mut model, &mut adam, &batch, &mut rng)?;
        Ok(())
    })?);
    for r in &records {
        eprintln!("{:<36} {:>12.6} s", r.name, r.seconds_per_iteration);
    }
    write_json(&out.join("bench.json"), &records)
}

#[derive(Serialize)]
struct SpeedFile {
    surrogate: &'static str,
    #[serde(flatten)]
    report: boxtip::eval::SpeedReport,
}

pub fn speed_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let variant = cfg.speed.variant;
    let bounds = boxtip::ensemble::ParamBounds::defaults(variant, seed_for(cfg, streams::SPEED));
    let params = sample_param_sets(&bounds, cfg.speed.n_sims)?;
    let base = seed_for(cfg, streams::NOISE);
    let trained = cfg
        .paths
        .model
        .exists()
        .then(|| load_model_for(&cfg.paths.model, &channel_names(variant)).ok())
        .flatten()
        .filter(|m| m.meta.variant == variant && m.meta.mode == cfg.mode);
    let (kind, model) = match trained {
        Some(m) => ("trained", Some(m)),
        None if cfg.speed.surrogate => {
            let fit: Vec<Trajectory> = params
                .iter()
                .take(4)
                .enumerate()
                .map(|(k, p)| {
                    let n = NoiseSeq::generate(
                        split_seed(base, k as u64),
                        cfg.sigma,
                        cfg.n_steps,
                        variant.n_fluxes(),
                    );
                    simulate(p, &n, cfg.n_steps)
                })
                .collect::<Result<_, _>>()?;
            (
                "untrained",
                Some(untrained_model(cfg, variant, &fit, &bounds.names())?),
            )
        }
        None => ("none", None),
    };
    let report = speed_benchmark(model.as_ref(), &params, cfg.n_steps, cfg.sigma, base)?;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    eprintln!(
        "{variant}: simulator {:.4} s/traj, surrogate {} s/traj, ratio {} ({kind} surrogate; {})",
        report.simulator_per_trajectory_s,
        opt(report.surrogate_per_trajectory_s),
        opt(report.ratio),
        report.hardware
    );
    write_json(
        &out.join("speed.json"),
        &SpeedFile {
            surrogate: kind,
            report,
        },
    )
}

pub fn default_out(command: &str) -> PathBuf {
    PathBuf::from("runs").join(command)
}
