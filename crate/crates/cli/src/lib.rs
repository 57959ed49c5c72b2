// Range checks are written negated so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use boxtip::tft::Preset;
use clap::{Parser, Subcommand};

use config::RunConfig;
use manifest::{
    list_artifacts, unix_now, write_config, write_json, ErrorRecord, RunManifest, ERROR_RECORD,
    RUN_CONFIG, RUN_MANIFEST, VERSIONS,
};

#[derive(Debug, Parser)]
#[command(
    name = "boxtip",
    version,
    about = "Ocean box-model tipping toolkit and TFT surrogate"
)]
pub struct Cli {
    /// TOML run configuration layered over the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; all available cores when absent.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Scale preset: desk (default, single CPU) or paper (full-size network and data).
    #[arg(long, global = true, value_parser = parse_profile)]
    pub profile: Option<Preset>,
    /// Artifact directory; `runs/<command>` when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate one trajectory.
    Simulate,
    /// Quasi-static hysteresis sweep of a freshwater flux.
    Sweep,
    /// Sample parameters, simulate, split and window a dataset.
    GenData,
    /// Train the surrogate on a dataset.
    Train,
    /// Roll the surrogate out over the test split.
    Rollout,
    /// Noise ensemble from one parameter set, simulator and optionally surrogate.
    Ensemble,
    /// Metric report for the surrogate, persistence and external predictions.
    Eval,
    /// Micro timings of the simulator, soft-DTW and the network.
    Bench,
    /// Simulator versus surrogate throughput.
    Speed,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Rollout => "rollout",
            Command::Ensemble => "ensemble",
            Command::Eval => "eval",
            Command::Bench => "bench",
            Command::Speed => "speed",
        }
    }
}

fn parse_profile(s: &str) -> Result<Preset, String> {
    match s {
        "desk" => Ok(Preset::Desk),
        "paper" => Ok(Preset::Paper),
        _ => Err(format!("unknown profile '{s}', expected desk or paper")),
    }
}

pub fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .unwrap_or_else(|| commands::default_out(cli.command.name()))
}

/// Effective configuration: profile defaults, config file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), cli.profile)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn init_pool(workers: Option<usize>) -> usize {
    let n = workers.unwrap_or(0);
    // A pool built earlier in the process stays in place.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    rayon::current_num_threads()
}

fn dispatch(command: Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    match command {
        Command::Simulate => commands::simulate_cmd(cfg, out),
        Command::Sweep => commands::sweep_cmd(cfg, out),
        Command::GenData => commands::gen_data_cmd(cfg, out),
        Command::Train => commands::train_cmd(cfg, out),
        Command::Rollout => commands::rollout_cmd(cfg, out),
        Command::Ensemble => commands::ensemble_cmd(cfg, out),
        Command::Eval => commands::eval_cmd(cfg, out).map(|_| ()),
        Command::Bench => commands::bench_cmd(cfg, out),
        Command::Speed => commands::speed_cmd(cfg, out),
    }
}

/// Runs one command and writes its run manifest. On failure the error is
/// also recorded as `error.json` in the output directory when possible.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let out = out_dir(cli);
    let result = run_inner(cli, &out);
    if let Err(e) = &result {
        let record = ErrorRecord {
            command: cli.command.name().to_string(),
            error: e.to_string(),
            chain: e.chain().map(|c| c.to_string()).collect(),
            config_sha256: None,
        };
        if std::fs::create_dir_all(&out).is_ok() {
            let _ = write_json(&out.join(ERROR_RECORD), &record);
        }
    }
    result.map(|_| out)
}

fn run_inner(cli: &Cli, out: &Path) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let workers = init_pool(cli.workers);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stale = out.join(ERROR_RECORD);
    if stale.exists() {
        std::fs::remove_file(&stale)?;
    }
    let config_sha256 = write_config(out, &cfg)?;
    let started = unix_now();
    let t0 = Instant::now();
    dispatch(cli.command, &cfg, out)?;
    let mut rerun = vec![
        "boxtip".to_string(),
        cli.command.name().to_string(),
        "--config".to_string(),
        out.join(RUN_CONFIG).display().to_string(),
        "--out".to_string(),
        out.display().to_string(),
    ];
    if let Some(w) = cli.workers {
        rerun.extend(["--workers".to_string(), w.to_string()]);
    }
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        rerun,
        config_sha256,
        seed: cfg.seed,
        profile: format!("{:?}", cfg.profile).to_lowercase(),
        variant: cfg.variant.to_string(),
        workers,
        versions: VERSIONS,
        hardware: boxtip::eval::hardware_descriptor(),
        started_unix_s: started,
        wall_seconds: t0.elapsed().as_secs_f64(),
        artifacts: list_artifacts(out),
    };
    write_json(&out.join(RUN_MANIFEST), &manifest)
}
