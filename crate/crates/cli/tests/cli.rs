use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[data]
pool = 24
split = { train = 8, val = 4, test = 4 }
[tft]
max_epochs = 1
max_batches_per_epoch = 2
[ensemble]
members = 6
[speed]
n_sims = 2
[sweep]
points = 5
settle_years = 500
"#;

fn boxtip(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxtip"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn boxtip")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = boxtip(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn simulate_writes_one_archive_and_reruns_identically() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["simulate", "--config", "small.toml", "--seed", "9"]);
    let run = d.join("runs/simulate");
    for f in [
        "trajectory/manifest.json",
        "trajectory/channels.bin",
        "run_manifest.json",
        "run_config.toml",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let rerun: Vec<String> = manifest["rerun"].as_array().unwrap()[1..]
        .iter()
        .map(|v| v.as_str().unwrap().replace("runs/simulate", "runs/again"))
        .collect();
    std::fs::create_dir_all(d.join("runs/again")).unwrap();
    std::fs::copy(
        run.join("run_config.toml"),
        d.join("runs/again/run_config.toml"),
    )
    .unwrap();
    ok(d, &rerun.iter().map(String::as_str).collect::<Vec<_>>());
    let bin = |p: &str| std::fs::read(d.join(p).join("trajectory/channels.bin")).unwrap();
    assert_eq!(bin("runs/simulate"), bin("runs/again"));
}

#[test]
fn unknown_config_key_fails_with_error_record() {
    let dir = workspace();
    let d = dir.path();
    std::fs::write(d.join("typo.toml"), "[ensemble]\nmembrs = 3\n").unwrap();
    let out = boxtip(d, &["ensemble", "--config", "typo.toml", "--out", "bad"]);
    assert!(!out.status.success());
    let record = std::fs::read_to_string(d.join("bad/error.json")).unwrap();
    assert!(record.contains("membrs"), "{record}");
}

#[test]
fn bad_profile_flag_rejected() {
    let dir = workspace();
    assert!(!boxtip(dir.path(), &["simulate", "--profile", "laptop"])
        .status
        .success());
}

#[test]
fn pipeline_gen_train_eval_is_deterministic() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["gen-data", "--config", "small.toml"]);
    ok(d, &["train", "--config", "small.toml"]);
    ok(d, &["rollout", "--config", "small.toml"]);
    ok(d, &["eval", "--config", "small.toml"]);
    let first = std::fs::read(d.join("runs/eval/report.csv")).unwrap();
    ok(d, &["eval", "--config", "small.toml"]);
    assert_eq!(
        first,
        std::fs::read(d.join("runs/eval/report.csv")).unwrap()
    );

    let csv = String::from_utf8(first).unwrap();
    let header = csv.lines().next().unwrap();
    for col in [
        "model",
        "training_loss",
        "sdtw_1",
        "rmse_1",
        "rmse_ar",
        "rmse_ar_mn_a",
        "r_collapse_a",
        "r_mn_a_end",
    ] {
        assert!(
            header.split(',').any(|c| c == col),
            "missing {col} in {header}"
        );
    }
    assert_eq!(csv.lines().count(), 3, "{csv}");

    let toml = format!(
        "{SMALL}\n[paths]\nexternal = [\"runs/rollout/predictions\"]\nmodel = \"absent.bin\"\n[eval]\npersistence = false\nmodel_name = \"TFT\"\nbin_years = 25.0\n"
    );
    std::fs::write(d.join("ext.toml"), toml).unwrap();
    ok(
        d,
        &["eval", "--config", "ext.toml", "--out", "runs/eval_ext"],
    );
    let tft_row = |p: &str| {
        std::fs::read_to_string(d.join(p))
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .to_string()
    };
    assert_eq!(
        tft_row("runs/eval/report.csv"),
        tft_row("runs/eval_ext/report.csv")
    );

    for cmd in ["gen-data", "train", "rollout", "eval", "eval_ext"] {
        assert!(
            d.join("runs").join(cmd).join("run_manifest.json").exists(),
            "{cmd}"
        );
    }
}

#[test]
fn sweep_ensemble_bench_speed_write_artifacts() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["sweep", "--config", "small.toml"]);
    ok(d, &["ensemble", "--config", "small.toml"]);
    ok(d, &["speed", "--config", "small.toml"]);
    ok(d, &["bench", "--config", "small.toml"]);
    for f in [
        "sweep/hysteresis.csv",
        "sweep/branches.json",
        "ensemble/ensemble.json",
        "ensemble/simulator/stats.json",
        "speed/speed.json",
        "bench/bench.json",
    ] {
        assert!(d.join("runs").join(f).exists(), "{f}");
    }
    let speed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("runs/speed/speed.json")).unwrap())
            .unwrap();
    assert!(speed["ratio"].as_f64().is_some_and(|r| r > 0.0));
    assert!(speed["hardware"].as_str().unwrap().contains("cores"));
}
