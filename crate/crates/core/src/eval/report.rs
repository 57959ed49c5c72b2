use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{collapse_metrics, metric_of, pearson_r, squared_error, EvalError, Metric};
use crate::boxmodel::{first_crossing, overturning_channel, NoiseSeq, Trajectory, Variant};
use crate::dataset::{Mode, Standardizer};
use crate::rollout::{
    autoregressive_rollout, rollout_len, rollout_many, Forecaster, Persistence, RolloutError,
    RolloutInput,
};
use crate::sdtw::sdtw_forward;

/// Smoothing used for the reported soft-DTW column.
pub const SDTW_GAMMA: f64 = 1.0;

/// Whether the decoder saw the realised forcing or only a time encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    WithFutureKnown,
    WithoutFutureKnown,
}

impl From<Mode> for EvalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Stochastic => EvalMode::WithFutureKnown,
            Mode::Deterministic => EvalMode::WithoutFutureKnown,
        }
    }
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::WithFutureKnown => "with-future-known",
            EvalMode::WithoutFutureKnown => "without-future-known",
        }
    }
}

/// Long forecasts for a set of named samples, from any source. Row `0..history`
/// of each rollout is the observed seed window.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub model: String,
    pub loss: String,
    pub mode: EvalMode,
    pub variant: Variant,
    pub history: usize,
    pub horizon: usize,
    pub samples: Vec<String>,
    pub rollouts: Vec<Trajectory>,
}

fn nan_padded(r: Trajectory, total: usize, truth_noise: &NoiseSeq) -> Trajectory {
    let mut channels = Array2::from_elem((total, r.channels.ncols()), f64::NAN);
    channels
        .slice_mut(s![..r.n_steps(), ..])
        .assign(&r.channels);
    Trajectory {
        channels,
        noise: NoiseSeq {
            seed: truth_noise.seed,
            sigma: truth_noise.sigma,
            values: truth_noise.values.slice(s![..total, ..]).to_owned(),
        },
        ..r
    }
}

/// Rolls `model` forward from the first `history` rows of every truth
/// trajectory under its realised forcing. A rollout that diverges keeps its
/// finite prefix and is NaN from the failing block on.
pub fn predict_set<F: Forecaster + ?Sized>(
    model: &F,
    model_name: &str,
    loss: &str,
    names: &[String],
    truth: &[Trajectory],
    n_blocks: usize,
) -> Result<PredictionSet, EvalError> {
    if names.len() != truth.len() {
        return Err(EvalError::LengthMismatch(names.len(), truth.len()));
    }
    let h = model.history();
    let inputs: Vec<RolloutInput<'_>> = truth
        .iter()
        .map(|t| {
            if t.n_steps() < h {
                return Err(EvalError::Shape {
                    what: "truth trajectory",
                    expected: (h, t.channels.ncols()),
                    got: t.channels.dim(),
                });
            }
            Ok(RolloutInput {
                seed_window: t.channels.slice(s![..h, ..]),
                params: &t.params,
                noise: &t.noise,
            })
        })
        .collect::<Result<_, _>>()?;
    let total = rollout_len(h, model.horizon(), n_blocks);
    let rollouts = rollout_many(model, &inputs, n_blocks)
        .into_iter()
        .zip(inputs.iter().zip(names))
        .map(|(r, (input, name))| match r {
            Ok(r) => Ok(r.trajectory),
            Err(RolloutError::NonFinite { block }) => {
                let prefix = autoregressive_rollout(
                    model,
                    input.seed_window,
                    input.params,
                    input.noise,
                    block,
                )
                .map_err(|source| EvalError::Rollout {
                    sample: name.clone(),
                    source,
                })?;
                Ok(nan_padded(prefix.trajectory, total, input.noise))
            }
            Err(source) => Err(EvalError::Rollout {
                sample: name.clone(),
                source,
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PredictionSet {
        model: model_name.to_string(),
        loss: loss.to_string(),
        mode: model.mode().into(),
        variant: model.variant(),
        history: h,
        horizon: model.horizon(),
        samples: names.to_vec(),
        rollouts,
    })
}

/// The persistence baseline as a prediction set.
#[allow(clippy::too_many_arguments)]
pub fn persistence_set(
    variant: Variant,
    mode: Mode,
    history: usize,
    horizon: usize,
    standardizer: &Standardizer,
    names: &[String],
    truth: &[Trajectory],
    n_blocks: usize,
) -> Result<PredictionSet, EvalError> {
    let model = Persistence::new(variant, mode, history, horizon, standardizer.clone());
    predict_set(&model, "Persistence", "N/A", names, truth, n_blocks)
}

/// Per-sample ingredients of a [`MetricReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub name: String,
    /// Rows compared: the shorter of prediction and truth.
    pub n_rows: usize,
    pub se_1: f64,
    pub se_1_raw: f64,
    pub n_1: usize,
    pub se_ar: f64,
    pub se_ar_raw: f64,
    pub n_ar: usize,
    pub se_ar_mn: f64,
    pub se_ar_mn_raw: f64,
    pub n_ar_mn: usize,
    pub sdtw_1: f64,
    pub finite_1: bool,
    pub finite_ar: bool,
    pub truth_collapse: [Option<f64>; 2],
    pub pred_collapse: [Option<f64>; 2],
    pub truth_end_mn: f64,
    pub pred_end_mn: f64,
}

/// One row of the benchmark table. Error metrics are in standardised units;
/// the `_raw` fields repeat them in physical units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub model: String,
    pub training_loss: String,
    pub eval_mode: EvalMode,
    pub n_samples: usize,
    pub sdtw_1: Metric,
    pub rmse_1: Metric,
    pub rmse_ar: Metric,
    pub rmse_ar_mn_a: Metric,
    pub r_collapse_a: Metric,
    pub r_mn_a_end: Metric,
    pub r_collapse_p: Metric,
    pub detection_rate_a: f64,
    pub detection_rate_p: Option<f64>,
    pub n_joint_collapse_a: usize,
    pub rmse_1_raw: Metric,
    pub rmse_ar_raw: Metric,
    pub rmse_ar_mn_a_raw: Metric,
    /// Why any metric is `NaN` or `N/A`.
    pub flags: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricReport,
    pub samples: Vec<SampleMetrics>,
}

fn all_finite(a: ArrayView2<'_, f64>) -> bool {
    a.iter().all(|x| x.is_finite())
}

fn sample_metrics(
    name: &str,
    pred: &Trajectory,
    truth: &Trajectory,
    set: &PredictionSet,
    std: &Standardizer,
) -> Result<SampleMetrics, EvalError> {
    let (h, l) = (set.history, set.horizon);
    let n = pred.n_steps().min(truth.n_steps());
    let nc = truth.channels.ncols();
    if pred.channels.ncols() != nc || n < h + l {
        return Err(EvalError::Shape {
            what: "prediction rows",
            expected: (h + l, nc),
            got: (n, pred.channels.ncols()),
        });
    }
    let mn = overturning_channel(truth.variant, 0)?;
    let p_raw = pred.channels.slice(s![..n, ..]);
    let t_raw = truth.channels.slice(s![..n, ..]);
    let p = std.transform_channels(p_raw);
    let t = std.transform_channels(t_raw);
    let one = s![h..h + l, ..];
    let ar = s![h..n, ..];
    let ar_mn = s![h..n, mn..mn + 1];
    let (se_1, n_1) = squared_error(p.slice(one), t.slice(one));
    let (se_1_raw, _) = squared_error(p_raw.slice(one), t_raw.slice(one));
    let (se_ar, n_ar) = squared_error(p.slice(ar), t.slice(ar));
    let (se_ar_raw, _) = squared_error(p_raw.slice(ar), t_raw.slice(ar));
    let (se_ar_mn, n_ar_mn) = squared_error(p.slice(ar_mn), t.slice(ar_mn));
    let (se_ar_mn_raw, _) = squared_error(p_raw.slice(ar_mn), t_raw.slice(ar_mn));
    let finite_1 = all_finite(p.slice(one));
    let finite_ar = all_finite(p.slice(ar));
    let sdtw_1 = if finite_1 {
        sdtw_forward(p.slice(one), t.slice(one), SDTW_GAMMA)?.value()
    } else {
        f64::NAN
    };
    let crossing = |x: ArrayView2<'_, f64>, basin: usize| -> Result<Option<f64>, EvalError> {
        if basin >= truth.variant.n_basins() {
            return Ok(None);
        }
        let c = overturning_channel(truth.variant, basin)?;
        Ok(first_crossing(x.column(c), truth.dt_years))
    };
    Ok(SampleMetrics {
        name: name.to_string(),
        n_rows: n,
        se_1,
        se_1_raw,
        n_1,
        se_ar,
        se_ar_raw,
        n_ar,
        se_ar_mn,
        se_ar_mn_raw,
        n_ar_mn,
        sdtw_1,
        finite_1,
        finite_ar,
        truth_collapse: [crossing(t_raw, 0)?, crossing(t_raw, 1)?],
        pred_collapse: [crossing(p_raw, 0)?, crossing(p_raw, 1)?],
        truth_end_mn: t_raw[[n - 1, mn]],
        pred_end_mn: p_raw[[n - 1, mn]],
    })
}

fn pooled(
    samples: &[SampleMetrics],
    finite: bool,
    f: impl Fn(&SampleMetrics) -> (f64, usize),
) -> Metric {
    if !finite {
        return Metric::Invalid;
    }
    let (se, n) = samples
        .iter()
        .map(f)
        .fold((0.0, 0), |(a, b), (c, d)| (a + c, b + d));
    Metric::Value((se / n as f64).sqrt())
}

/// Scores `pred` against the truth trajectories with matching names. Collapse
/// is judged on the rows both series cover. Identical for simulator,
/// surrogate and ingested predictions.
pub fn evaluate(
    pred: &PredictionSet,
    truth_names: &[String],
    truth: &[Trajectory],
    std: &Standardizer,
) -> Result<Evaluation, EvalError> {
    if truth_names.len() != truth.len() {
        return Err(EvalError::LengthMismatch(truth_names.len(), truth.len()));
    }
    if pred.samples.len() != pred.rollouts.len() {
        return Err(EvalError::LengthMismatch(
            pred.samples.len(),
            pred.rollouts.len(),
        ));
    }
    if pred.samples.is_empty() {
        return Err(EvalError::Empty("sample intersection"));
    }
    let index: HashMap<&str, usize> = truth_names
        .iter()
        .enumerate()
        .map(|(k, n)| (n.as_str(), k))
        .collect();
    let pairs: Vec<(usize, usize)> = pred
        .samples
        .iter()
        .enumerate()
        .map(|(k, name)| {
            index
                .get(name.as_str())
                .map(|&j| (k, j))
                .ok_or_else(|| EvalError::UnknownSample(name.clone()))
        })
        .collect::<Result<_, _>>()?;
    for &(k, j) in &pairs {
        let (p, t) = (&pred.rollouts[k], &truth[j]);
        if p.variant != pred.variant || t.variant != pred.variant {
            return Err(EvalError::Mismatch(format!(
                "sample '{}' mixes {} and {} trajectories with a {} prediction set",
                pred.samples[k], p.variant, t.variant, pred.variant
            )));
        }
        if t.channel_names != std.channel_names || p.channel_names != std.channel_names {
            return Err(EvalError::Mismatch(format!(
                "sample '{}' channel layout differs from the standardizer",
                pred.samples[k]
            )));
        }
    }
    let samples: Vec<SampleMetrics> = pairs
        .par_iter()
        .map(|&(k, j)| sample_metrics(&pred.samples[k], &pred.rollouts[k], &truth[j], pred, std))
        .collect::<Result<_, _>>()?;

    let mut flags = Vec::new();
    let finite_1 = samples.iter().all(|s| s.finite_1);
    let finite_ar = samples.iter().all(|s| s.finite_ar);
    if !finite_1 {
        flags.push("first-window metrics: non-finite predictions".to_string());
    }
    if !finite_ar {
        flags.push("rollout metrics: non-finite predictions".to_string());
    }
    let times = |basin: usize, pred_side: bool| -> Vec<Option<f64>> {
        samples
            .iter()
            .map(|s| {
                if pred_side {
                    s.pred_collapse[basin]
                } else {
                    s.truth_collapse[basin]
                }
            })
            .collect()
    };
    let atl = collapse_metrics(&times(0, true), &times(0, false))?;
    if atl.timing_r == Metric::Undefined {
        flags.push(format!(
            "r_collapse_a: undefined over {} jointly collapsing samples",
            atl.n_joint
        ));
    }
    let (r_collapse_p, detection_rate_p) = if pred.variant.n_basins() > 1 {
        let pac = collapse_metrics(&times(1, true), &times(1, false))?;
        if pac.timing_r == Metric::Undefined {
            flags.push(format!(
                "r_collapse_p: undefined over {} jointly collapsing samples",
                pac.n_joint
            ));
        }
        (pac.timing_r, Some(pac.detection_rate))
    } else {
        (Metric::Undefined, None)
    };
    let r_mn_a_end = if finite_ar {
        let p: Vec<f64> = samples.iter().map(|s| s.pred_end_mn).collect();
        let t: Vec<f64> = samples.iter().map(|s| s.truth_end_mn).collect();
        let m = metric_of(pearson_r(&p, &t));
        if m == Metric::Undefined {
            flags.push("r_mn_a_end: undefined (constant end state or one sample)".to_string());
        }
        m
    } else {
        Metric::Invalid
    };
    let sdtw_1 = if finite_1 {
        Metric::Value(samples.iter().map(|s| s.sdtw_1).sum::<f64>() / samples.len() as f64)
    } else {
        Metric::Invalid
    };
    let report = MetricReport {
        model: pred.model.clone(),
        training_loss: pred.loss.clone(),
        eval_mode: pred.mode,
        n_samples: samples.len(),
        sdtw_1,
        rmse_1: pooled(&samples, finite_1, |s| (s.se_1, s.n_1)),
        rmse_ar: pooled(&samples, finite_ar, |s| (s.se_ar, s.n_ar)),
        rmse_ar_mn_a: pooled(&samples, finite_ar, |s| (s.se_ar_mn, s.n_ar_mn)),
        r_collapse_a: atl.timing_r,
        r_mn_a_end,
        r_collapse_p,
        detection_rate_a: atl.detection_rate,
        detection_rate_p,
        n_joint_collapse_a: atl.n_joint,
        rmse_1_raw: pooled(&samples, finite_1, |s| (s.se_1_raw, s.n_1)),
        rmse_ar_raw: pooled(&samples, finite_ar, |s| (s.se_ar_raw, s.n_ar)),
        rmse_ar_mn_a_raw: pooled(&samples, finite_ar, |s| (s.se_ar_mn_raw, s.n_ar_mn)),
        flags,
    };
    Ok(Evaluation { report, samples })
}

const CSV_HEADER: &str =
    "model,training_loss,sdtw_1,rmse_1,rmse_ar,rmse_ar_mn_a,r_collapse_a,r_mn_a_end,\
r_collapse_p,detection_rate_a,detection_rate_p,n_joint_collapse_a,n_samples,eval_mode,\
rmse_1_raw,rmse_ar_raw,rmse_ar_mn_a_raw\n";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "N/A".into())
}

pub fn report_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.model,
            r.training_loss,
            r.sdtw_1,
            r.rmse_1,
            r.rmse_ar,
            r.rmse_ar_mn_a,
            r.r_collapse_a,
            r.r_mn_a_end,
            r.r_collapse_p,
            r.detection_rate_a,
            opt(r.detection_rate_p),
            r.n_joint_collapse_a,
            r.n_samples,
            r.eval_mode.as_str(),
            r.rmse_1_raw,
            r.rmse_ar_raw,
            r.rmse_ar_mn_a_raw,
        ));
    }
    out
}

fn fmt4(m: Metric) -> String {
    match m {
        Metric::Value(v) => format!("{v:.4}"),
        other => other.to_string(),
    }
}

pub fn report_markdown(reports: &[MetricReport]) -> String {
    let mut out = String::from(
        "| Model | Training Loss | SDTW (1) | RMSE (1) | RMSE (AR) | RMSE M_n^A (AR) | r collapse,A | r M_n^A,end | detection A | mode |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in reports {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {:.3} | {} |\n",
            r.model,
            r.training_loss,
            fmt4(r.sdtw_1),
            fmt4(r.rmse_1),
            fmt4(r.rmse_ar),
            fmt4(r.rmse_ar_mn_a),
            fmt4(r.r_collapse_a),
            fmt4(r.r_mn_a_end),
            r.detection_rate_a,
            r.eval_mode.as_str(),
        ));
    }
    let flagged: Vec<String> = reports
        .iter()
        .flat_map(|r| r.flags.iter().map(move |f| format!("- {}: {f}\n", r.model)))
        .collect();
    if !flagged.is_empty() {
        out.push('\n');
        out.extend(flagged);
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.csv`, `report.md` and `report.json`.
pub fn write_reports(dir: &Path, reports: &[MetricReport]) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_text(&dir.join("report.csv"), &report_csv(reports))?;
    write_text(&dir.join("report.md"), &report_markdown(reports))?;
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(reports).map_err(|source| EvalError::Manifest {
        path: path.clone(),
        source,
    })?;
    write_text(&path, &json)
}

/// Predicted versus true collapse time per sample for one basin.
pub fn parity_csv(samples: &[SampleMetrics], basin: usize) -> String {
    let mut out = String::from("sample,truth_collapse_years,pred_collapse_years\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{}\n",
            s.name,
            s.truth_collapse[basin]
                .map(|v| v.to_string())
                .unwrap_or_default(),
            s.pred_collapse[basin]
                .map(|v| v.to_string())
                .unwrap_or_default(),
        ));
    }
    out
}

/// Collapse-time counts in `bin_years`-wide bins from zero.
pub fn histogram_csv(samples: &[SampleMetrics], basin: usize, bin_years: f64) -> String {
    let bin = |t: f64| (t / bin_years).floor() as usize;
    let all = samples
        .iter()
        .flat_map(|s| [s.truth_collapse[basin], s.pred_collapse[basin]])
        .flatten();
    let n_bins = all.map(|t| bin(t) + 1).max().unwrap_or(0);
    let mut truth = vec![0usize; n_bins];
    let mut pred = vec![0usize; n_bins];
    for s in samples {
        if let Some(t) = s.truth_collapse[basin] {
            truth[bin(t)] += 1;
        }
        if let Some(t) = s.pred_collapse[basin] {
            pred[bin(t)] += 1;
        }
    }
    let mut out = String::from("bin_start_years,bin_end_years,truth,pred\n");
    for k in 0..n_bins {
        out.push_str(&format!(
            "{},{},{},{}\n",
            k as f64 * bin_years,
            (k + 1) as f64 * bin_years,
            truth[k],
            pred[k]
        ));
    }
    out
}

/// Parity and histogram files for each basin of one evaluation.
pub fn write_evaluation(
    dir: &Path,
    eval: &Evaluation,
    variant: Variant,
    bin_years: f64,
) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (basin, name) in variant.basin_names().iter().enumerate() {
        let name = name.to_lowercase();
        write_text(
            &dir.join(format!("parity_{name}.csv")),
            &parity_csv(&eval.samples, basin),
        )?;
        write_text(
            &dir.join(format!("histogram_{name}.csv")),
            &histogram_csv(&eval.samples, basin, bin_years),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxmodel::{defaults, simulate};
    use crate::dataset::fit_standardizer;
    use crate::rollout::SimulatorOracle;

    fn truth_set(n: usize, steps: usize) -> (Vec<String>, Vec<Trajectory>) {
        let p = defaults::near_threshold(Variant::FourBox);
        let trajs: Vec<Trajectory> = (0..n as u64)
            .map(|k| simulate(&p, &NoiseSeq::generate(k, 1e5, steps, 2), steps).unwrap())
            .collect();
        ((0..n).map(|k| format!("t{k:03}")).collect(), trajs)
    }

    #[test]
    fn oracle_scores_perfectly() {
        let (names, truth) = truth_set(3, 1100);
        let refs: Vec<&Trajectory> = truth.iter().collect();
        let std = fit_standardizer(&refs, &[], Mode::Stochastic).unwrap();
        let oracle = SimulatorOracle::new(Variant::FourBox, Mode::Stochastic, 100, 50, std.clone());
        let set = predict_set(&oracle, "oracle", "N/A", &names, &truth, 20).unwrap();
        let r = evaluate(&set, &names, &truth, &std).unwrap().report;
        assert!(r.rmse_1.value().unwrap() < 1e-9);
        assert!(r.rmse_ar.value().unwrap() < 1e-9);
        assert_eq!(r.detection_rate_a, 1.0);
        assert_eq!(r.eval_mode, EvalMode::WithFutureKnown);
    }

    #[test]
    fn persistence_on_a_ramp_matches_closed_form() {
        let (names, mut truth) = truth_set(1, 300);
        let slope = 0.3;
        let (h, l) = (100, 50);
        truth[0].channels = Array2::from_shape_fn((300, 11), |(i, _)| slope * i as f64);
        let std = Standardizer::identity(&truth[0].channel_names, 2, &[]);
        let set = persistence_set(
            Variant::FourBox,
            Mode::Stochastic,
            h,
            l,
            &std,
            &names,
            &truth,
            1,
        )
        .unwrap();
        let r = evaluate(&set, &names, &truth, &std).unwrap().report;
        let lf = l as f64;
        let expected = slope * ((lf + 1.0) * (2.0 * lf + 1.0) / 6.0).sqrt();
        assert!((r.rmse_1_raw.value().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn nan_rows_flag_rollout_metrics() {
        let (names, truth) = truth_set(2, 400);
        let refs: Vec<&Trajectory> = truth.iter().collect();
        let std = fit_standardizer(&refs, &[], Mode::Stochastic).unwrap();
        let mut set = persistence_set(
            Variant::FourBox,
            Mode::Stochastic,
            100,
            50,
            &std,
            &names,
            &truth,
            6,
        )
        .unwrap();
        set.rollouts[1]
            .channels
            .slice_mut(s![300.., ..])
            .fill(f64::NAN);
        let r = evaluate(&set, &names, &truth, &std).unwrap().report;
        assert!(r.rmse_1.value().is_some());
        assert_eq!(r.rmse_ar, Metric::Invalid);
        assert_eq!(r.rmse_ar_mn_a, Metric::Invalid);
        assert_eq!(r.r_mn_a_end, Metric::Invalid);
        assert!(!r.flags.is_empty());
        assert!(report_csv(&[r]).contains(",NaN,"));
    }

    #[test]
    fn unknown_sample_rejected() {
        let (names, truth) = truth_set(1, 200);
        let std = Standardizer::identity(&truth[0].channel_names, 2, &[]);
        let mut set = persistence_set(
            Variant::FourBox,
            Mode::Stochastic,
            100,
            50,
            &std,
            &names,
            &truth,
            1,
        )
        .unwrap();
        set.samples[0] = "other".into();
        assert!(matches!(
            evaluate(&set, &names, &truth, &std),
            Err(EvalError::UnknownSample(_))
        ));
    }

    #[test]
    fn histogram_counts() {
        let mk = |t: Option<f64>, p: Option<f64>| SampleMetrics {
            name: "x".into(),
            n_rows: 0,
            se_1: 0.0,
            se_1_raw: 0.0,
            n_1: 0,
            se_ar: 0.0,
            se_ar_raw: 0.0,
            n_ar: 0,
            se_ar_mn: 0.0,
            se_ar_mn_raw: 0.0,
            n_ar_mn: 0,
            sdtw_1: 0.0,
            finite_1: true,
            finite_ar: true,
            truth_collapse: [t, None],
            pred_collapse: [p, None],
            truth_end_mn: 0.0,
            pred_end_mn: 0.0,
        };
        let s = vec![mk(Some(5.0), Some(12.0)), mk(Some(14.0), None)];
        let csv = histogram_csv(&s, 0, 10.0);
        assert_eq!(
            csv,
            "bin_start_years,bin_end_years,truth,pred\n0,10,1,0\n10,20,1,1\n"
        );
    }
}
