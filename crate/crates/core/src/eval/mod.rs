//! Forecast metrics, the persistence baseline, prediction-set exchange,
//! report generation and the simulator/surrogate speed comparison.

mod external;
mod report;
mod speed;

use std::fmt;
use std::path::PathBuf;

use ndarray::{Array2, ArrayView2};
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::boxmodel::{ArchiveError, SimError};
use crate::ensemble::CollapseStats;
use crate::rollout::RolloutError;
use crate::sdtw::SdtwError;

pub use external::{
    export_predictions, ingest_external_predictions, PredictionManifest, PREDICTIONS_FORMAT,
};
pub use report::{
    evaluate, histogram_csv, parity_csv, persistence_set, predict_set, report_csv, report_markdown,
    write_evaluation, write_reports, EvalMode, Evaluation, MetricReport, PredictionSet,
    SampleMetrics, SDTW_GAMMA,
};
pub use speed::{hardware_descriptor, speed_benchmark, SpeedReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("prediction sample '{0}' has no matching truth trajectory")]
    UnknownSample(String),
    #[error("manifest mismatch: {0}")]
    Mismatch(String),
    #[error("rollout of sample '{sample}' failed: {source}")]
    Rollout {
        sample: String,
        #[source]
        source: RolloutError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Sdtw(#[from] SdtwError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A reported number, or why there is none. `Invalid` marks metrics
/// poisoned by non-finite predictions; `Undefined` marks statistics that do
/// not exist for the data (too few samples, zero variance, absent basin).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Value(f64),
    Invalid,
    Undefined,
}

impl Metric {
    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{v}"),
            Metric::Invalid => f.write_str("NaN"),
            Metric::Undefined => f.write_str("N/A"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

fn check_shapes(
    what: &'static str,
    pred: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<(), EvalError> {
    if pred.dim() != truth.dim() {
        return Err(EvalError::Shape {
            what,
            expected: truth.dim(),
            got: pred.dim(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty(what));
    }
    Ok(())
}

/// Sum of squared differences and element count.
fn squared_error(pred: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> (f64, usize) {
    let se = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (se, pred.len())
}

/// Root mean squared error over every entry.
pub fn rmse(pred: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<f64, EvalError> {
    check_shapes("rmse", pred, truth)?;
    let (se, n) = squared_error(pred, truth);
    Ok((se / n as f64).sqrt())
}

/// The last history row repeated `horizon` times.
pub fn persistence_forecast(
    history: ArrayView2<'_, f64>,
    horizon: usize,
) -> Result<Array2<f64>, EvalError> {
    let n = history.nrows();
    if n == 0 {
        return Err(EvalError::Empty("history"));
    }
    let last = history.row(n - 1);
    Ok(Array2::from_shape_fn(
        (horizon, history.ncols()),
        |(_, j)| last[j],
    ))
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooFewSamples {
            need: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn metric_of(r: Result<f64, EvalError>) -> Metric {
    match r {
        Ok(v) if v.is_finite() => Metric::Value(v),
        Ok(_) => Metric::Invalid,
        Err(_) => Metric::Undefined,
    }
}

/// Collapse agreement between matched predicted and true annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct CollapseMetrics {
    pub n_samples: usize,
    /// Fraction of samples on which prediction and truth agree about
    /// whether a collapse happens at all.
    pub detection_rate: f64,
    pub n_joint: usize,
    /// Pearson r of collapse times over jointly collapsing samples.
    pub timing_r: Metric,
    /// `(truth, pred)` collapse times per sample.
    pub parity: Vec<(Option<f64>, Option<f64>)>,
}

pub fn collapse_metrics(
    pred: &[Option<f64>],
    truth: &[Option<f64>],
) -> Result<CollapseMetrics, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty("sample intersection"));
    }
    let agree = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| p.is_some() == t.is_some())
        .count();
    let (tj, pj): (Vec<f64>, Vec<f64>) = truth
        .iter()
        .zip(pred)
        .filter_map(|(t, p)| Some(((*t)?, (*p)?)))
        .unzip();
    Ok(CollapseMetrics {
        n_samples: pred.len(),
        detection_rate: agree as f64 / pred.len() as f64,
        n_joint: tj.len(),
        timing_r: metric_of(pearson_r(&pj, &tj)),
        parity: truth.iter().copied().zip(pred.iter().copied()).collect(),
    })
}

/// Per-sample collapse-time moments of two matched ensembles.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleParity {
    /// `(truth mean, pred mean, truth std, pred std)` per sample.
    pub rows: Vec<[Option<f64>; 4]>,
    pub mean_r: Metric,
    pub std_r: Metric,
}

impl EnsembleParity {
    pub fn to_csv(&self) -> String {
        let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("sample,truth_mean,pred_mean,truth_std,pred_std\n");
        for (k, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{k},{},{},{},{}\n",
                f(r[0]),
                f(r[1]),
                f(r[2]),
                f(r[3])
            ));
        }
        out
    }
}

pub fn ensemble_parity(
    pred: &[CollapseStats],
    truth: &[CollapseStats],
) -> Result<EnsembleParity, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty("sample intersection"));
    }
    let rows: Vec<[Option<f64>; 4]> = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| [t.mean, p.mean, t.std, p.std])
        .collect();
    let paired = |a: usize, b: usize| -> (Vec<f64>, Vec<f64>) {
        rows.iter().filter_map(|r| Some((r[a]?, r[b]?))).unzip()
    };
    let (tm, pm) = paired(0, 1);
    let (ts, ps) = paired(2, 3);
    Ok(EnsembleParity {
        mean_r: metric_of(pearson_r(&pm, &tm)),
        std_r: metric_of(pearson_r(&ps, &ts)),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::collapse_stats;
    use ndarray::array;

    #[test]
    fn rmse_examples() {
        let t = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(rmse(t.view(), t.view()).unwrap(), 0.0);
        let p = &t + 1.0;
        assert!((rmse(p.view(), t.view()).unwrap() - 1.0).abs() < 1e-15);
        let short = array![[1.0, 2.0]];
        assert!(matches!(
            rmse(short.view(), t.view()),
            Err(EvalError::Shape { .. })
        ));
    }

    #[test]
    fn persistence_examples() {
        let h = array![[1.0, 2.0], [3.0, 4.0]];
        let one = persistence_forecast(h.view(), 1).unwrap();
        assert_eq!(one, array![[3.0, 4.0]]);
        let many = persistence_forecast(h.view(), 5).unwrap();
        assert!(many.rows().into_iter().all(|r| r == h.row(1)));
        let flat = Array2::from_elem((4, 3), 2.5);
        let pf = persistence_forecast(flat.view(), 6).unwrap();
        assert_eq!(
            rmse(pf.view(), Array2::from_elem((6, 3), 2.5).view()).unwrap(),
            0.0
        );
        assert!(matches!(
            persistence_forecast(Array2::zeros((0, 2)).view(), 3),
            Err(EvalError::Empty(_))
        ));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 4.0, 7.0];
        assert!((pearson_r(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 3.0).collect();
        assert!((pearson_r(&x, &y).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson_r(&x, &[1.0; 4]),
            Err(EvalError::ZeroVariance)
        ));
        assert!(matches!(
            pearson_r(&[1.0], &[1.0]),
            Err(EvalError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn identical_annotations() {
        let t = [Some(10.0), None, Some(30.0)];
        let m = collapse_metrics(&t, &t).unwrap();
        assert_eq!(m.detection_rate, 1.0);
        assert!((m.timing_r.value().unwrap() - 1.0).abs() < 1e-12);
        let constant = [Some(10.0), Some(10.0)];
        assert_eq!(
            collapse_metrics(&constant, &constant).unwrap().timing_r,
            Metric::Undefined
        );
        assert!(matches!(
            collapse_metrics(&[], &[]),
            Err(EvalError::Empty(_))
        ));
    }

    #[test]
    fn shifted_predictions_keep_perfect_timing() {
        let t = [Some(10.0), None, Some(30.0), Some(55.0)];
        let p: Vec<Option<f64>> = t.iter().map(|x| x.map(|v| v + 10.0)).collect();
        let m = collapse_metrics(&p, &t).unwrap();
        assert_eq!(m.detection_rate, 1.0);
        assert!((m.timing_r.value().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.n_joint, 3);
    }

    #[test]
    fn missed_collapse_lowers_detection() {
        let t = [Some(10.0), None, Some(30.0), None];
        let p = [None, None, Some(31.0), Some(5.0)];
        let m = collapse_metrics(&p, &t).unwrap();
        assert_eq!(m.detection_rate, 0.5);
        assert_eq!(m.n_joint, 1);
        assert_eq!(m.timing_r, Metric::Undefined);
    }

    #[test]
    fn parity_of_identical_ensembles() {
        let stats: Vec<CollapseStats> = (0..4)
            .map(|k| {
                collapse_stats(
                    &[Some(10.0 * k as f64), Some(12.0 * k as f64 + 3.0), None],
                    3,
                )
            })
            .collect();
        let p = ensemble_parity(&stats, &stats).unwrap();
        assert!((p.mean_r.value().unwrap() - 1.0).abs() < 1e-12);
        assert!((p.std_r.value().unwrap() - 1.0).abs() < 1e-12);
        assert!(p.to_csv().starts_with("sample,truth_mean"));
    }

    #[test]
    fn metric_rendering() {
        assert_eq!(Metric::Value(0.5).to_string(), "0.5");
        assert_eq!(Metric::Invalid.to_string(), "NaN");
        assert_eq!(Metric::Undefined.to_string(), "N/A");
        assert_eq!(serde_json::to_string(&Metric::Invalid).unwrap(), "\"NaN\"");
    }
}
