use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::ParamStore;
use super::model::{Batch, TftModel};
use super::TftError;
use crate::autodiff::Tape;
use crate::boxmodel::stream_rng;
use crate::dataset::WindowedExample;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Array2<f64>> = store
            .values()
            .iter()
            .map(|p| Array2::zeros(p.dim()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array2<f64>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in store
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * k));
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a new best.
#[derive(Clone, Debug)]
pub struct EarlyStop {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Verdict {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            Verdict::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub steps: usize,
}

/// One optimiser step on `batch`; returns the loss before the update.
pub fn train_step(
    model: &mut TftModel,
    adam: &mut Adam,
    batch: &Batch,
    rng: &mut ChaCha8Rng,
) -> Result<f64, TftError> {
    let mut tape = if model.config.dropout > 0.0 {
        Tape::training(rng.clone())
    } else {
        Tape::new()
    };
    let (params, out) = model.forward(&mut tape, batch)?;
    let loss = model.loss(&mut tape, &out, batch)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(TftError::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    let grads = tape.backward(loss)?;
    let mut g: Vec<Array2<f64>> = params
        .iter()
        .zip(model.params().values())
        .map(|(&v, p)| grads.wrt(v, p.dim()))
        .collect();
    clip_global_norm(&mut g, model.config.clip_norm);
    if let Some(r) = tape.into_rng() {
        *rng = r;
    }
    adam.step(model.params_mut(), &g);
    Ok(value)
}

/// Mean loss over `examples` in evaluation mode, weighted by batch size.
pub fn evaluate_loss(model: &TftModel, examples: &[WindowedExample]) -> Result<f64, TftError> {
    if examples.is_empty() {
        return Err(TftError::EmptySplit("validation"));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(model.config.batch_size) {
        let refs: Vec<&WindowedExample> = chunk.iter().collect();
        let batch = Batch::from_examples(&refs, &model.config)?;
        let mut t = Tape::new();
        let (_, out) = model.forward(&mut t, &batch)?;
        let loss = model.loss(&mut t, &out, &batch)?;
        total += t.scalar(loss) * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

pub fn train(
    model: &mut TftModel,
    train: &[WindowedExample],
    val: &[WindowedExample],
) -> Result<TrainReport, TftError> {
    train_with(model, train, val, |_| {})
}

/// Mini-batch Adam with global-norm clipping and early stopping on the
/// validation loss. The model is left holding the best-validation parameters.
pub fn train_with(
    model: &mut TftModel,
    train: &[WindowedExample],
    val: &[WindowedExample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport, TftError> {
    if train.is_empty() {
        return Err(TftError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TftError::EmptySplit("validation"));
    }
    let cfg = model.config.clone();
    let mut adam = Adam::new(model.params(), cfg.lr);
    let mut shuffle = stream_rng(cfg.seed, 1);
    let mut dropout = stream_rng(cfg.seed, 2);
    let mut stop = EarlyStop::new(cfg.patience.max(1));
    let mut best = model.params().clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut steps = 0;
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        let mut seen = 0;
        for (k, idx) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_batches_per_epoch.is_some_and(|m| k >= m) {
                break;
            }
            let refs: Vec<&WindowedExample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = Batch::from_examples(&refs, &cfg)?;
            let loss = train_step(model, &mut adam, &batch, &mut dropout).map_err(|e| match e {
                TftError::NonFiniteLoss { .. } => TftError::NonFiniteLoss { epoch, batch: k },
                other => other,
            })?;
            sum += loss * idx.len() as f64;
            seen += idx.len();
            steps += 1;
        }
        let val_loss = evaluate_loss(model, val)?;
        if !val_loss.is_finite() {
            return Err(TftError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: sum / seen as f64,
            val_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        history.push(rec);
        match stop.observe(val_loss) {
            Verdict::Improved => {
                best = model.params().clone();
                best_epoch = epoch;
            }
            Verdict::Continue => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    *model.params_mut() = best;
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_loss: stop.best(),
        stopped_early,
        steps,
    })
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,wall_seconds\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.epoch, r.train_loss, r.val_loss, r.wall_seconds
        ));
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), TftError> {
    std::fs::write(path, history_csv(history)).map_err(|source| TftError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn patience_one_stops_after_two_epochs() {
        let mut s = EarlyStop::new(1);
        let verdicts: Vec<Verdict> = [1.0, 2.0, 3.0].iter().map(|&v| s.observe(v)).collect();
        assert_eq!(verdicts[..2], [Verdict::Improved, Verdict::Stop]);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![
            Array2::from_elem((2, 2), 3.0),
            Array2::from_elem((1, 1), 4.0),
        ];
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - (36.0f64 + 16.0).sqrt()).abs() < 1e-12);
        let after: f64 = g
            .iter()
            .flat_map(|a| a.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::default();
        {
            let mut init =
                super::super::blocks::Init::new(&mut store, ChaCha8Rng::seed_from_u64(0));
            init.fill("x", 1, 2, 1.0);
        }
        let mut adam = Adam::new(&store, 0.1);
        adam.step(
            &mut store,
            &[Array2::from_shape_vec((1, 2), vec![3.0, -0.5]).unwrap()],
        );
        let x = store.get("x").unwrap();
        assert!((x[[0, 0]] - 0.9).abs() < 1e-6 && (x[[0, 1]] - 1.1).abs() < 1e-6);
    }
}
