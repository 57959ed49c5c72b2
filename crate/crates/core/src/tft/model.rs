use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{finite, repeat_rows, Grn, Init, Linear, Lstm, LstmState, ParamStore, Vsn};
use super::{LossKind, TftConfig, TftError};
use crate::autodiff::{Tape, Var};
use crate::boxmodel::Variant;
use crate::dataset::{DatasetManifest, Mode, Standardizer, WindowedExample};

/// Variable names and scaling the network was trained against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub variant: Variant,
    pub mode: Mode,
    pub channel_names: Vec<String>,
    pub known_names: Vec<String>,
    pub static_names: Vec<String>,
    pub standardizer: Standardizer,
}

impl ModelMeta {
    pub fn from_manifest(m: &DatasetManifest) -> Self {
        ModelMeta {
            variant: m.variant,
            mode: m.mode,
            channel_names: m.channel_names.clone(),
            known_names: m.known_names.clone(),
            static_names: m.static_names.clone(),
            standardizer: m.standardizer.clone(),
        }
    }
}

/// Standardised inputs of one window.
#[derive(Clone, Copy, Debug)]
pub struct WindowInputs<'a> {
    pub history: ArrayView2<'a, f64>,
    pub history_known: ArrayView2<'a, f64>,
    pub future_known: ArrayView2<'a, f64>,
    pub statics: ArrayView1<'a, f64>,
}

impl<'a> From<&'a WindowedExample> for WindowInputs<'a> {
    fn from(e: &'a WindowedExample) -> Self {
        WindowInputs {
            history: e.history.view(),
            history_known: e.history_known.view(),
            future_known: e.future_known.view(),
            statics: e.statics.view(),
        }
    }
}

/// Time-major stacking of a batch: row `t·B + b` is step `t` of example `b`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub history: Array2<f64>,
    pub history_known: Array2<f64>,
    pub future_known: Array2<f64>,
    pub statics: Array2<f64>,
    /// `[L·B × n_targets]`, present for training batches.
    pub target: Option<Array2<f64>>,
    /// Per-example `[L × n_targets]` targets for sequence losses.
    pub targets: Vec<Array2<f64>>,
}

fn stack(parts: &[ArrayView2<'_, f64>]) -> Array2<f64> {
    let b = parts.len();
    let (rows, cols) = parts[0].dim();
    let mut out = Array2::zeros((rows * b, cols));
    for (k, p) in parts.iter().enumerate() {
        out.slice_mut(s![k..;b, ..]).assign(p);
    }
    out
}

impl Batch {
    pub fn from_inputs(inputs: &[WindowInputs<'_>], config: &TftConfig) -> Result<Self, TftError> {
        if inputs.is_empty() {
            return Err(TftError::EmptyBatch);
        }
        let c = config;
        for w in inputs {
            let checks = [
                ("history rows", c.history, w.history.nrows()),
                ("history channels", c.n_channels, w.history.ncols()),
                ("history known rows", c.history, w.history_known.nrows()),
                ("known covariates", c.n_known, w.history_known.ncols()),
                ("future known rows", c.horizon, w.future_known.nrows()),
                ("future known covariates", c.n_known, w.future_known.ncols()),
                ("statics", c.n_statics, w.statics.len()),
            ];
            for (what, expected, got) in checks {
                if expected != got {
                    return Err(TftError::Shape {
                        what,
                        expected,
                        got,
                    });
                }
            }
        }
        let history: Vec<_> = inputs.iter().map(|w| w.history).collect();
        let history_known: Vec<_> = inputs.iter().map(|w| w.history_known).collect();
        let future_known: Vec<_> = inputs.iter().map(|w| w.future_known).collect();
        let statics =
            Array2::from_shape_fn((inputs.len(), c.n_statics), |(b, j)| inputs[b].statics[j]);
        Ok(Batch {
            size: inputs.len(),
            history: stack(&history),
            history_known: stack(&history_known),
            future_known: stack(&future_known),
            statics,
            target: None,
            targets: Vec::new(),
        })
    }

    pub fn from_examples(
        examples: &[&WindowedExample],
        config: &TftConfig,
    ) -> Result<Self, TftError> {
        let inputs: Vec<WindowInputs<'_>> =
            examples.iter().map(|e| WindowInputs::from(*e)).collect();
        let mut batch = Self::from_inputs(&inputs, config)?;
        let mut targets = Vec::with_capacity(examples.len());
        for e in examples {
            if e.target.dim() != (config.horizon, config.n_channels) {
                return Err(TftError::Shape {
                    what: "target rows",
                    expected: config.horizon,
                    got: e.target.nrows(),
                });
            }
            targets.push(e.target.slice(s![.., ..config.n_targets]).to_owned());
        }
        let views: Vec<_> = targets.iter().map(|t| t.view()).collect();
        batch.target = Some(stack(&views));
        batch.targets = targets;
        Ok(batch)
    }
}

/// Tape handles produced by one forward pass.
pub struct Forward {
    /// `[L·B × n_targets]`, time-major.
    pub pred: Var,
    pub static_weights: Option<Var>,
    pub history_weights: Var,
    pub future_weights: Var,
}

#[derive(Clone, Debug)]
struct Arch {
    static_vsn: Option<Vsn>,
    /// Selection, enrichment, hidden-state and cell-state contexts.
    contexts: Option<[Grn; 4]>,
    history_vsn: Vsn,
    future_vsn: Vsn,
    encoder: Lstm,
    decoder: Lstm,
    gate: Linear,
    gate_ln: (usize, usize),
    enrich: Grn,
    position: Grn,
    head: Linear,
}

impl Arch {
    fn build(c: &TftConfig, init: &mut Init<'_>) -> Self {
        let d = c.d_model;
        let p = c.dropout;
        let has_statics = c.n_statics > 0;
        let ctx = has_statics.then_some(d);
        let static_vsn = has_statics.then(|| Vsn::new(init, "static_vsn", c.n_statics, d, None, p));
        let contexts = has_statics.then(|| {
            ["ctx_select", "ctx_enrich", "ctx_hidden", "ctx_cell"]
                .map(|n| Grn::new(init, n, d, d, d, None, p))
        });
        let history_vsn = Vsn::new(init, "history_vsn", c.n_channels + c.n_known, d, ctx, p);
        let future_vsn = Vsn::new(init, "future_vsn", c.n_known, d, ctx, p);
        let encoder = Lstm::new(init, "encoder", d, d, c.n_lstm_layers);
        let decoder = Lstm::new(init, "decoder", d, d, c.n_lstm_layers);
        let gate = Linear::new(init, "post_gate", d, 2 * d);
        let gate_ln = (
            init.fill("post_gate.ln.gain", 1, d, 1.0),
            init.fill("post_gate.ln.bias", 1, d, 0.0),
        );
        let enrich = Grn::new(init, "enrich", d, d, d, ctx, p);
        let position = Grn::new(init, "position", d, d, d, None, p);
        // In increment mode a zero head starts the network at persistence.
        let head = if c.last_value_skip {
            Linear::zeros(init, "head", d, c.n_targets)
        } else {
            Linear::new(init, "head", d, c.n_targets)
        };
        Arch {
            static_vsn,
            contexts,
            history_vsn,
            future_vsn,
            encoder,
            decoder,
            gate,
            gate_ln,
            enrich,
            position,
            head,
        }
    }
}

/// Attention-free temporal fusion network plus its variable metadata.
#[derive(Clone, Debug)]
pub struct TftModel {
    pub config: TftConfig,
    pub meta: ModelMeta,
    store: ParamStore,
    arch: Arch,
}

impl TftModel {
    pub fn new(config: TftConfig, meta: ModelMeta) -> Result<Self, TftError> {
        config.validate()?;
        let dims = [
            ("channel names", config.n_channels, meta.channel_names.len()),
            ("known names", config.n_known, meta.known_names.len()),
            ("static names", config.n_statics, meta.static_names.len()),
            (
                "standardizer channels",
                config.n_channels,
                meta.standardizer.channel_names.len(),
            ),
            (
                "standardizer known",
                config.n_known,
                meta.standardizer.known_mean.len(),
            ),
            (
                "standardizer statics",
                config.n_statics,
                meta.standardizer.static_names.len(),
            ),
        ];
        for (what, expected, got) in dims {
            if expected != got {
                return Err(TftError::Shape {
                    what,
                    expected,
                    got,
                });
            }
        }
        if meta.standardizer.channel_names != meta.channel_names {
            return Err(TftError::ChannelOrder {
                expected: meta.channel_names.clone(),
                found: meta.standardizer.channel_names.clone(),
            });
        }
        let mut store = ParamStore::default();
        let arch = {
            let mut init = Init::new(&mut store, ChaCha8Rng::seed_from_u64(config.seed));
            Arch::build(&config, &mut init)
        };
        Ok(TftModel {
            config,
            meta,
            store,
            arch,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn check_channels(&self, names: &[String]) -> Result<(), TftError> {
        if names != self.meta.channel_names.as_slice() {
            return Err(TftError::ChannelOrder {
                expected: self.meta.channel_names.clone(),
                found: names.to_vec(),
            });
        }
        Ok(())
    }

    /// Forward pass with the stored parameters bound as fresh leaves.
    pub fn forward(&self, t: &mut Tape, batch: &Batch) -> Result<(Vec<Var>, Forward), TftError> {
        let p = self.store.bind(t);
        let out = self.forward_with(t, &p, batch)?;
        Ok((p, out))
    }

    /// Forward pass against caller-supplied parameter variables, in
    /// [`ParamStore`] order.
    pub fn forward_with(
        &self,
        t: &mut Tape,
        p: &[Var],
        batch: &Batch,
    ) -> Result<Forward, TftError> {
        let c = &self.config;
        let a = &self.arch;
        let b = batch.size;
        let (h, l) = (c.history, c.horizon);

        let (contexts, static_weights) = match (&a.static_vsn, &a.contexts) {
            (Some(vsn), Some(grns)) => {
                let statics = t.leaf(batch.statics.clone());
                let sel = vsn.apply(t, p, statics, None, None)?;
                let emb = finite(t, sel.combined, "static_vsn")?;
                let mut ctx = [emb; 4];
                for (k, grn) in grns.iter().enumerate() {
                    ctx[k] = grn.apply(t, p, emb, None)?;
                }
                (Some(ctx), Some(sel.weights))
            }
            _ => (None, None),
        };
        let [c_select, c_enrich, c_hidden, c_cell] = match contexts {
            Some(ctx) => ctx.map(Some),
            None => [None; 4],
        };

        let history = t.leaf(batch.history.clone());
        let history_known = t.leaf(batch.history_known.clone());
        let hist_in = t.concat_cols(&[history, history_known])?;
        let ctx_h = c_select.map(|cs| repeat_rows(t, cs, h)).transpose()?;
        let hist = a.history_vsn.apply(t, p, hist_in, ctx_h, None)?;
        let hist_x = finite(t, hist.combined, "history_vsn")?;

        let future_known = t.leaf(batch.future_known.clone());
        let ctx_f = c_select.map(|cs| repeat_rows(t, cs, l)).transpose()?;
        let fut = a.future_vsn.apply(t, p, future_known, ctx_f, None)?;
        let fut_x = finite(t, fut.combined, "future_vsn")?;

        let mut init = vec![None; a.encoder.n_layers()];
        if let (Some(hc), Some(cc)) = (c_hidden, c_cell) {
            init[0] = Some(LstmState { h: hc, c: cc });
        }
        let (_, enc_states) = a.encoder.apply(t, p, hist_x, b, &init)?;
        let dec_init: Vec<Option<LstmState>> = enc_states.into_iter().map(Some).collect();
        let (dec, _) = a.decoder.apply(t, p, fut_x, b, &dec_init)?;

        let g = a.gate.apply(t, p, dec)?;
        let d = c.d_model;
        let gv = t.slice_cols(g, 0, d)?;
        let gg = t.slice_cols(g, d, d)?;
        let gated = t.glu(gv, gg)?;
        let res = t.add(gated, fut_x)?;
        let post = t.layer_norm(res, p[a.gate_ln.0], p[a.gate_ln.1])?;
        let post = finite(t, post, "post_gate")?;

        let ctx_e = c_enrich.map(|ce| repeat_rows(t, ce, l)).transpose()?;
        let enriched = a.enrich.apply(t, p, post, ctx_e)?;
        let enriched = finite(t, enriched, "enrich")?;
        let pos = a.position.apply(t, p, enriched, None)?;
        let pos = finite(t, pos, "position")?;
        let mut pred = a.head.apply(t, p, pos)?;
        if c.last_value_skip {
            let last = t.slice_rows(history, (h - 1) * b, b)?;
            let last = t.slice_cols(last, 0, c.n_targets)?;
            let last = repeat_rows(t, last, l)?;
            pred = t.add(pred, last)?;
        }
        let pred = finite(t, pred, "head")?;
        Ok(Forward {
            pred,
            static_weights,
            history_weights: hist.weights,
            future_weights: fut.weights,
        })
    }

    pub fn loss(&self, t: &mut Tape, out: &Forward, batch: &Batch) -> Result<Var, TftError> {
        match self.config.loss {
            LossKind::QuantileMedian => {
                let target = batch.target.as_ref().ok_or(TftError::MissingTargets)?;
                let tv = t.leaf(target.clone());
                Ok(t.median_loss(out.pred, tv)?)
            }
            LossKind::Sdtw => Ok(t.sdtw_loss(out.pred, &batch.targets, self.config.gamma)?),
        }
    }

    /// Evaluation-mode predictions, one `[L × n_targets]` block per example,
    /// in standardised units.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<Array2<f64>>, TftError> {
        let mut t = Tape::new();
        let (_, out) = self.forward(&mut t, batch)?;
        let pred = t.value(out.pred);
        let b = batch.size;
        Ok((0..b)
            .map(|k| pred.slice(s![k..;b, ..]).to_owned())
            .collect())
    }

    /// Mean selection weight per variable over a batch: statics, history
    /// inputs (channels then known covariates), future inputs.
    pub fn selection_weights(&self, batch: &Batch) -> Result<SelectionWeights, TftError> {
        let mut t = Tape::new();
        let (_, out) = self.forward(&mut t, batch)?;
        let mean =
            |v: Var| -> Array1<f64> { t.value(v).mean_axis(ndarray::Axis(0)).expect("nonempty") };
        let mut history_names = self.meta.channel_names.clone();
        history_names.extend(self.meta.known_names.iter().cloned());
        Ok(SelectionWeights {
            statics: self
                .meta
                .static_names
                .iter()
                .cloned()
                .zip(out.static_weights.map(mean).unwrap_or_default())
                .collect(),
            history: history_names
                .into_iter()
                .zip(mean(out.history_weights))
                .collect(),
            future: self
                .meta
                .known_names
                .iter()
                .cloned()
                .zip(mean(out.future_weights))
                .collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionWeights {
    pub statics: Vec<(String, f64)>,
    pub history: Vec<(String, f64)>,
    pub future: Vec<(String, f64)>,
}

impl SelectionWeights {
    /// `kind,variable,weight` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,variable,weight\n");
        for (kind, rows) in [
            ("static", &self.statics),
            ("history", &self.history),
            ("future", &self.future),
        ] {
            for (name, w) in rows {
                out.push_str(&format!("{kind},{name},{w}\n"));
            }
        }
        out
    }
}
