//! Linear maps, gated residual networks, variable selection and stacked
//! LSTMs on the autodiff tape. Parameters live in a [`ParamStore`] and are
//! addressed by index; forward passes take the bound tape variables.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::TftError;
use crate::autodiff::{Tape, Var};

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Places every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    fn push(&mut self, name: String, value: Array2<f64>) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }
}

/// Registers parameters with seeded Glorot-uniform weights.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: ChaCha8Rng) -> Self {
        Init { store, rng }
    }

    pub fn weight(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let v = Array2::from_shape_fn((rows, cols), |_| self.rng.random_range(-a..a));
        self.store.push(name.to_string(), v)
    }

    pub fn fill(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> usize {
        self.store
            .push(name.to_string(), Array2::from_elem((rows, cols), value))
    }

    pub fn value(&mut self, name: &str, value: Array2<f64>) -> usize {
        self.store.push(name.to_string(), value)
    }
}

fn check_finite(t: &Tape, v: Var, layer: &str) -> Result<Var, TftError> {
    if t.value(v).iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(TftError::NonFinite(layer.to_string()))
    }
}

/// Stacks `c` (B rows) `times` times, matching time-major sequence rows.
pub fn repeat_rows(t: &mut Tape, c: Var, times: usize) -> Result<Var, TftError> {
    if times == 1 {
        return Ok(c);
    }
    Ok(t.concat_rows(&vec![c; times])?)
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: usize,
    b: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, inputs: usize, outputs: usize) -> Self {
        Linear {
            w: init.weight(&format!("{name}.w"), inputs, outputs),
            b: init.fill(&format!("{name}.b"), 1, outputs, 0.0),
            inputs,
            outputs,
        }
    }

    /// Zero-initialised weights.
    pub fn zeros(init: &mut Init<'_>, name: &str, inputs: usize, outputs: usize) -> Self {
        Linear {
            w: init.fill(&format!("{name}.w"), inputs, outputs, 0.0),
            b: init.fill(&format!("{name}.b"), 1, outputs, 0.0),
            inputs,
            outputs,
        }
    }

    pub fn apply(&self, t: &mut Tape, p: &[Var], x: Var) -> Result<Var, TftError> {
        Ok(t.affine(x, p[self.w], p[self.b])?)
    }
}

/// Gated residual network:
/// `layer_norm(skip(a) + glu(W2·dropout(elu(W1·a + Wc·c + b1)) + b2))`.
#[derive(Clone, Debug)]
pub struct Grn {
    fc1: Linear,
    context: Option<usize>,
    fc2: Linear,
    skip: Option<Linear>,
    ln_gain: usize,
    ln_bias: usize,
    pub outputs: usize,
    dropout: f64,
}

impl Grn {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        context: Option<usize>,
        dropout: f64,
    ) -> Self {
        Grn {
            fc1: Linear::new(init, &format!("{name}.fc1"), inputs, hidden),
            context: context.map(|c| init.weight(&format!("{name}.ctx.w"), c, hidden)),
            fc2: Linear::new(init, &format!("{name}.fc2"), hidden, 2 * outputs),
            skip: (inputs != outputs)
                .then(|| Linear::new(init, &format!("{name}.skip"), inputs, outputs)),
            ln_gain: init.fill(&format!("{name}.ln.gain"), 1, outputs, 1.0),
            ln_bias: init.fill(&format!("{name}.ln.bias"), 1, outputs, 0.0),
            outputs,
            dropout,
        }
    }

    pub fn apply(
        &self,
        t: &mut Tape,
        p: &[Var],
        a: Var,
        context: Option<Var>,
    ) -> Result<Var, TftError> {
        let mut h = self.fc1.apply(t, p, a)?;
        match (self.context, context) {
            (Some(w), Some(c)) => {
                let hc = t.matmul(c, p[w])?;
                h = t.add(h, hc)?;
            }
            (None, Some(_)) => {
                return Err(TftError::Config(
                    "context passed to a context-free GRN".into(),
                ))
            }
            _ => {}
        }
        let eta = t.elu(h);
        let eta = t.dropout(eta, self.dropout)?;
        let g = self.fc2.apply(t, p, eta)?;
        let value = t.slice_cols(g, 0, self.outputs)?;
        let gate = t.slice_cols(g, self.outputs, self.outputs)?;
        let gated = t.glu(value, gate)?;
        let skip = match &self.skip {
            Some(s) => s.apply(t, p, a)?,
            None => a,
        };
        let sum = t.add(skip, gated)?;
        Ok(t.layer_norm(sum, p[self.ln_gain], p[self.ln_bias])?)
    }
}

/// Variable selection: per-variable scalar embeddings, softmax relevance
/// weights from a GRN over all embeddings, weighted sum of per-variable GRNs.
#[derive(Clone, Debug)]
pub struct Vsn {
    embed: Vec<(usize, usize)>,
    flat: Grn,
    per_var: Vec<Grn>,
    d: usize,
}

/// Combined representation `[rows × d]` and weights `[rows × n_vars]`.
pub struct Selection {
    pub combined: Var,
    pub weights: Var,
}

impl Vsn {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        n_vars: usize,
        d: usize,
        context: Option<usize>,
        dropout: f64,
    ) -> Self {
        let embed = (0..n_vars)
            .map(|j| {
                (
                    init.weight(&format!("{name}.embed{j}.w"), 1, d),
                    init.fill(&format!("{name}.embed{j}.b"), 1, d, 0.0),
                )
            })
            .collect();
        let flat = Grn::new(
            init,
            &format!("{name}.flat"),
            n_vars * d,
            d,
            n_vars,
            context,
            dropout,
        );
        let per_var = (0..n_vars)
            .map(|j| Grn::new(init, &format!("{name}.var{j}"), d, d, d, None, dropout))
            .collect();
        Vsn {
            embed,
            flat,
            per_var,
            d,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.embed.len()
    }

    /// `inputs` is `[rows × n_vars]`. `mask[j] == false` forces variable `j`'s
    /// weight to zero through a −∞ logit.
    pub fn apply(
        &self,
        t: &mut Tape,
        p: &[Var],
        inputs: Var,
        context: Option<Var>,
        mask: Option<&[bool]>,
    ) -> Result<Selection, TftError> {
        let (rows, n) = t.shape(inputs);
        if n != self.n_vars() {
            return Err(TftError::Shape {
                what: "variable selection inputs",
                expected: self.n_vars(),
                got: n,
            });
        }
        let mut embs = Vec::with_capacity(n);
        for (j, &(w, b)) in self.embed.iter().enumerate() {
            let col = t.slice_cols(inputs, j, 1)?;
            let e = t.matmul(col, p[w])?;
            embs.push(t.add_row(e, p[b])?);
        }
        let flat = if n == 1 {
            embs[0]
        } else {
            t.concat_cols(&embs)?
        };
        let mut logits = self.flat.apply(t, p, flat, context)?;
        if let Some(mask) = mask {
            let m = Array2::from_shape_fn(
                (rows, n),
                |(_, j)| if mask[j] { 0.0 } else { f64::NEG_INFINITY },
            );
            let m = t.leaf(m);
            logits = t.add(logits, m)?;
        }
        let weights = t.softmax_rows(logits);
        let ones = t.leaf(Array2::ones((1, self.d)));
        let mut combined = None;
        for (j, grn) in self.per_var.iter().enumerate() {
            if mask.is_some_and(|m| !m[j]) {
                continue;
            }
            let h = grn.apply(t, p, embs[j], None)?;
            let wj = t.slice_cols(weights, j, 1)?;
            let wj = t.matmul(wj, ones)?;
            let term = t.mul(wj, h)?;
            combined = Some(match combined {
                Some(acc) => t.add(acc, term)?,
                None => term,
            });
        }
        let combined =
            combined.ok_or_else(|| TftError::Config("every variable is masked".into()))?;
        Ok(Selection { combined, weights })
    }
}

#[derive(Clone, Debug)]
struct LstmLayer {
    wx: usize,
    wh: usize,
    b: usize,
}

/// Stacked LSTM over time-major rows (row `t·B + b`). Gate order i, f, g, o.
#[derive(Clone, Debug)]
pub struct Lstm {
    layers: Vec<LstmLayer>,
    d: usize,
}

/// Hidden and cell state of one layer, `[B × d]` each.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// One LSTM step given the precomputed input projection `xw = x·Wx + b`.
pub fn lstm_cell(t: &mut Tape, xw: Var, wh: Var, state: LstmState) -> Result<LstmState, TftError> {
    let d = t.shape(state.h).1;
    let hw = t.matmul(state.h, wh)?;
    let z = t.add(xw, hw)?;
    let zi = t.slice_cols(z, 0, d)?;
    let zf = t.slice_cols(z, d, d)?;
    let zg = t.slice_cols(z, 2 * d, d)?;
    let zo = t.slice_cols(z, 3 * d, d)?;
    let i = t.sigmoid(zi);
    let f = t.sigmoid(zf);
    let g = t.tanh(zg);
    let o = t.sigmoid(zo);
    let keep = t.mul(f, state.c)?;
    let write = t.mul(i, g)?;
    let c = t.add(keep, write)?;
    let tc = t.tanh(c);
    let h = t.mul(o, tc)?;
    Ok(LstmState { h, c })
}

impl Lstm {
    pub fn new(init: &mut Init<'_>, name: &str, inputs: usize, d: usize, n_layers: usize) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                let fan_in = if l == 0 { inputs } else { d };
                let wx = init.weight(&format!("{name}.l{l}.wx"), fan_in, 4 * d);
                let wh = init.weight(&format!("{name}.l{l}.wh"), d, 4 * d);
                let mut bias = Array2::zeros((1, 4 * d));
                bias.slice_mut(ndarray::s![.., d..2 * d]).fill(1.0);
                let b = init.value(&format!("{name}.l{l}.b"), bias);
                LstmLayer { wx, wh, b }
            })
            .collect();
        Lstm { layers, d }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Runs all layers over `x` (`[T·B × inputs]`). `init[l]` seeds layer `l`;
    /// missing entries start from zeros. Returns the top-layer outputs and
    /// the final state of each layer.
    pub fn apply(
        &self,
        t: &mut Tape,
        p: &[Var],
        x: Var,
        batch: usize,
        init: &[Option<LstmState>],
    ) -> Result<(Var, Vec<LstmState>), TftError> {
        let rows = t.shape(x).0;
        if batch == 0 || !rows.is_multiple_of(batch) {
            return Err(TftError::Shape {
                what: "lstm rows",
                expected: batch,
                got: rows,
            });
        }
        let steps = rows / batch;
        let mut input = x;
        let mut finals = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let xw = t.affine(input, p[layer.wx], p[layer.b])?;
            let mut state = match init.get(l).copied().flatten() {
                Some(s) => s,
                None => LstmState {
                    h: t.leaf(Array2::zeros((batch, self.d))),
                    c: t.leaf(Array2::zeros((batch, self.d))),
                },
            };
            let mut outs = Vec::with_capacity(steps);
            for k in 0..steps {
                let xk = t.slice_rows(xw, k * batch, batch)?;
                state = lstm_cell(t, xk, p[layer.wh], state)?;
                outs.push(state.h);
            }
            input = t.concat_rows(&outs)?;
            finals.push(state);
        }
        let out = check_finite(t, input, "lstm")?;
        Ok((out, finals))
    }
}

pub(crate) fn finite(t: &Tape, v: Var, layer: &str) -> Result<Var, TftError> {
    check_finite(t, v, layer)
}
