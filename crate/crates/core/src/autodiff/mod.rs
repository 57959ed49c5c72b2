//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D array. Sequence batches are stored time-major as
//! stacked rows, so no higher-rank tensors are needed.

mod check;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::sdtw::{self, SdtwError};

pub use check::{grad_check, grad_check_params, GRAD_FLOOR};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum AdError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("loss must be a 1x1 value, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error(transparent)]
    Sdtw(#[from] SdtwError),
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Abs(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Glu(Var, Var),
    Dropout(Var, Array2<f64>),
    /// Saved gradient of the loss with respect to the input.
    Fused(Var, Array2<f64>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Append-only record of primitive applications. Values are computed
/// eagerly; [`Tape::backward`] walks the record in reverse.
pub struct Tape {
    nodes: Vec<Node>,
    rng: Option<ChaCha8Rng>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Evaluation tape: dropout is the identity.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            rng: None,
        }
    }

    /// Training tape; dropout masks come from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Tape {
            nodes: Vec::new(),
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Hands back the dropout generator so its stream continues across tapes.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// The single entry of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AdError> {
        let (l, r) = (self.shape(a), self.shape(b));
        if l != r {
            return Err(AdError::Shape { op, lhs: l, rhs: r });
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x).mapv(f);
        self.push(v, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (l, r) = (self.shape(a), self.shape(b));
        if l.1 != r.0 {
            return Err(AdError::Shape {
                op: "matmul",
                lhs: l,
                rhs: r,
            });
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `x + 1·b` for a `1 × d` row `b`; the only broadcast supported.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, AdError> {
        let (l, r) = (self.shape(x), self.shape(b));
        if r.0 != 1 || r.1 != l.1 {
            return Err(AdError::Shape {
                op: "add_row",
                lhs: l,
                rhs: r,
            });
        }
        let v = self.value(x) + self.value(b);
        Ok(self.push(v, Op::AddRow(x, b)))
    }

    /// `x·w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AdError> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.map(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let first = self.shape(parts[0]);
        for &p in parts {
            if self.shape(p).0 != first.0 {
                return Err(AdError::Shape {
                    op: "concat_cols",
                    lhs: first,
                    rhs: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("rows checked");
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let first = self.shape(parts[0]);
        for &p in parts {
            if self.shape(p).1 != first.1 {
                return Err(AdError::Shape {
                    op: "concat_rows",
                    lhs: first,
                    rhs: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("cols checked");
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let sh = self.shape(x);
        if start + len > sh.0 || len == 0 {
            return Err(AdError::Invalid {
                op: "slice_rows",
                msg: format!("rows {start}..{} of {sh:?}", start + len),
            });
        }
        let v = self.value(x).slice(s![start..start + len, ..]).to_owned();
        Ok(self.push(v, Op::SliceRows(x, start)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let sh = self.shape(x);
        if start + len > sh.1 || len == 0 {
            return Err(AdError::Invalid {
                op: "slice_cols",
                msg: format!("cols {start}..{} of {sh:?}", start + len),
            });
        }
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        Ok(self.push(v, Op::SliceCols(x, start)))
    }

    /// Sum of all entries, 1x1.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Column sums, `1 × d`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumRows(x))
    }

    /// Row sums, `n × 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, f64::abs, Op::Abs(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|z| (z - m).exp());
            let total = row.sum();
            row.mapv_inplace(|z| z / total);
        }
        self.push(v, Op::SoftmaxRows(x))
    }

    /// Row-wise normalisation with population variance, then `·gain + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AdError> {
        let (n, d) = self.shape(x);
        for p in [gain, bias] {
            if self.shape(p) != (1, d) {
                return Err(AdError::Shape {
                    op: "layer_norm",
                    lhs: (n, d),
                    rhs: self.shape(p),
                });
            }
        }
        let xv = self.value(x);
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mu = row.sum() / d as f64;
            let var = row.iter().map(|z| (z - mu) * (z - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for (k, z) in row.iter().enumerate() {
                xhat[[i, k]] = (z - mu) * inv;
            }
        }
        let v = &xhat * self.value(gain) + self.value(bias);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// `a ⊙ sigmoid(b)`.
    pub fn glu(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.same_shape("glu", a, b)?;
        let v = ndarray::Zip::from(self.value(a))
            .and(self.value(b))
            .map_collect(|&x, &g| x * sigmoid(g));
        Ok(self.push(v, Op::Glu(a, b)))
    }

    /// Inverted dropout; the identity on evaluation tapes or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, AdError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AdError::Invalid {
                op: "dropout",
                msg: format!("rate {p} outside [0, 1)"),
            });
        }
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let sh = self.nodes[x.0].value.dim();
        let mask = Array2::from_shape_fn(sh, |_| if rng.random::<f64>() < p { 0.0 } else { keep });
        let v = self.value(x) * &mask;
        Ok(self.push(v, Op::Dropout(x, mask)))
    }

    /// Mean over the batch of soft-DTW(pred_b, target_b) / (N + M).
    ///
    /// `pred` is time-major: row `t·B + b` holds step `t` of example `b`.
    pub fn sdtw_loss(
        &mut self,
        pred: Var,
        targets: &[Array2<f64>],
        gamma: f64,
    ) -> Result<Var, AdError> {
        let b = targets.len();
        let (rows, cols) = self.shape(pred);
        if b == 0 || rows % b != 0 {
            return Err(AdError::Invalid {
                op: "sdtw_loss",
                msg: format!("{rows} rows do not split into {b} examples"),
            });
        }
        let n = rows / b;
        let pv = self.value(pred);
        let per: Vec<Result<(f64, Array2<f64>), SdtwError>> = targets
            .par_iter()
            .enumerate()
            .map(|(k, tgt)| {
                let x = pv.slice(s![k..;b, ..]);
                if tgt.ncols() != cols {
                    return Err(SdtwError::DimMismatch(cols, tgt.ncols()));
                }
                sdtw::sdtw_value_grad(x, tgt.view(), gamma)
            })
            .collect();
        let mut total = 0.0;
        let mut grad = Array2::zeros((rows, cols));
        for (k, r) in per.into_iter().enumerate() {
            let (val, g) = r?;
            let w = 1.0 / (b as f64 * (n + targets[k].nrows()) as f64);
            total += val * w;
            grad.slice_mut(s![k..;b, ..]).scaled_add(w, &g);
        }
        Ok(self.push(Array2::from_elem((1, 1), total), Op::Fused(pred, grad)))
    }

    /// Pinball loss at the median, `mean(0.5·|pred − target|)`.
    pub fn median_loss(&mut self, pred: Var, target: Var) -> Result<Var, AdError> {
        let d = self.sub(pred, target)?;
        let a = self.abs(d);
        let m = self.mean(a);
        Ok(self.scale(m, 0.5))
    }

    /// Reverse sweep from a 1x1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads, AdError> {
        let sh = self.shape(loss);
        if sh != (1, 1) {
            return Err(AdError::NonScalarLoss(sh));
        }
        let mut g: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        g[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            // Interior gradients are consumed; only leaves keep theirs.
            let Some(gi) = g[i].take() else { continue };
            let mut acc = |v: Var, d: Array2<f64>| match &mut g[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!("leaves are skipped"),
                Op::MatMul(a, b) => {
                    acc(*a, gi.dot(&val(*b).t()));
                    acc(*b, val(*a).t().dot(&gi));
                }
                Op::Add(a, b) => {
                    acc(*a, gi.clone());
                    acc(*b, gi.clone());
                }
                Op::Sub(a, b) => {
                    acc(*b, -&gi);
                    acc(*a, gi.clone());
                }
                Op::Mul(a, b) => {
                    acc(*a, &gi * val(*b));
                    acc(*b, &gi * val(*a));
                }
                Op::AddRow(x, b) => {
                    acc(*b, gi.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*x, gi.clone());
                }
                Op::Scale(x, k) => acc(*x, &gi * *k),
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(*p, gi.slice(s![.., c..c + w]).to_owned());
                        c += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for p in parts {
                        let h = val(*p).nrows();
                        acc(*p, gi.slice(s![r..r + h, ..]).to_owned());
                        r += h;
                    }
                }
                // Slices accumulate in place so unrolled loops stay linear in length.
                Op::SliceRows(x, start) => {
                    let slot = g[x.0].get_or_insert_with(|| Array2::zeros(val(*x).dim()));
                    let mut part = slot.slice_mut(s![*start..*start + gi.nrows(), ..]);
                    part += &gi;
                }
                Op::SliceCols(x, start) => {
                    let slot = g[x.0].get_or_insert_with(|| Array2::zeros(val(*x).dim()));
                    let mut part = slot.slice_mut(s![.., *start..*start + gi.ncols()]);
                    part += &gi;
                }
                Op::Sum(x) => acc(*x, Array2::from_elem(val(*x).dim(), gi[[0, 0]])),
                Op::SumRows(x) => {
                    let n = val(*x).nrows();
                    acc(*x, gi.broadcast((n, gi.ncols())).expect("row").to_owned());
                }
                Op::SumCols(x) => {
                    let d = val(*x).ncols();
                    acc(*x, gi.broadcast((gi.nrows(), d)).expect("col").to_owned());
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    acc(
                        *x,
                        ndarray::Zip::from(&gi)
                            .and(y)
                            .map_collect(|&g, &y| g * y * (1.0 - y)),
                    );
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    acc(
                        *x,
                        ndarray::Zip::from(&gi)
                            .and(y)
                            .map_collect(|&g, &y| g * (1.0 - y * y)),
                    );
                }
                Op::Elu(x) => {
                    let y = &node.value;
                    let d = ndarray::Zip::from(&gi)
                        .and(val(*x))
                        .and(y)
                        .map_collect(|&g, &xv, &yv| if xv > 0.0 { g } else { g * (yv + 1.0) });
                    acc(*x, d);
                }
                Op::Abs(x) => {
                    let d = ndarray::Zip::from(&gi).and(val(*x)).map_collect(|&g, &xv| {
                        if xv > 0.0 {
                            g
                        } else if xv < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    acc(*x, d);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let gy = &gi * y;
                    let dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*x, gy - y * &dots);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    acc(*bias, gi.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*gain, (&gi * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let gh = &gi * val(*gain);
                    let d = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for i in 0..xhat.nrows() {
                        let ghr = gh.row(i);
                        let xr = xhat.row(i);
                        let s1 = ghr.sum();
                        let s2 = ghr.dot(&xr);
                        for k in 0..xhat.ncols() {
                            dx[[i, k]] = inv_std[i] / d * (d * ghr[k] - s1 - xr[k] * s2);
                        }
                    }
                    acc(*x, dx);
                }
                Op::Glu(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let ga = ndarray::Zip::from(&gi)
                        .and(bv)
                        .map_collect(|&g, &z| g * sigmoid(z));
                    let gb = ndarray::Zip::from(&gi)
                        .and(av)
                        .and(bv)
                        .map_collect(|&g, &x, &z| {
                            let s = sigmoid(z);
                            g * x * s * (1.0 - s)
                        });
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Dropout(x, mask) => acc(*x, &gi * mask),
                Op::Fused(x, saved) => acc(*x, saved * gi[[0, 0]]),
            }
        }
        Ok(Grads(g))
    }
}

/// Gradients from one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads(Vec<Option<Array2<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` if the loss does not depend on it.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
        a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn forward_values() {
        let mut t = Tape::new();
        let z = t.leaf(array![[0.0, 0.0]]);
        let s = t.softmax_rows(z);
        assert_eq!(t.value(s), &array![[0.5, 0.5]]);

        let a = t.leaf(array![[3.0]]);
        let b = t.leaf(array![[-50.0]]);
        let g = t.glu(a, b).unwrap();
        assert!(t.scalar(g).abs() < 1e-20);

        let x = t.leaf(array![[1.0, 2.0, 3.0]]);
        let one = t.leaf(Array2::ones((1, 3)));
        let zero = t.leaf(Array2::zeros((1, 3)));
        let y = t.layer_norm(x, one, zero).unwrap();
        assert!(close(t.value(y), &array![[-1.2247, 0.0, 1.2247]], 1e-4));
    }

    #[test]
    fn simple_adjoints() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, -2.0], [3.0, 4.0]]);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Array2::<f64>::ones((2, 2)));

        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let bm = array![[1.0, -1.0, 2.0], [0.5, 0.0, 3.0]];
        let b = t.leaf(bm.clone());
        let c = t.matmul(a, b).unwrap();
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap(), &Array2::<f64>::ones((3, 3)).dot(&bm.t()));
    }

    #[test]
    fn unused_and_non_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0]]);
        let unused = t.leaf(array![[5.0]]);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(unused, (1, 1)), array![[0.0]]);
        assert_eq!(t.backward(x).unwrap_err(), AdError::NonScalarLoss((1, 2)));
    }

    #[test]
    fn backward_twice_is_idempotent() {
        let mut t = Tape::new();
        let x = t.leaf(array![[0.3, -0.7, 1.1]]);
        let y = t.tanh(x);
        let z = t.mul(y, x).unwrap();
        let s = t.sum(z);
        let g1 = t.backward(s).unwrap().wrt(x, (1, 3));
        let g2 = t.backward(s).unwrap().wrt(x, (1, 3));
        assert_eq!(g1, g2);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Array2::zeros((2, 3)));
        let b = t.leaf(Array2::zeros((2, 3)));
        let e = t.matmul(a, b).unwrap_err();
        assert!(e.to_string().contains("(2, 3) vs (2, 3)"), "{e}");
    }

    #[test]
    fn dropout_modes() {
        let mut t = Tape::new();
        let x = t.leaf(Array2::ones((4, 4)));
        assert_eq!(t.dropout(x, 0.5).unwrap(), x);

        let mut t = Tape::training(ChaCha8Rng::seed_from_u64(0));
        let x = t.leaf(Array2::ones((100, 100)));
        let y = t.dropout(x, 0.2).unwrap();
        let v = t.value(y);
        assert!(v.iter().all(|&z| z == 0.0 || (z - 1.25).abs() < 1e-15));
        assert!((v.mean().unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn median_loss_values() {
        let mut t = Tape::new();
        let p = t.leaf(array![[1.0, 3.0], [0.0, 2.0]]);
        let q = t.leaf(array![[-1.0, 5.0], [2.0, 0.0]]);
        let l = t.median_loss(p, q).unwrap();
        assert_eq!(t.scalar(l), 1.0);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap(), &array![[0.125, -0.125], [-0.125, 0.125]]);
        let same = t.median_loss(p, p).unwrap();
        assert_eq!(t.scalar(same), 0.0);
    }
}
