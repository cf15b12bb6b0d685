use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{axis_split, mm_acc, mm_nt_acc, mm_tn_acc, Tensor};
use super::TensorError;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, rstd: Vec<S> },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    MeanAxis { x: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    Dropout { x: Var, mask: Vec<S> },
    Reshape(Var),
    Mse { pred: Var, target: Vec<S> },
    Bce { pred: Var, target: Vec<S>, eps: S },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// vector is already a topological order and `backward` walks it in reverse.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<S>>>,
    rng: Option<ChaCha8Rng>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), grads: Vec::new(), rng: None }
    }

    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Self { rng: Some(rng), ..Self::new() }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool, name: &str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Result<Var, TensorError> {
        self.push(t, Op::Leaf, false, "constant")
    }

    pub fn variable(&mut self, t: Tensor<S>) -> Result<Var, TensorError> {
        self.push(t, Op::Leaf, true, "variable")
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    /// Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Result<Var, TensorError> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let entry = store.entry(id);
        let v = self.push(entry.value.clone(), Op::Leaf, !entry.frozen, &entry.name)?;
        self.params.insert(id, v);
        Ok(v)
    }

    fn same_or_scalar(&self, a: Var, b: Var, op: &str) -> Result<Vec<usize>, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || self.value(b).numel() == 1 {
            Ok(sa.to_vec())
        } else if self.value(a).numel() == 1 {
            Ok(sb.to_vec())
        } else {
            Err(TensorError::Shape(format!("{op}: {sa:?} vs {sb:?}")))
        }
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var, TensorError> {
        let shape = self.same_or_scalar(a, b, name)?;
        let (da, db) = (self.data(a), self.data(b));
        let n: usize = shape.iter().product();
        let pick = |d: &[S], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let out: Vec<S> = (0..n).map(|i| f(pick(da, i), pick(db, i))).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&shape, out)?, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var, TensorError> {
        let out: Vec<S> = self.data(x).iter().map(|&v| v * c).collect();
        let t = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg, "scale")
    }

    /// `x[.., n] + b[n]`, the bias of a dense layer.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let n = *self.shape(x).last().expect("rank >= 1");
        if self.shape(b) != [n] {
            return Err(TensorError::Shape(format!("add_bias: {:?} + {:?}", self.shape(x), self.shape(b))));
        }
        let bd = self.data(b);
        let out: Vec<S> = self.data(x).iter().enumerate().map(|(i, &v)| v + bd[i % n]).collect();
        let t = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(x) || self.rg(b);
        self.push(t, Op::AddBias(x, b), rg, "add_bias")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        mm_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::Shape(format!("transpose: rank {}", s.len())));
        }
        let (m, n) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(&[n, m], out)?, Op::Transpose(x), rg, "transpose")
    }

    fn unary(&mut self, x: Var, name: &str, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var, TensorError> {
        let out: Vec<S> = self.data(x).iter().map(|&v| f(v)).collect();
        let t = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(x);
        self.push(t, op, rg, name)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, "relu", |v| v.max(S::zero()), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, "tanh", |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, "abs", |v| v.abs(), Op::Abs(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis { axis, rank: shape.len() });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let d = self.data(x);
        let mut out = vec![S::zero(); d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| o * len * inner + a * inner + i;
                let mx = (0..len).map(|a| d[at(a)]).fold(S::neg_infinity(), S::max);
                let mut z = S::zero();
                for a in 0..len {
                    let e = (d[at(a)] - mx).exp();
                    out[at(a)] = e;
                    z += e;
                }
                for a in 0..len {
                    out[at(a)] /= z;
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(&shape, out)?, Op::Softmax { x, axis }, rg, "softmax")
    }

    /// Normalizes over the last axis, then applies `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("rank >= 1");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(TensorError::Shape(format!("layer_norm: x {shape:?}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta))));
        }
        let rows = self.value(x).numel() / d;
        let xd = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let dn = S::lit(d as f64);
        let mut xhat = vec![S::zero(); xd.len()];
        let mut rstd = vec![S::zero(); rows];
        let mut out = vec![S::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let rs = S::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(Tensor::new(&shape, out)?, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg, "layer_norm")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = self.shape(*parts.first().ok_or_else(|| TensorError::Shape("concat of nothing".into()))?).to_vec();
        if axis >= first.len() {
            return Err(TensorError::Axis { axis, rank: first.len() });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape(format!("concat: {first:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let d = self.data(p);
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(&shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, rg, "concat")
    }

    /// Contiguous sub-range `start..start + len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis { axis, rank: shape.len() });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::Shape(format!("narrow {start}+{len} of {shape:?} axis {axis}")));
        }
        let (outer, alen, inner) = axis_split(&shape, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let rg = self.rg(x);
        self.push(Tensor::new(&oshape, out)?, Op::Narrow { x, axis, start }, rg, "narrow")
    }

    /// Mean over `axis`, removing it. Rank-1 input yields a single element.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis { axis, rank: shape.len() });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let d = self.data(x);
        let ln = S::lit(len as f64);
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += d[o * len * inner + a * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= ln);
        let mut oshape: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &s)| s).collect();
        if oshape.is_empty() {
            oshape.push(1);
        }
        let rg = self.rg(x);
        self.push(Tensor::new(&oshape, out)?, Op::MeanAxis { x, axis }, rg, "mean_axis")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.data(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = S::lit(self.value(x).numel() as f64);
        let s = self.data(x).iter().copied().sum::<S>() / n;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg, "mean")
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)`. Identity in
    /// evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: S) -> Result<Var, TensorError> {
        if !(p >= S::zero() && p < S::one()) {
            return Err(TensorError::Contract(format!("dropout rate {p} outside [0, 1)")));
        }
        let Some(rng) = self.rng.as_mut() else { return Ok(x) };
        if p == S::zero() {
            return Ok(x);
        }
        let keep = S::one() / (S::one() - p);
        let pf = p.as_f64();
        let n = self.nodes[x.0].value.numel();
        let mask: Vec<S> = (0..n).map(|_| if rng.random::<f64>() < pf { S::zero() } else { keep }).collect();
        let out: Vec<S> = self.data(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(x);
        self.push(t, Op::Dropout { x, mask }, rg, "dropout")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        self.push(t, Op::Reshape(x), rg, "reshape")
    }

    /// Mean squared error against a constant target of equal element count.
    pub fn mse(&mut self, pred: Var, target: &[S]) -> Result<Var, TensorError> {
        let p = self.data(pred);
        if p.len() != target.len() {
            return Err(TensorError::Shape(format!("mse: {} vs {}", p.len(), target.len())));
        }
        let n = S::lit(p.len() as f64);
        let s = p.iter().zip(target).map(|(&a, &b)| (a - b) * (a - b)).sum::<S>() / n;
        let rg = self.rg(pred);
        self.push(Tensor::scalar(s), Op::Mse { pred, target: target.to_vec() }, rg, "mse")
    }

    /// Mean binary cross-entropy; predictions are clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, pred: Var, target: &[S], eps: S) -> Result<Var, TensorError> {
        let p = self.data(pred);
        if p.len() != target.len() {
            return Err(TensorError::Shape(format!("bce: {} vs {}", p.len(), target.len())));
        }
        let n = S::lit(p.len() as f64);
        let hi = S::one() - eps;
        let s = p
            .iter()
            .zip(target)
            .map(|(&q, &y)| {
                let q = q.max(eps).min(hi);
                -(y * q.ln() + (S::one() - y) * (S::one() - q).ln())
            })
            .sum::<S>()
            / n;
        let rg = self.rg(pred);
        self.push(Tensor::scalar(s), Op::Bce { pred, target: target.to_vec(), eps }, rg, "bce")
    }

    // ---- composite helpers ----

    /// `x · w + b` for `x[n×i]`, `w[i×o]`, `b[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Views a rank-1 tensor as a single-row matrix.
    pub fn as_row(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).numel();
        self.reshape(x, &[1, n])
    }

    // ---- reverse pass ----

    /// Accumulates `d loss / d v` into every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to `v`, `None` if
    /// `v` does not influence it.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v), g.clone()).expect("grad shape matches value"))
    }

    /// Adds the gradients of every trainable parameter leaf into `out`.
    pub fn accumulate_param_grads(&self, out: &mut Grads<S>) {
        for (&id, &v) in &self.params {
            if let Some(Some(g)) = self.grads.get(v.0) {
                out.add(id, g);
            }
        }
    }

    fn backprop_node(&mut self, i: usize, g: &[S]) {
        // Grads of inputs live at indices < i, so splitting keeps borrows disjoint.
        let (nodes, grads) = (&self.nodes, &mut self.grads);
        let node = &nodes[i];
        let val = |v: Var| nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [S])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![S::zero(); nodes[v.0].value.numel()]);
            f(buf);
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -S::one() } else { S::one() };
                acc(*a, &mut |ga| broadcast_back(ga, g, |_| S::one()));
                acc(*b, &mut |gb| broadcast_back(gb, g, |_| sign));
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(*a), val(*b));
                let pick = |d: &[S], k: usize| if d.len() == 1 { d[0] } else { d[k] };
                acc(*a, &mut |ga| broadcast_back(ga, g, |k| pick(db, k)));
                acc(*b, &mut |gb| broadcast_back(gb, g, |k| pick(da, k)));
            }
            Op::Scale(x, c) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &gv)| *o += gv * *c)),
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &gv)| *o += gv));
                acc(*b, &mut |gb| {
                    let n = gb.len();
                    g.iter().enumerate().for_each(|(k, &gv)| gb[k % n] += gv);
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (val(*a), val(*b));
                acc(*a, &mut |ga| mm_nt_acc(g, db, ga, m, k, n));
                acc(*b, &mut |gb| mm_tn_acc(da, g, gb, m, k, n));
            }
            Op::Transpose(x) => {
                let s = nodes[x.0].value.shape();
                let (m, n) = (s[0], s[1]);
                acc(*x, &mut |gx| {
                    for r in 0..m {
                        for c in 0..n {
                            gx[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Relu(x) => acc(*x, &mut |gx| {
                for k in 0..gx.len() {
                    if y[k] > S::zero() {
                        gx[k] += g[k];
                    }
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |gx| {
                for k in 0..gx.len() {
                    gx[k] += g[k] * (S::one() - y[k] * y[k]);
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for k in 0..gx.len() {
                    gx[k] += g[k] * y[k] * (S::one() - y[k]);
                }
            }),
            Op::Abs(x) => {
                let dx = val(*x);
                acc(*x, &mut |gx| {
                    for k in 0..gx.len() {
                        // subgradient 0 at the kink
                        if dx[k] > S::zero() {
                            gx[k] += g[k];
                        } else if dx[k] < S::zero() {
                            gx[k] -= g[k];
                        }
                    }
                })
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| o * len * inner + a * inner + i;
                            let dot: S = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                            for a in 0..len {
                                gx[at(a)] += y[at(a)] * (g[at(a)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = val(*gamma).len();
                let rows = rstd.len();
                let gam = val(*gamma);
                acc(*gamma, &mut |gg| {
                    for k in 0..g.len() {
                        gg[k % d] += g[k] * xhat[k];
                    }
                });
                acc(*beta, &mut |gb| {
                    for k in 0..g.len() {
                        gb[k % d] += g[k];
                    }
                });
                let dn = S::lit(d as f64);
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        let sl = r * d..(r + 1) * d;
                        let (gr, hr) = (&g[sl.clone()], &xhat[sl]);
                        let mut m1 = S::zero();
                        let mut m2 = S::zero();
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            m1 += dh;
                            m2 += dh * hr[j];
                        }
                        m1 /= dn;
                        m2 /= dn;
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            gx[r * d + j] += rstd[r] * (dh - m1 - hr[j] * m2);
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.shape()[*axis];
                    acc(p, &mut |gp| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            let dst = o * len * inner;
                            for k in 0..len * inner {
                                gp[dst + k] += g[src + k];
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, alen, inner) = axis_split(nodes[x.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let dst = o * alen * inner + start * inner;
                        let src = o * len * inner;
                        for k in 0..len * inner {
                            gx[dst + k] += g[src + k];
                        }
                    }
                });
            }
            Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = axis_split(nodes[x.0].value.shape(), *axis);
                let ln = S::lit(len as f64);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for a in 0..len {
                            for i in 0..inner {
                                gx[o * len * inner + a * inner + i] += g[o * inner + i] / ln;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let n = S::lit(nodes[x.0].value.numel() as f64);
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0] / n))
            }
            Op::Dropout { x, mask } => acc(*x, &mut |gx| {
                for k in 0..gx.len() {
                    gx[k] += g[k] * mask[k];
                }
            }),
            Op::Reshape(x) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &gv)| *o += gv)),
            Op::Mse { pred, target } => {
                let p = val(*pred);
                let c = S::lit(2.0) * g[0] / S::lit(p.len() as f64);
                acc(*pred, &mut |gp| {
                    for k in 0..gp.len() {
                        gp[k] += c * (p[k] - target[k]);
                    }
                });
            }
            Op::Bce { pred, target, eps } => {
                let p = val(*pred);
                let c = g[0] / S::lit(p.len() as f64);
                let hi = S::one() - *eps;
                acc(*pred, &mut |gp| {
                    for k in 0..gp.len() {
                        let q = p[k];
                        if q < *eps || q > hi {
                            continue;
                        }
                        let yk = target[k];
                        gp[k] += c * ((S::one() - yk) / (S::one() - q) - yk / q);
                    }
                });
            }
        }
    }
}

/// Routes an output gradient back to an operand that was either full-shape
/// or a broadcast scalar. `coef(k)` is the local derivative at element `k`.
fn broadcast_back<S: Scalar>(gin: &mut [S], g: &[S], coef: impl Fn(usize) -> S) {
    if gin.len() == g.len() {
        for (k, (d, &v)) in gin.iter_mut().zip(g).enumerate() {
            *d += v * coef(k);
        }
    } else {
        let mut s = S::zero();
        for (k, &v) in g.iter().enumerate() {
            s += v * coef(k);
        }
        gin[0] += s;
    }
}

pub fn sigmoid<S: Scalar>(v: S) -> S {
    // split by sign so exp never overflows
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}
