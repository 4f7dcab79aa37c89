//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node whose inputs are earlier nodes, so insertion order is
//! a topological order and `backward` simply walks the tape from the root down.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        keep: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    RowSums(Var),
    Sum(Var),
    RepeatRows(Var),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<T>,
        count: usize,
    },
    Bce {
        logits: Var,
        targets: Vec<T>,
        mask: Vec<bool>,
        count: usize,
    },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single forward computation recorded for differentiation.
///
/// Dropout is active only on graphs built with [`Graph::training`].
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    track_params: bool,
    rng: Option<ChaCha8Rng>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// Differentiable graph without dropout.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            track_params: true,
            rng: None,
        }
    }

    /// Differentiable graph with dropout drawn from a seeded generator.
    pub fn training(seed: u64) -> Self {
        Graph {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new()
        }
    }

    /// Forward-only graph: parameters are treated as constants.
    pub fn inference() -> Self {
        Graph {
            track_params: false,
            ..Self::new()
        }
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Brings a parameter onto the tape. Repeated calls return the same node, so
    /// every use fans out from one leaf and gradients accumulate there.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, self.track_params);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(TensorError::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(TensorError::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let out = kernels::transpose(self.value(a).data(), r, c);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(a), rg))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a length-`cols` bias to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.dims(x);
        if self.value(bias).numel() != c {
            return Err(TensorError::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Row-wise softmax. `mask` marks valid positions and is either one flag per
    /// column (shared by all rows) or one flag per element. Masked entries are
    /// exactly zero in the output.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (p, q) = self.dims(x);
        if let Some(m) = mask {
            if m.len() != q && m.len() != p * q {
                return Err(TensorError::shape("softmax_rows", self.shape(x), &[m.len()]));
            }
        }
        let valid = |r: usize, c: usize| match mask {
            None => true,
            Some(m) if m.len() == q => m[c],
            Some(m) => m[r * q + c],
        };
        let input = self.value(x);
        let mut out = vec![T::zero(); p * q];
        for r in 0..p {
            let row = input.row(r);
            let mut max = T::neg_infinity();
            for (c, &v) in row.iter().enumerate() {
                if valid(r, c) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                return Err(TensorError::DegenerateMask { op: "softmax_rows", row: r });
            }
            let mut total = T::zero();
            for (c, &v) in row.iter().enumerate() {
                if valid(r, c) {
                    let e = (v - max).exp();
                    out[r * q + c] = e;
                    total += e;
                }
            }
            for o in &mut out[r * q..(r + 1) * q] {
                *o /= total;
            }
        }
        let out = Tensor::new(input.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Normalizes each row to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (p, d) = self.dims(x);
        for v in [gain, bias] {
            if self.value(v).numel() != d {
                return Err(TensorError::shape("layer_norm", self.shape(x), self.shape(v)));
            }
        }
        let n = T::from_usize(d).unwrap();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let input = self.value(x);
        let mut xhat = vec![T::zero(); p * d];
        let mut inv_std = vec![T::zero(); p];
        let mut out = vec![T::zero(); p * d];
        for r in 0..p {
            let row = input.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let out = Tensor::new(input.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity unless the graph is in training mode and `p > 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Value {
                op: "dropout",
                msg: format!("probability {p} outside [0, 1)"),
            });
        }
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let scale = T::lit(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.numel();
        let keep: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { scale })
            .collect();
        let mut out = self.value(x).clone();
        for (o, &k) in out.data_mut().iter_mut().zip(&keep) {
            *o *= k;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, keep }, rg))
    }

    /// Selects rows of `table` by index.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = self.dims(table);
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: id,
                    bound: rows,
                });
            }
            out.extend_from_slice(src.row(id));
        }
        let out = Tensor::matrix(ids.len(), d, out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Usage("concat_cols: no inputs".into()));
        };
        let (p, _) = self.dims(first);
        let mut total = 0;
        for &v in parts {
            let (r, c) = self.dims(v);
            if r != p {
                return Err(TensorError::shape("concat_cols", self.shape(first), self.shape(v)));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(p * total);
        for r in 0..p {
            for &v in parts {
                out.extend_from_slice(self.value(v).row(r));
            }
        }
        let out = Tensor::matrix(p, total, out)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Usage("concat_rows: no inputs".into()));
        };
        let (_, q) = self.dims(first);
        let mut rows = 0;
        let mut out = Vec::new();
        for &v in parts {
            let (r, c) = self.dims(v);
            if c != q {
                return Err(TensorError::shape("concat_rows", self.shape(first), self.shape(v)));
            }
            rows += r;
            out.extend_from_slice(self.value(v).data());
        }
        let out = Tensor::matrix(rows, q, out)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (p, q) = self.dims(x);
        if start + len > p {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                bound: p,
            });
        }
        let out = self.value(x).data()[start * q..(start + len) * q].to_vec();
        let out = Tensor::matrix(len, q, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (p, q) = self.dims(x);
        if start + len > q {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                bound: q,
            });
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(p * len);
        for r in 0..p {
            out.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let out = Tensor::matrix(p, len, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    /// `p×q → p×1`
    pub fn row_sums(&mut self, x: Var) -> Result<Var> {
        let (p, _) = self.dims(x);
        let src = self.value(x);
        let out: Vec<T> = (0..p).map(|r| src.row(r).iter().copied().sum()).collect();
        let out = Tensor::matrix(p, 1, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::RowSums(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).numel().max(1)).unwrap();
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Sum of elementwise products, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    /// Stacks a single row `times` times.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (p, q) = self.dims(x);
        if p != 1 {
            return Err(TensorError::shape("repeat_rows", self.shape(x), &[1, q]));
        }
        let row = self.value(x).data().to_vec();
        let out: Vec<T> = (0..times).flat_map(|_| row.iter().copied()).collect();
        let out = Tensor::matrix(times, q, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::RepeatRows(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Mean negative log-softmax probability of each row's target class over
    /// unmasked rows. Masked rows may carry any target value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: Option<&[bool]>) -> Result<Var> {
        let (p, k) = self.dims(logits);
        if targets.len() != p {
            return Err(TensorError::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        let mask: Vec<bool> = match mask {
            Some(m) if m.len() != p => {
                return Err(TensorError::shape("cross_entropy", self.shape(logits), &[m.len()]));
            }
            Some(m) => m.to_vec(),
            None => vec![true; p],
        };
        let src = self.value(logits);
        let mut probs = vec![T::zero(); p * k];
        let mut total = T::zero();
        let mut count = 0;
        for r in 0..p {
            if !mask[r] {
                continue;
            }
            let t = targets[r];
            if t >= k {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    bound: k,
                });
            }
            let row = src.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            total += lse - row[t];
            for c in 0..k {
                probs[r * k + c] = (row[c] - lse).exp();
            }
            count += 1;
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::from_usize(count).unwrap()
        };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask,
                probs,
                count,
            },
            rg,
        ))
    }

    /// Mean binary cross entropy of sigmoid(logits) against 0/1 targets over unmasked elements.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], mask: Option<&[bool]>) -> Result<Var> {
        let n = self.value(logits).numel();
        if targets.len() != n {
            return Err(TensorError::shape("bce_with_logits", self.shape(logits), &[targets.len()]));
        }
        if let Some(bad) = targets.iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(TensorError::Value {
                op: "bce_with_logits",
                msg: format!("target {bad} is not 0 or 1"),
            });
        }
        let mask: Vec<bool> = match mask {
            Some(m) if m.len() != n => {
                return Err(TensorError::shape("bce_with_logits", self.shape(logits), &[m.len()]));
            }
            Some(m) => m.to_vec(),
            None => vec![true; n],
        };
        let z = self.value(logits).data();
        let mut total = T::zero();
        let mut count = 0;
        for i in (0..n).filter(|&i| mask[i]) {
            total += kernels::softplus(z[i]) - z[i] * targets[i];
            count += 1;
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::from_usize(count).unwrap()
        };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
                mask,
                count,
            },
            rg,
        ))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            let t = self.value(v);
            if !t.is_scalar() {
                return Err(TensorError::Usage(format!(
                    "weighted_sum: term has shape {:?}, expected a scalar",
                    t.shape()
                )));
            }
            total += w * t.item();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Reverse pass from a scalar root. Consumes the graph.
    pub fn backward(self, root: Var) -> Result<Gradients<T>> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(TensorError::Usage(format!(
                "backward: root has shape {:?}, expected a scalar",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::ones(root_value.shape()));
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.dims(a);
                let n = self.dims(b).1;
                if self.requires_grad(a) {
                    let da = kernels::matmul_nt(gd, self.value(b).data(), m, n, k);
                    self.accumulate(grads, a, Tensor::new(self.shape(a).to_vec(), da)?);
                }
                if self.requires_grad(b) {
                    let db = kernels::matmul_tn(self.value(a).data(), gd, m, k, n);
                    self.accumulate(grads, b, Tensor::new(self.shape(b).to_vec(), db)?);
                }
            }
            &Op::MatMulNT(a, b) => {
                let (m, k) = self.dims(a);
                let n = self.dims(b).0;
                if self.requires_grad(a) {
                    let da = kernels::matmul_nn(gd, self.value(b).data(), m, n, k);
                    self.accumulate(grads, a, Tensor::new(self.shape(a).to_vec(), da)?);
                }
                if self.requires_grad(b) {
                    let db = kernels::matmul_tn(gd, self.value(a).data(), m, n, k);
                    self.accumulate(grads, b, Tensor::new(self.shape(b).to_vec(), db)?);
                }
            }
            &Op::Transpose(a) => {
                let (r, c) = self.dims(a);
                let da = kernels::transpose(gd, c, r);
                self.accumulate(grads, a, Tensor::new(self.shape(a).to_vec(), da)?);
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::AddRow(x, bias) => {
                self.accumulate(grads, x, g.clone());
                if self.requires_grad(bias) {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for row in gd.chunks(c) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, bias, Tensor::new(self.shape(bias).to_vec(), db)?);
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if self.requires_grad(a) {
                    let da = gd.iter().zip(vb).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, a, Tensor::new(self.shape(a).to_vec(), da)?);
                }
                if self.requires_grad(b) {
                    let db = gd.iter().zip(va).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, b, Tensor::new(self.shape(b).to_vec(), db)?);
                }
            }
            &Op::Scale(x, f) => {
                let dx = gd.iter().map(|&v| v * f).collect();
                self.accumulate(grads, x, Tensor::new(self.shape(x).to_vec(), dx)?);
            }
            &Op::Gelu(x) => {
                let dx = gd
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&up, &v)| up * gelu_grad(v))
                    .collect();
                self.accumulate(grads, x, Tensor::new(self.shape(x).to_vec(), dx)?);
            }
            &Op::Softmax(x) => {
                let y = &node.value;
                let q = y.cols();
                let mut dx = vec![T::zero(); y.numel()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gd[r * q..(r + 1) * q];
                    let inner: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for c in 0..q {
                        dx[r * q + c] = yr[c] * (gr[c] - inner);
                    }
                }
                self.accumulate(grads, x, Tensor::new(self.shape(x).to_vec(), dx)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let p = node.value.rows();
                let n = T::from_usize(d).unwrap();
                let gv = self.value(*gain).data();
                let mut dgain = vec![T::zero(); d];
                let mut dbias = vec![T::zero(); d];
                let mut dx = vec![T::zero(); p * d];
                for r in 0..p {
                    let gr = &gd[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for c in 0..d {
                        dgain[c] += gr[c] * hr[c];
                        dbias[c] += gr[c];
                        let dh = gr[c] * gv[c];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[c];
                    }
                    for c in 0..d {
                        let dh = gr[c] * gv[c];
                        dx[r * d + c] = inv_std[r] * (dh - sum_dh / n - hr[c] * sum_dh_h / n);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
                self.accumulate(grads, *gain, Tensor::new(self.shape(*gain).to_vec(), dgain)?);
                self.accumulate(grads, *bias, Tensor::new(self.shape(*bias).to_vec(), dbias)?);
            }
            Op::Dropout { x, keep } => {
                let dx = gd.iter().zip(keep).map(|(&a, &k)| a * k).collect();
                self.accumulate(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::Gather { table, ids } => {
                if self.requires_grad(*table) {
                    let d = node.value.cols();
                    let mut dt = Tensor::zeros(self.shape(*table));
                    let data = dt.data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            data[id * d + c] += gd[r * d + c];
                        }
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let p = node.value.rows();
                let mut offset = 0;
                for &v in parts {
                    let c = self.dims(v).1;
                    if self.requires_grad(v) {
                        let mut dv = Vec::with_capacity(p * c);
                        for r in 0..p {
                            dv.extend_from_slice(&gd[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, v, Tensor::new(self.shape(v).to_vec(), dv)?);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &v in parts {
                    let n = self.value(v).numel();
                    if self.requires_grad(v) {
                        let dv = gd[offset..offset + n].to_vec();
                        self.accumulate(grads, v, Tensor::new(self.shape(v).to_vec(), dv)?);
                    }
                    offset += n;
                }
            }
            &Op::SliceRows { x, start } => {
                let q = node.value.cols();
                let mut dx = Tensor::zeros(self.shape(x));
                dx.data_mut()[start * q..start * q + gd.len()].copy_from_slice(gd);
                self.accumulate(grads, x, dx);
            }
            &Op::SliceCols { x, start } => {
                let (p, q) = self.dims(x);
                let len = node.value.cols();
                let mut dx = Tensor::zeros(self.shape(x));
                let data = dx.data_mut();
                for r in 0..p {
                    data[r * q + start..r * q + start + len].copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, x, dx);
            }
            &Op::RowSums(x) => {
                let (p, q) = self.dims(x);
                let dx = (0..p).flat_map(|r| std::iter::repeat_n(gd[r], q)).collect();
                self.accumulate(grads, x, Tensor::new(self.shape(x).to_vec(), dx)?);
            }
            &Op::Sum(x) => {
                let dx = Tensor::full(self.shape(x), gd[0]);
                self.accumulate(grads, x, dx);
            }
            &Op::RepeatRows(x) => {
                let q = node.value.cols();
                let mut dx = vec![T::zero(); q];
                for row in gd.chunks(q) {
                    for (d, &v) in dx.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                self.accumulate(grads, x, Tensor::new(self.shape(x).to_vec(), dx)?);
            }
            &Op::Reshape(x) => {
                self.accumulate(grads, x, g.clone().reshaped(self.shape(x).to_vec())?);
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                if *count > 0 {
                    let k = self.dims(*logits).1;
                    let scale = gd[0] / T::from_usize(*count).unwrap();
                    let mut dx = vec![T::zero(); probs.len()];
                    for (r, &valid) in mask.iter().enumerate() {
                        if !valid {
                            continue;
                        }
                        for c in 0..k {
                            let onehot = if c == targets[r] { T::one() } else { T::zero() };
                            dx[r * k + c] = (probs[r * k + c] - onehot) * scale;
                        }
                    }
                    self.accumulate(grads, *logits, Tensor::new(self.shape(*logits).to_vec(), dx)?);
                }
            }
            Op::Bce {
                logits,
                targets,
                mask,
                count,
            } => {
                if *count > 0 {
                    let scale = gd[0] / T::from_usize(*count).unwrap();
                    let z = self.value(*logits).data();
                    let dx = (0..z.len())
                        .map(|i| {
                            if mask[i] {
                                (kernels::sigmoid(z[i]) - targets[i]) * scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    self.accumulate(grads, *logits, Tensor::new(self.shape(*logits).to_vec(), dx)?);
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    self.accumulate(grads, v, Tensor::full(self.shape(v), gd[0] * w));
                }
            }
        }
        Ok(())
    }
}

fn gelu<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + T::lit(0.044715) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let t = (c * (x + a * x * x * x)).tanh();
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

/// Result of a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to `v`; `None` if no path reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds each parameter's gradient into the store. Parameters that took part
    /// in the forward pass but received no gradient get an explicit zero.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for &(id, v) in &self.params {
            match self.wrt(v) {
                Some(g) => store.accumulate_grad(id, g)?,
                None => {
                    let zeros = Tensor::zeros(store.value(id).shape());
                    store.accumulate_grad(id, &zeros)?;
                }
            }
        }
        Ok(())
    }
}
