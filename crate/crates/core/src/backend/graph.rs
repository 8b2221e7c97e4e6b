//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends one node to the tape; node indices are therefore a
//! topological order and the backward sweep is a single reverse scan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, split_axis};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation implemented outside the backend.
///
/// `backward` returns one gradient per input, shaped like that input.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    LogSumExp { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Dropout { x: Var, mask: Vec<T> },
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Pick { x: Var, idx: Vec<usize> },
    Reshape(Var),
    Sum(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable input.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.dims2("transpose")?;
        let d = av.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let t = Tensor::matrix(c, r, out)?;
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    /// Elementwise sum. `b` may also be a vector matching the last axis of
    /// `a`, in which case it is added to every row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
            let t = Tensor::new(av.shape().to_vec(), data)?;
            return Ok(self.push(t, Op::Add(a, b), &[a, b]));
        }
        let cols = *av.shape().last().unwrap_or(&0);
        if bv.rank() == 1 && bv.len() == cols && cols > 0 {
            let bd = bv.data();
            let data = av
                .data()
                .chunks(cols)
                .flat_map(|row| row.iter().zip(bd).map(|(&x, &y)| x + y))
                .collect();
            let t = Tensor::new(av.shape().to_vec(), data)?;
            return Ok(self.push(t, Op::AddRow(a, b), &[a, b]));
        }
        Err(shape_err("add", av, bv))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c), &[a])
    }

    fn check_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<()> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::Shape {
                op,
                lhs: xv.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "softmax")?;
        let xv = self.value(x);
        let (o, n, i) = split_axis(xv.shape(), axis);
        let mut out = vec![T::zero(); xv.len()];
        kernels::softmax_into(xv.data(), &mut out, o, n, i, false);
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Softmax { x, axis }, &[x]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "log_softmax")?;
        let xv = self.value(x);
        let (o, n, i) = split_axis(xv.shape(), axis);
        let mut out = vec![T::zero(); xv.len()];
        kernels::softmax_into(xv.data(), &mut out, o, n, i, true);
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(t, Op::LogSoftmax { x, axis }, &[x]))
    }

    /// Reduces `axis` away.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "logsumexp")?;
        let xv = self.value(x);
        let (o, n, i) = split_axis(xv.shape(), axis);
        let d = xv.data();
        let mut out = vec![T::zero(); o * i];
        let mut buf = vec![T::zero(); n];
        for oo in 0..o {
            for ii in 0..i {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = d[(oo * n + j) * i + ii];
                }
                out[oo * i + ii] = crate::scalar::log_sum_exp(&buf);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::LogSumExp { x, axis }, &[x]))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let n = *xv.shape().last().unwrap_or(&0);
        if n == 0 || gv.shape() != [n] || bv.shape() != [n] {
            return Err(shape_err("layer_norm", xv, gv));
        }
        let rows = xv.len() / n;
        let nt = T::of(n as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Rows of `table` selected by `ids`, shape `[ids.len(), dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, dim) = tv.dims2("embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape {
                op: "embedding",
                lhs: tv.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(tv.row(i));
        }
        let t = Tensor::matrix(ids.len(), dim, out)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| {
            Error::InvalidArgument("concat of zero tensors".into())
        })?);
        if axis >= first.rank() {
            return Err(Error::Shape {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let mut shape = first.shape().to_vec();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            let ok = pv.rank() == shape.len()
                && pv
                    .shape()
                    .iter()
                    .zip(&shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(shape_err("concat", first, pv));
            }
            total += pv.shape()[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let pv = self.value(p);
                let chunk = pv.shape()[axis] * inner;
                out.extend_from_slice(&pv.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || start > end || end > xv.shape()[axis] {
            return Err(Error::Shape {
                op: "slice",
                lhs: xv.shape().to_vec(),
                rhs: vec![axis, start, end],
            });
        }
        let (outer, n, inner) = split_axis(xv.shape(), axis);
        let w = end - start;
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&xv.data()[base..base + w * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = w;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Slice { x, axis, start }, &[x]))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. The mask is a
    /// pure function of `seed`. `p == 0` returns `x` unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::of(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { x, mask }, &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(kernels::sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(T::tanh);
        self.push(t, Op::Tanh(x), &[x])
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(kernels::gelu);
        self.push(t, Op::Gelu(x), &[x])
    }

    /// `out[r] = x[r, idx[r]]` for a rank-2 `x`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2("pick")?;
        if idx.len() != r || idx.iter().any(|&i| i >= c) {
            return Err(Error::Shape {
                op: "pick",
                lhs: xv.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let data = idx.iter().enumerate().map(|(row, &i)| xv.data()[row * c + i]).collect();
        let t = Tensor::vector(data);
        Ok(self.push(
            t,
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// `d loss / d param` for each of `params`. Parameters the loss does not
    /// depend on get zero gradients.
    pub fn grad(&self, loss: Var, params: &[Var]) -> Result<Vec<Tensor<T>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape {
                op: "grad",
                lhs: lv.shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(params
            .iter()
            .map(|p| match grads.get(p.0).and_then(|g| g.clone()) {
                Some(g) => g,
                None => Tensor::zeros(self.value(*p).shape()),
            })
            .collect())
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let out = &node.value;
        let mut acc = |v: Var, mut t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            // gradients through saturated units underflow; keep them out of
            // the subnormal range
            t.data_mut().iter_mut().for_each(|x| *x = x.flush());
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let like = |v: Var, data: Vec<T>| Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape");
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul_nt_acc(gd, bv.data(), &mut da, m, n, k);
                    acc(*a, like(*a, da));
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![T::zero(); k * n];
                    kernels::matmul_tn_acc(av.data(), gd, &mut db, m, k, n);
                    acc(*b, like(*b, db));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                let mut da = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] = gd[i * c + j];
                    }
                }
                acc(*a, like(*a, da));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                let cols = self.value(*b).len();
                let mut db = vec![T::zero(); cols];
                for row in gd.chunks(cols) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                acc(*b, like(*b, db));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = gd.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                let db = gd.iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                acc(*a, like(*a, da));
                acc(*b, like(*b, db));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * *c)),
            Op::Softmax { x, axis } => {
                let (o, n, i) = split_axis(out.shape(), *axis);
                let y = out.data();
                let mut dx = vec![T::zero(); y.len()];
                for oo in 0..o {
                    for ii in 0..i {
                        let at = |j: usize| (oo * n + j) * i + ii;
                        let dot: T = (0..n).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            dx[at(j)] = (y[at(j)] * (gd[at(j)] - dot)).flush();
                        }
                    }
                }
                acc(*x, like(*x, dx));
            }
            Op::LogSoftmax { x, axis } => {
                let (o, n, i) = split_axis(out.shape(), *axis);
                let y = out.data();
                let mut dx = vec![T::zero(); y.len()];
                for oo in 0..o {
                    for ii in 0..i {
                        let at = |j: usize| (oo * n + j) * i + ii;
                        let gs: T = (0..n).map(|j| gd[at(j)]).sum();
                        for j in 0..n {
                            dx[at(j)] = (gd[at(j)] - y[at(j)].exp() * gs).flush();
                        }
                    }
                }
                acc(*x, like(*x, dx));
            }
            Op::LogSumExp { x, axis } => {
                let xv = self.value(*x);
                let (o, n, i) = split_axis(xv.shape(), *axis);
                let xd = xv.data();
                let mut dx = vec![T::zero(); xd.len()];
                for oo in 0..o {
                    for ii in 0..i {
                        let lse = out.data()[oo * i + ii];
                        let gv = gd[oo * i + ii];
                        for j in 0..n {
                            let at = (oo * n + j) * i + ii;
                            dx[at] = (gv * (xd[at] - lse).exp()).flush();
                        }
                    }
                }
                acc(*x, like(*x, dx));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let n = gv.len();
                let nt = T::of(n as f64);
                let mut dx = vec![T::zero(); xhat.len()];
                let mut dg = vec![T::zero(); n];
                let mut db = vec![T::zero(); n];
                for (r, &is) in inv_std.iter().enumerate() {
                    let gr = &gd[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut sum_d = T::zero();
                    let mut sum_dh = T::zero();
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        sum_d += dh;
                        sum_dh += dh * hr[j];
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                    }
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        dx[r * n + j] = is / nt * (nt * dh - sum_d - hr[j] * sum_dh);
                    }
                }
                acc(*x, like(*x, dx));
                acc(*gain, like(*gain, dg));
                acc(*bias, like(*bias, db));
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let dim = tv.shape()[1];
                let mut dt = vec![T::zero(); tv.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..dim {
                        dt[id * dim + j] += gd[r * dim + j];
                    }
                }
                acc(*table, like(*table, dt));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[*axis];
                    let mut dp = Vec::with_capacity(outer * w * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        dp.extend_from_slice(&gd[base..base + w * inner]);
                    }
                    offset += w;
                    acc(p, like(p, dp));
                }
            }
            Op::Slice { x, axis, start } => {
                let xv = self.value(*x);
                let (outer, n, inner) = split_axis(xv.shape(), *axis);
                let w = out.shape()[*axis];
                let mut dx = vec![T::zero(); xv.len()];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    dx[base..base + w * inner].copy_from_slice(&gd[o * w * inner..(o + 1) * w * inner]);
                }
                acc(*x, like(*x, dx));
            }
            Op::Dropout { x, mask } => {
                let dx = gd.iter().zip(mask).map(|(&a, &m)| a * m).collect();
                acc(*x, like(*x, dx));
            }
            Op::Sigmoid(x) => {
                let dx = gd.iter().zip(out.data()).map(|(&a, &y)| a * y * (T::one() - y)).collect();
                acc(*x, like(*x, dx));
            }
            Op::Tanh(x) => {
                let dx = gd.iter().zip(out.data()).map(|(&a, &y)| a * (T::one() - y * y)).collect();
                acc(*x, like(*x, dx));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dx = gd.iter().zip(xv.data()).map(|(&a, &v)| a * kernels::gelu_grad(v)).collect();
                acc(*x, like(*x, dx));
            }
            Op::Pick { x, idx } => {
                let xv = self.value(*x);
                let c = xv.shape()[1];
                let mut dx = vec![T::zero(); xv.len()];
                for (r, &i) in idx.iter().enumerate() {
                    dx[r * c + i] = gd[r];
                }
                acc(*x, like(*x, dx));
            }
            Op::Reshape(x) => acc(*x, like(*x, gd.to_vec())),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                acc(*x, like(*x, vec![gd[0]; n]));
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(&ins, out, g);
                debug_assert_eq!(gs.len(), inputs.len(), "{}", op.name());
                for (v, gi) in inputs.iter().zip(gs) {
                    acc(*v, gi);
                }
            }
        }
    }
}
