//! Segment lattices and the semi-Markov dynamic programs over them.
//!
//! A lattice over `T` characters stores the log-probability of every
//! candidate segment `(start, length)` with `length <= k` and
//! `start + length <= T`. The forward recursion sums over all segmentations
//! in log space, Viterbi takes the max.

use crate::backend::{CustomOp, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};
use crate::segmentation::Segmentation;

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLattice<T> {
    len: usize,
    max_seg: usize,
    // row-major [start][length - 1]; out-of-bounds entries hold -inf
    logp: Vec<T>,
}

impl<T: Scalar> EdgeLattice<T> {
    /// Builds a lattice from `f(start, length)` over every in-bounds edge.
    pub fn from_fn(len: usize, max_seg: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        if max_seg == 0 {
            return Err(Error::InvalidArgument("maximum segment length must be >= 1".into()));
        }
        let mut logp = vec![T::neg_infinity(); len * max_seg];
        for i in 0..len {
            for l in 1..=max_seg.min(len - i) {
                logp[i * max_seg + l - 1] = f(i, l);
            }
        }
        Ok(EdgeLattice { len, max_seg, logp })
    }

    /// Wraps a `[len, max_seg]` row-major table; entries past the end of the
    /// sequence are ignored.
    pub fn from_table(len: usize, max_seg: usize, table: &[T]) -> Result<Self> {
        if table.len() != len * max_seg {
            return Err(Error::Shape {
                op: "lattice",
                lhs: vec![len, max_seg],
                rhs: vec![table.len()],
            });
        }
        Self::from_fn(len, max_seg, |i, l| table[i * max_seg + l - 1])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_seg(&self) -> usize {
        self.max_seg
    }

    /// Log-probability of the segment of `length` characters starting at
    /// 0-based `start`, or `None` when that edge does not exist.
    pub fn get(&self, start: usize, length: usize) -> Option<T> {
        if length == 0 || length > self.max_seg || start + length > self.len {
            return None;
        }
        Some(self.logp[start * self.max_seg + length - 1])
    }

    pub fn num_edges(&self) -> usize {
        (0..self.len).map(|i| self.max_seg.min(self.len - i)).sum()
    }

    /// Drops every edge longer than `max_seg`.
    pub fn truncate(&self, max_seg: usize) -> Result<Self> {
        let k = max_seg.min(self.max_seg);
        Self::from_fn(self.len, k, |i, l| self.logp[i * self.max_seg + l - 1])
    }

    /// Sum of the edge log-probabilities along `seg`.
    pub fn score(&self, seg: &Segmentation) -> Option<T> {
        if seg.len() != self.len {
            return None;
        }
        let mut total = T::zero();
        for (s, e) in seg.spans() {
            total += self.get(s, e - s)?;
        }
        Some(total)
    }

    /// `log α_t` for `t = 0..=T`: total log-probability of every
    /// segmentation of the first `t` characters.
    pub fn forward(&self) -> Vec<T> {
        let k = self.max_seg;
        let mut alpha = vec![T::neg_infinity(); self.len + 1];
        alpha[0] = T::zero();
        let mut terms = Vec::with_capacity(k);
        for t in 1..=self.len {
            terms.clear();
            for j in t.saturating_sub(k)..t {
                terms.push(alpha[j] + self.logp[j * k + (t - j) - 1]);
            }
            alpha[t] = log_sum_exp(&terms);
        }
        alpha
    }

    /// `log β_t`: total log-probability of every segmentation of the
    /// characters from `t` to the end.
    pub fn backward(&self) -> Vec<T> {
        let k = self.max_seg;
        let mut beta = vec![T::neg_infinity(); self.len + 1];
        beta[self.len] = T::zero();
        let mut terms = Vec::with_capacity(k);
        for t in (0..self.len).rev() {
            terms.clear();
            for l in 1..=k.min(self.len - t) {
                terms.push(self.logp[t * k + l - 1] + beta[t + l]);
            }
            beta[t] = log_sum_exp(&terms);
        }
        beta
    }

    /// Log of the marginal probability over all segmentations.
    pub fn marginal_logprob(&self) -> T {
        self.forward()[self.len]
    }

    /// Posterior probability of every edge, laid out like the table
    /// (zero for absent edges). These are the gradients of
    /// [`marginal_logprob`](Self::marginal_logprob) with respect to the edges.
    pub fn edge_posteriors(&self) -> Vec<T> {
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = alpha[self.len];
        let k = self.max_seg;
        let mut post = vec![T::zero(); self.logp.len()];
        if !log_z.is_finite() {
            return post;
        }
        for i in 0..self.len {
            for l in 1..=k.min(self.len - i) {
                let v = alpha[i] + self.logp[i * k + l - 1] + beta[i + l] - log_z;
                post[i * k + l - 1] = v.exp().flush();
            }
        }
        post
    }

    /// Highest-scoring segmentation and its score. Among equal scores the
    /// shortest final segment wins, applied recursively from the end.
    pub fn viterbi(&self) -> (Segmentation, T) {
        let k = self.max_seg;
        let mut best = vec![T::neg_infinity(); self.len + 1];
        let mut back = vec![0usize; self.len + 1];
        best[0] = T::zero();
        for t in 1..=self.len {
            for l in 1..=k.min(t) {
                let j = t - l;
                let cand = best[j] + self.logp[j * k + l - 1];
                if cand > best[t] || back[t] == 0 {
                    best[t] = cand;
                    back[t] = l;
                }
            }
        }
        let mut lengths = Vec::new();
        let mut t = self.len;
        while t > 0 {
            lengths.push(back[t]);
            t -= back[t];
        }
        lengths.reverse();
        let seg = Segmentation::from_lengths(&lengths).expect("backpointers tile the sequence");
        (seg, best[self.len])
    }
}

/// Bits per character of a line with marginal log-likelihood `log_marginal`
/// over `chars` characters.
pub fn bpc<T: Scalar>(log_marginal: T, chars: usize) -> Result<T> {
    if chars == 0 {
        return Err(Error::InvalidArgument("bits per character of an empty line".into()));
    }
    Ok(-log_marginal / (T::of(chars as f64) * T::of(std::f64::consts::LN_2)))
}

struct LatticeLogZ {
    lens: Vec<usize>,
    max_seg: usize,
}

impl LatticeLogZ {
    fn lattices<'a, T: Scalar>(&'a self, edges: &'a [T]) -> impl Iterator<Item = (usize, EdgeLattice<T>)> + 'a {
        let k = self.max_seg;
        let mut offset = 0;
        self.lens.iter().map(move |&len| {
            let lat = EdgeLattice::from_table(len, k, &edges[offset * k..(offset + len) * k]).expect("sized by caller");
            let at = offset;
            offset += len;
            (at, lat)
        })
    }
}

impl<T: Scalar> CustomOp<T> for LatticeLogZ {
    fn name(&self) -> &'static str {
        "lattice_log_z"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>> {
        let edges = inputs[0];
        let k = self.max_seg;
        let mut d = vec![T::zero(); edges.len()];
        for (b, (offset, lat)) in self.lattices(edges.data()).enumerate() {
            let g = grad.data()[b];
            for (n, p) in lat.edge_posteriors().into_iter().enumerate() {
                d[offset * k + n] = g * p;
            }
        }
        vec![Tensor::new(edges.shape().to_vec(), d).expect("same shape")]
    }
}

/// Differentiable per-line log marginal. `edges` is `[Σ lens, k]`: the rows
/// of each line's lattice stacked in order. Returns a `[lens.len()]` vector.
pub fn lattice_log_marginal<T: Scalar>(graph: &mut Graph<T>, edges: Var, lens: &[usize]) -> Result<Var> {
    let ev = graph.value(edges);
    let (rows, k) = ev.dims2("lattice_log_marginal")?;
    let total: usize = lens.iter().sum();
    if rows != total || k == 0 {
        return Err(Error::Shape {
            op: "lattice_log_marginal",
            lhs: ev.shape().to_vec(),
            rhs: vec![total],
        });
    }
    let op = LatticeLogZ {
        lens: lens.to_vec(),
        max_seg: k,
    };
    let out: Vec<T> = op.lattices(ev.data()).map(|(_, lat)| lat.marginal_logprob()).collect();
    Ok(graph.custom(&[edges], Tensor::vector(out), Box::new(op)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_lattice_counts_compositions() {
        let lat = EdgeLattice::<f64>::from_fn(3, 3, |_, _| 0.0).unwrap();
        assert!((lat.marginal_logprob() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn edge_count() {
        let lat = EdgeLattice::<f32>::from_fn(5, 3, |_, _| -1.0).unwrap();
        assert_eq!(lat.num_edges(), 12);
        assert_eq!(lat.get(4, 1), Some(-1.0));
        assert_eq!(lat.get(4, 2), None);
        assert_eq!(lat.get(0, 4), None);
    }

    #[test]
    fn viterbi_picks_dominant_path() {
        // "ab|cde" scores -1, everything else far below
        let lat = EdgeLattice::<f64>::from_fn(5, 3, |i, l| match (i, l) {
            (0, 2) => -0.4,
            (2, 3) => -0.6,
            _ => -20.0,
        })
        .unwrap();
        let (seg, best) = lat.viterbi();
        assert_eq!(seg.ends(), &[2, 5]);
        assert!((best + 1.0).abs() < 1e-12);
        assert!(best <= lat.marginal_logprob());
    }

    #[test]
    fn ties_prefer_short_segments() {
        let lat = EdgeLattice::<f32>::from_fn(6, 3, |_, _| 0.0).unwrap();
        let (seg, _) = lat.viterbi();
        assert_eq!(seg.ends(), &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn bpc_values() {
        let t = 7;
        assert!((bpc(-(t as f64) * std::f64::consts::LN_2, t).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bpc(0.0f64, 3).unwrap(), 0.0);
        assert!((bpc(-4f64.ln(), 3).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(bpc(-1.0f32, 0).is_err());
    }

    #[test]
    fn posteriors_match_finite_differences() {
        let lat = EdgeLattice::<f64>::from_fn(6, 3, |i, l| -((i * 3 + l) as f64 * 0.37).sin().abs() - 0.1).unwrap();
        let post = lat.edge_posteriors();
        let eps = 1e-6;
        for i in 0..6 {
            for l in 1..=3usize.min(6 - i) {
                let shifted = |d: f64| {
                    EdgeLattice::from_fn(6, 3, |a, b| lat.get(a, b).unwrap() + if (a, b) == (i, l) { d } else { 0.0 })
                        .unwrap()
                        .marginal_logprob()
                };
                let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                assert!((fd - post[i * 3 + l - 1]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn batched_op_gradients() {
        let lens = [3usize, 1, 4];
        let k = 2;
        let table: Vec<f64> = (0..8 * k).map(|n| -(n as f64 * 0.61).cos().abs()).collect();
        let mut g = Graph::new();
        let e = g.param(Tensor::matrix(8, k, table.clone()).unwrap());
        let z = lattice_log_marginal(&mut g, e, &lens).unwrap();
        let w = g.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let zw = g.mul(z, w).unwrap();
        let loss = g.sum(zw);
        let grad = g.grad(loss, &[e]).unwrap().remove(0);
        let eval = |t: &[f64]| {
            let mut g = Graph::new();
            let e = g.constant(Tensor::matrix(8, k, t.to_vec()).unwrap());
            let z = lattice_log_marginal(&mut g, e, &lens).unwrap();
            let zv = g.value(z).data().to_vec();
            zv[0] - 2.0 * zv[1] + 0.5 * zv[2]
        };
        for n in 0..table.len() {
            let mut p = table.clone();
            p[n] += 1e-6;
            let mut m = table.clone();
            m[n] -= 1e-6;
            let fd = (eval(&p) - eval(&m)) / 2e-6;
            assert!((fd - grad.data()[n]).abs() < 1e-7, "entry {n}: {fd} vs {}", grad.data()[n]);
        }
    }
}
