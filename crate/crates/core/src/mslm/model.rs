use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use super::lattice::{lattice_log_marginal, EdgeLattice};
use super::mask::build_segmental_mask;
use super::params::MslmParams;
use crate::backend::{Graph, Tensor, Var};
use crate::corpus::{encode_line, CharVocab, EncodedLine, Special};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Whether dropout is active. Training masks are derived from `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Hands out a distinct dropout seed for every dropout site in a forward
/// pass.
struct DropoutSeeds {
    base: Option<u64>,
    counter: u64,
}

impl DropoutSeeds {
    fn new(mode: Mode) -> Self {
        DropoutSeeds {
            base: match mode {
                Mode::Eval => None,
                Mode::Train { seed } => Some(seed),
            },
            counter: 0,
        }
    }

    fn apply<T: Scalar>(&mut self, g: &mut Graph<T>, x: Var, p: f64) -> Result<Var> {
        let Some(base) = self.base else { return Ok(x) };
        self.counter += 1;
        g.dropout(x, p, splitmix64(base ^ self.counter.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sinusoidal position encodings for positions `0..len`.
fn positions<T: Scalar>(len: usize, dim: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 / rate;
            out.push(T::of(if i % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    out
}

/// Parameters placed on a graph.
struct Bound {
    vars: HashMap<String, Var>,
    order: Vec<Var>,
}

impl Bound {
    fn v(&self, name: &str) -> Var {
        self.vars[name]
    }
}

/// A masked segmental language model: a transformer encoder under the
/// segmental attention mask produces one context vector per segment start,
/// and an LSTM decoder scores every segment of up to `k` characters from it.
///
/// Keys and values of every encoder layer are computed from the embedding
/// input, while queries carry the running stream of the previous layer. With
/// that arrangement the encoding of position `i` never sees characters
/// `i+1..=i+k`, at any depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Mslm<T> {
    pub config: ModelConfig,
    pub params: MslmParams<T>,
}

/// Per-line loss statistics of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss<T> {
    /// Mean negative log marginal over the lines.
    pub loss: T,
    /// Sum of the log marginals.
    pub total_log_marginal: T,
    pub total_chars: usize,
}

impl<T: Scalar> Mslm<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = MslmParams::init(&config, seed)?;
        Ok(Mslm { config, params })
    }

    /// Replaces the embedding table (which is also the output projection).
    pub fn set_embeddings(&mut self, table: &Tensor<T>) -> Result<()> {
        let e = self.params.get_mut("embed").expect("embed parameter");
        if e.shape() != table.shape() {
            return Err(Error::Shape {
                op: "set_embeddings",
                lhs: e.shape().to_vec(),
                rhs: table.shape().to_vec(),
            });
        }
        *e = table.clone();
        Ok(())
    }

    /// Grows the vocabulary to `new_size` entries. New embedding rows are
    /// drawn from `N(0, 1/d)`; existing rows are untouched.
    pub fn extend_vocab(&mut self, new_size: usize, seed: u64) -> Result<()> {
        let old = self.config.vocab_size;
        if new_size < old {
            return Err(Error::InvalidArgument(format!(
                "cannot shrink vocabulary from {old} to {new_size}"
            )));
        }
        let d = self.config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (d as f64).sqrt();
        let e = self.params.get_mut("embed").expect("embed parameter");
        let mut data = e.data().to_vec();
        for _ in old * d..new_size * d {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(T::of(z * std));
        }
        *e = Tensor::matrix(new_size, d, data)?;
        let b = self.params.get_mut("out_bias").expect("out_bias parameter");
        let mut data = b.data().to_vec();
        data.resize(new_size, T::zero());
        *b = Tensor::vector(data);
        self.config.vocab_size = new_size;
        Ok(())
    }

    fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let mut vars = HashMap::new();
        let mut order = Vec::new();
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            let v = if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            };
            vars.insert(name.clone(), v);
            order.push(v);
        }
        Bound { vars, order }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Data("cannot encode an empty line".into()));
        }
        if ids.len() + 1 > self.config.max_len {
            return Err(Error::Data(format!(
                "line of {} characters exceeds the configured maximum length {}",
                ids.len(),
                self.config.max_len - 1
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Data(format!(
                "character id {bad} outside a vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Encoder over a batch of lines. Returns the stacked `[Σ (T_b + 1), d]`
    /// encodings; row `offset_b + i` is the context for segments starting at
    /// character `i` of line `b`.
    fn encode_graph(&self, g: &mut Graph<T>, b: &Bound, lines: &[&[usize]], drop: &mut DropoutSeeds) -> Result<Var> {
        let c = &self.config;
        let d = c.hidden;
        let dh = c.head_dim();
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        for line in lines {
            self.check_ids(line)?;
            ids.push(Special::Bos.id());
            ids.extend_from_slice(line);
            pos.extend(positions::<T>(line.len() + 1, d));
        }
        let n = ids.len();
        let emb = g.embedding(b.v("embed"), &ids)?;
        let pos = g.constant(Tensor::matrix(n, d, pos)?);
        let x = g.add(emb, pos)?;
        let x = drop.apply(g, x, c.dropout_embedding)?;

        let mut masks: HashMap<usize, Var> = HashMap::new();
        for line in lines {
            let len = line.len() + 1;
            masks.entry(len).or_insert_with(|| {
                let m = build_segmental_mask(len, c.max_seg_len)
                    .into_iter()
                    .map(|vis| if vis { T::zero() } else { T::neg_infinity() })
                    .collect();
                g.constant(Tensor::matrix(len, len, m).expect("square mask"))
            });
        }
        let scale = T::of(1.0 / (dh as f64).sqrt());

        let mut h = x;
        for l in 0..c.layers {
            let p = |n: &str| b.v(&format!("enc{l}.{n}"));
            let kv_in = g.layer_norm(x, p("ln_kv.g"), p("ln_kv.b"), T::of(1e-5))?;
            let q_in = g.layer_norm(h, p("ln_q.g"), p("ln_q.b"), T::of(1e-5))?;
            let q = g.matmul(q_in, p("wq"))?;
            let q = g.add(q, p("bq"))?;
            let k = g.matmul(kv_in, p("wk"))?;
            let k = g.add(k, p("bk"))?;
            let v = g.matmul(kv_in, p("wv"))?;
            let v = g.add(v, p("bv"))?;

            let mut line_out = Vec::with_capacity(lines.len());
            let mut row = 0;
            for line in lines {
                let len = line.len() + 1;
                let (ql, kl, vl) = (
                    g.slice(q, 0, row, row + len)?,
                    g.slice(k, 0, row, row + len)?,
                    g.slice(v, 0, row, row + len)?,
                );
                let mut heads = Vec::with_capacity(c.heads);
                for hd in 0..c.heads {
                    let cols = hd * dh..(hd + 1) * dh;
                    let qh = g.slice(ql, 1, cols.start, cols.end)?;
                    let kh = g.slice(kl, 1, cols.start, cols.end)?;
                    let vh = g.slice(vl, 1, cols.start, cols.end)?;
                    let kt = g.transpose(kh)?;
                    let s = g.matmul(qh, kt)?;
                    let s = g.scale(s, scale);
                    let s = g.add(s, masks[&len])?;
                    let a = g.softmax(s, 1)?;
                    heads.push(g.matmul(a, vh)?);
                }
                line_out.push(if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? });
                row += len;
            }
            let att = if line_out.len() == 1 { line_out[0] } else { g.concat(&line_out, 0)? };
            let att = g.matmul(att, p("wo"))?;
            let att = g.add(att, p("bo"))?;
            let att = drop.apply(g, att, c.dropout_encoder)?;
            h = g.add(h, att)?;

            let f = g.layer_norm(h, p("ln_ff.g"), p("ln_ff.b"), T::of(1e-5))?;
            let f = g.matmul(f, p("w1"))?;
            let f = g.add(f, p("b1"))?;
            let f = g.gelu(f);
            let f = g.matmul(f, p("w2"))?;
            let f = g.add(f, p("b2"))?;
            let f = drop.apply(g, f, c.dropout_encoder)?;
            h = g.add(h, f)?;
        }
        g.layer_norm(h, b.v("enc.ln_out.g"), b.v("enc.ln_out.b"), T::of(1e-5))
    }

    /// Segment log-probabilities for every start of every line, as a
    /// `[Σ T_b, k]` table (column `l - 1` holds segments of length `l`;
    /// entries running past the end of a line are meaningless).
    fn edges_graph(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        enc: Var,
        lines: &[&[usize]],
        drop: &mut DropoutSeeds,
    ) -> Result<Var> {
        let c = &self.config;
        let (d, k, v) = (c.hidden, c.max_seg_len, c.vocab_size);
        let seg_end = Special::SegEnd.id();

        // (line, start) of every segment start, and its encoder row
        let mut starts = Vec::new();
        let mut rows = Vec::new();
        let mut offset = 0;
        for (li, line) in lines.iter().enumerate() {
            for i in 0..line.len() {
                starts.push((li, i));
                rows.push(offset + i);
            }
            offset += line.len() + 1;
        }
        let s = starts.len();
        let steps = k.min(lines.iter().map(|l| l.len()).max().unwrap_or(0));
        let char_at = |(li, i): (usize, usize), m: usize| lines[li].get(i + m).copied();

        let ctx = g.embedding(enc, &rows)?;
        let ctx = drop.apply(g, ctx, c.dropout_decoder)?;
        let init = g.matmul(ctx, b.v("dec.w_init"))?;
        let init = g.add(init, b.v("dec.b_init"))?;
        let mut cell = g.slice(init, 1, 0, d)?;
        let mut hid = g.slice(init, 1, d, 2 * d)?;

        let embed_t = g.transpose(b.v("embed"))?;
        let out_mask: Vec<T> = (0..v)
            .map(|id| {
                let hidden = [Special::Pad, Special::Bos, Special::Eos, Special::SegStart]
                    .iter()
                    .any(|s| s.id() == id);
                if hidden {
                    T::neg_infinity()
                } else {
                    T::zero()
                }
            })
            .collect();
        let out_mask = g.constant(Tensor::vector(out_mask));

        let mut char_lp = Vec::with_capacity(steps);
        let mut end_lp = Vec::with_capacity(steps);
        for m in 0..=steps {
            let input_ids: Vec<usize> = if m == 0 {
                vec![Special::SegStart.id(); s]
            } else {
                starts
                    .iter()
                    .map(|&st| char_at(st, m - 1).unwrap_or(Special::Pad.id()))
                    .collect()
            };
            let x = g.embedding(b.v("embed"), &input_ids)?;
            let x = if m == 0 { drop.apply(g, x, c.dropout_decoder)? } else { x };

            let gx = g.matmul(x, b.v("dec.w_ih"))?;
            let gh = g.matmul(hid, b.v("dec.w_hh"))?;
            let gates = g.add(gx, gh)?;
            let gates = g.add(gates, b.v("dec.b"))?;
            let ig = g.slice(gates, 1, 0, d)?;
            let ig = g.sigmoid(ig);
            let fg = g.slice(gates, 1, d, 2 * d)?;
            let fg = g.sigmoid(fg);
            let gg = g.slice(gates, 1, 2 * d, 3 * d)?;
            let gg = g.tanh(gg);
            let og = g.slice(gates, 1, 3 * d, 4 * d)?;
            let og = g.sigmoid(og);
            let keep = g.mul(fg, cell)?;
            let write = g.mul(ig, gg)?;
            cell = g.add(keep, write)?;
            let tc = g.tanh(cell);
            hid = g.mul(og, tc)?;

            let logits = g.matmul(hid, embed_t)?;
            let logits = g.add(logits, b.v("out_bias"))?;
            let logits = g.add(logits, out_mask)?;
            let lp = g.log_softmax(logits, 1)?;
            if m > 0 {
                end_lp.push(g.pick(lp, &vec![seg_end; s])?);
            }
            if m < steps {
                let targets: Vec<usize> = starts.iter().map(|&st| char_at(st, m).unwrap_or(seg_end)).collect();
                char_lp.push(g.pick(lp, &targets)?);
            }
        }

        let mut cols = Vec::with_capacity(k);
        let mut prefix: Option<Var> = None;
        for l in 1..=k {
            if l <= steps {
                prefix = Some(match prefix {
                    None => char_lp[0],
                    Some(p) => g.add(p, char_lp[l - 1])?,
                });
                let e = g.add(prefix.expect("set above"), end_lp[l - 1])?;
                cols.push(g.reshape(e, &[s, 1])?);
            } else {
                cols.push(g.constant(Tensor::zeros(&[s, 1])));
            }
        }
        if cols.len() == 1 {
            Ok(cols[0])
        } else {
            g.concat(&cols, 1)
        }
    }

    /// Encodings `h[0..=T]` of one line (`ids` without `<bos>`), shape
    /// `[T + 1, d]`.
    pub fn encode(&self, ids: &[usize], mode: Mode) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let h = self.encode_graph(&mut g, &b, &[ids], &mut DropoutSeeds::new(mode))?;
        Ok(g.value(h).clone())
    }

    /// Stacked encodings of several lines.
    pub fn encode_batch(&self, lines: &[&[usize]], mode: Mode) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let h = self.encode_graph(&mut g, &b, lines, &mut DropoutSeeds::new(mode))?;
        Ok(g.value(h).clone())
    }

    /// Edge lattices of a batch of lines, without dropout.
    pub fn score_batch(&self, lines: &[&[usize]]) -> Result<Vec<EdgeLattice<T>>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let mut drop = DropoutSeeds::new(Mode::Eval);
        let enc = self.encode_graph(&mut g, &b, lines, &mut drop)?;
        let edges = self.edges_graph(&mut g, &b, enc, lines, &mut drop)?;
        let table = g.value(edges).data();
        let k = self.config.max_seg_len;
        let mut offset = 0;
        let mut out = Vec::with_capacity(lines.len());
        for line in lines {
            let t = line.len();
            let lat = EdgeLattice::from_table(t, k, &table[offset * k..(offset + t) * k])?;
            debug_assert!((0..t).all(|i| (1..=k).all(|l| lat.get(i, l).is_none_or(|e| e <= T::zero()))));
            out.push(lat);
            offset += t;
        }
        Ok(out)
    }

    pub fn score_edges(&self, ids: &[usize]) -> Result<EdgeLattice<T>> {
        Ok(self.score_batch(&[ids])?.remove(0))
    }

    fn loss_graph(&self, g: &mut Graph<T>, b: &Bound, lines: &[&[usize]], mode: Mode) -> Result<(Var, Var)> {
        if lines.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut drop = DropoutSeeds::new(mode);
        let enc = self.encode_graph(g, b, lines, &mut drop)?;
        let edges = self.edges_graph(g, b, enc, lines, &mut drop)?;
        let lens: Vec<usize> = lines.iter().map(|l| l.len()).collect();
        let marginals = lattice_log_marginal(g, edges, &lens)?;
        let total = g.sum(marginals);
        let loss = g.scale(total, T::of(-1.0 / lines.len() as f64));
        Ok((loss, total))
    }

    /// Mean negative log marginal likelihood of a batch.
    pub fn nll_loss(&self, batch: &[EncodedLine], mode: Mode) -> Result<BatchLoss<T>> {
        let lines: Vec<&[usize]> = batch.iter().map(|e| e.ids.as_slice()).collect();
        self.batch_loss(&lines, mode)
    }

    pub fn batch_loss(&self, lines: &[&[usize]], mode: Mode) -> Result<BatchLoss<T>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let (loss, total) = self.loss_graph(&mut g, &b, lines, mode)?;
        Ok(BatchLoss {
            loss: g.value(loss).item(),
            total_log_marginal: g.value(total).item(),
            total_chars: lines.iter().map(|l| l.len()).sum(),
        })
    }

    /// Loss and its gradient for every parameter, in parameter order.
    pub fn loss_and_grad(&self, lines: &[&[usize]], mode: Mode) -> Result<(BatchLoss<T>, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, true);
        let (loss, total) = self.loss_graph(&mut g, &b, lines, mode)?;
        let grads = g.grad(loss, &b.order)?;
        Ok((
            BatchLoss {
                loss: g.value(loss).item(),
                total_log_marginal: g.value(total).item(),
                total_chars: lines.iter().map(|l| l.len()).sum(),
            },
            grads,
        ))
    }

    /// Unsegmented characters of `line` (whitespace is discarded) rendered
    /// with a single space at every boundary of the Viterbi segmentation.
    pub fn segment_line(&self, vocab: &CharVocab, line: &str) -> Result<String> {
        let enc = encode_line(vocab, line, false)?;
        let lat = self.score_edges(&enc.ids)?;
        let (seg, _) = lat.viterbi();
        Ok(seg.render(&enc.chars()))
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }
}
