//! CBOW character embeddings used to initialize the model's embedding table.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backend::Tensor;
use crate::corpus::{CharVocab, EncodedLine};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const HEADER: &str = "seglm-emb v1";

/// Learning rate of the first CBOW update; it decays linearly to
/// [`CBOW_LR_END`] over the whole run.
pub const CBOW_LR_START: f32 = 0.05;
pub const CBOW_LR_END: f32 = 0.0001;

/// One embedding row per vocabulary entry, specials included.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vocab_hash: String,
    data: Vec<f32>,
    /// Training-corpus occurrences per row; unknown for tables read from disk.
    counts: Option<Vec<u64>>,
}

/// Result of [`train_cbow`].
#[derive(Clone, Debug)]
pub struct CbowRun {
    pub table: EmbeddingTable,
    /// Output (prediction) vectors, one row per vocabulary entry.
    pub output: Vec<f32>,
    /// Mean cross-entropy (nats) of each epoch, measured after the epoch.
    pub epoch_loss: Vec<f64>,
}

impl CbowRun {
    /// Log-probabilities of every vocabulary entry given the context `ids`.
    pub fn predict(&self, context: &[usize]) -> Vec<f32> {
        let d = self.table.dim;
        let mut ctx = vec![0.0; d];
        let n = context_mean(&self.table.data, d, context, usize::MAX, usize::MAX, &mut ctx);
        debug_assert_eq!(n, context.len());
        let mut scores = vec![0.0; self.table.rows()];
        log_softmax_scores(&self.output, &ctx, d, &mut scores);
        scores
    }
}

impl EmbeddingTable {
    pub fn new(dim: usize, vocab_hash: String, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("embedding table has non-finite entries".into()));
        }
        Ok(EmbeddingTable {
            dim,
            vocab_hash,
            data,
            counts: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn row(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// The table as a `[V, d]` tensor, after checking it indexes `vocab`.
    pub fn to_tensor<T: Scalar>(&self, vocab: &CharVocab) -> Result<Tensor<T>> {
        self.check_vocab(vocab)?;
        Tensor::matrix(self.rows(), self.dim, self.data.iter().map(|&x| T::of(x as f64)).collect())
    }

    fn check_vocab(&self, vocab: &CharVocab) -> Result<()> {
        if self.rows() != vocab.len() || self.vocab_hash != vocab.fingerprint() {
            return Err(Error::Data(format!(
                "embedding table ({} rows, vocab {}) does not index vocabulary ({} entries, vocab {})",
                self.rows(),
                self.vocab_hash,
                vocab.len(),
                vocab.fingerprint()
            )));
        }
        Ok(())
    }

    /// Appends rows for a larger vocabulary whose first entries agree with
    /// the current one. New rows have zero occurrences, so
    /// [`init_specials`] resamples them.
    pub fn extend_to(&self, vocab: &CharVocab) -> Result<Self> {
        if vocab.len() < self.rows() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {} entries is smaller than the table ({} rows)",
                vocab.len(),
                self.rows()
            )));
        }
        let mut data = self.data.clone();
        data.resize(vocab.len() * self.dim, 0.0);
        let mut counts = self.counts.clone().unwrap_or_else(|| vec![1; self.rows()]);
        counts.resize(vocab.len(), 0);
        Ok(EmbeddingTable {
            dim: self.dim,
            vocab_hash: vocab.fingerprint(),
            data,
            counts: Some(counts),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{HEADER}\ndim={}\nvocab_hash={}\n", self.dim, self.vocab_hash).into_bytes();
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rest = bytes;
        let mut line = || -> Result<&str> {
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format("embedding", "truncated header"))?;
            let l = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::format("embedding", "header is not UTF-8"))?;
            rest = &rest[nl + 1..];
            Ok(l)
        };
        if line()? != HEADER {
            return Err(Error::format("embedding", format!("missing {HEADER:?} header")));
        }
        let dim: usize = line()?
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::format("embedding", "bad dim line"))?;
        let hash = line()?
            .strip_prefix("vocab_hash=")
            .ok_or_else(|| Error::format("embedding", "bad vocab_hash line"))?
            .to_owned();
        if dim == 0 || rest.len() % (4 * dim) != 0 {
            return Err(Error::format(
                "embedding",
                format!("{} payload bytes are not whole rows of dim {dim}", rest.len()),
            ));
        }
        let data = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::new(dim, hash, data).map_err(|e| Error::format("embedding", e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn check_ids(corpus: &[EncodedLine], v: usize) -> Result<()> {
    if corpus.iter().all(|l| l.ids.is_empty()) {
        return Err(Error::Data("cannot train embeddings on an empty corpus".into()));
    }
    for (n, line) in corpus.iter().enumerate() {
        if let Some(&bad) = line.ids.iter().find(|&&i| i >= v) {
            return Err(Error::Data(format!(
                "line {}: id {bad} is outside the vocabulary of {v} entries",
                n + 1
            )));
        }
    }
    Ok(())
}

/// Writes the mean of the context embeddings around `pos` to `out` and
/// returns the context size.
fn context_mean(input: &[f32], d: usize, ids: &[usize], pos: usize, window: usize, out: &mut [f32]) -> usize {
    out.iter_mut().for_each(|x| *x = 0.0);
    let lo = pos.saturating_sub(window);
    let hi = pos.saturating_add(window).saturating_add(1).min(ids.len());
    let mut n = 0;
    for (j, &id) in ids.iter().enumerate().take(hi).skip(lo) {
        if j == pos {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(&input[id * d..(id + 1) * d]) {
            *o += x;
        }
        n += 1;
    }
    if n > 0 {
        let inv = 1.0 / n as f32;
        out.iter_mut().for_each(|x| *x *= inv);
    }
    n
}

/// Output distribution over the vocabulary (in place, as log-probabilities).
fn log_softmax_scores(output: &[f32], ctx: &[f32], d: usize, scores: &mut [f32]) {
    for (id, s) in scores.iter_mut().enumerate() {
        *s = output[id * d..(id + 1) * d].iter().zip(ctx).map(|(a, b)| a * b).sum();
    }
    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f32>().ln();
    scores.iter_mut().for_each(|s| *s -= lse);
}

fn mean_loss(input: &[f32], output: &[f32], d: usize, v: usize, corpus: &[EncodedLine], window: usize) -> f64 {
    let mut ctx = vec![0.0; d];
    let mut scores = vec![0.0; v];
    let (mut total, mut n) = (0.0f64, 0usize);
    for line in corpus {
        for pos in 0..line.ids.len() {
            if context_mean(input, d, &line.ids, pos, window, &mut ctx) == 0 {
                continue;
            }
            log_softmax_scores(output, &ctx, d, &mut scores);
            total -= scores[line.ids[pos]] as f64;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Trains CBOW embeddings: each character is predicted with a full softmax
/// from the mean embedding of up to `window` characters on either side
/// (within its line). Lines are visited in a seeded shuffled order each
/// epoch and updated with plain SGD.
pub fn train_cbow(
    corpus: &[EncodedLine],
    vocab: &CharVocab,
    dim: usize,
    window: usize,
    epochs: usize,
    seed: u64,
) -> Result<CbowRun> {
    if dim == 0 || window == 0 || epochs == 0 {
        return Err(Error::InvalidArgument(format!(
            "dim, window and epochs must be >= 1 (got {dim}, {window}, {epochs})"
        )));
    }
    let v = vocab.len();
    check_ids(corpus, v)?;
    let d = dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input: Vec<f32> = (0..v * d).map(|_| (rng.random::<f32>() - 0.5) / d as f32).collect();
    let mut output = vec![0.0f32; v * d];

    let mut counts = vec![0u64; v];
    for line in corpus {
        for &id in &line.ids {
            counts[id] += 1;
        }
    }
    let positions: usize = corpus.iter().map(|l| l.ids.len()).sum();
    let total_updates = (positions * epochs).max(1) as f32;

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut ctx = vec![0.0f32; d];
    let mut scores = vec![0.0f32; v];
    let mut grad_ctx = vec![0.0f32; d];
    let mut done = 0usize;
    let mut epoch_loss = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &li in &order {
            let ids = &corpus[li].ids;
            for pos in 0..ids.len() {
                let lr = CBOW_LR_START - (CBOW_LR_START - CBOW_LR_END) * (done as f32 / total_updates);
                done += 1;
                let n = context_mean(&input, d, ids, pos, window, &mut ctx);
                if n == 0 {
                    continue;
                }
                log_softmax_scores(&output, &ctx, d, &mut scores);
                grad_ctx.iter_mut().for_each(|x| *x = 0.0);
                for (id, &s) in scores.iter().enumerate() {
                    // d(-log p_target)/d(score_id) = p_id - [id == target]
                    let g = s.exp() - if id == ids[pos] { 1.0 } else { 0.0 };
                    let row = &mut output[id * d..(id + 1) * d];
                    for ((gc, o), &c) in grad_ctx.iter_mut().zip(row.iter_mut()).zip(&ctx) {
                        *gc += g * *o;
                        *o -= lr * g * c;
                    }
                }
                let lo = pos.saturating_sub(window);
                let hi = (pos + window + 1).min(ids.len());
                let step = lr / n as f32;
                for (j, &id) in ids.iter().enumerate().take(hi).skip(lo) {
                    if j == pos {
                        continue;
                    }
                    for (x, &g) in input[id * d..(id + 1) * d].iter_mut().zip(&grad_ctx) {
                        *x -= step * g;
                    }
                }
            }
        }
        epoch_loss.push(mean_loss(&input, &output, d, v, corpus, window));
    }
    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { step: done });
    }
    Ok(CbowRun {
        table: EmbeddingTable {
            dim: d,
            vocab_hash: vocab.fingerprint(),
            data: input,
            counts: Some(counts),
        },
        output,
        epoch_loss,
    })
}

/// Subtracts the mean of the trained character rows from each of them and
/// rescales them to unit norm, the expected norm of an `N(0, 1/d)` row.
///
/// Character CBOW vectors share a dominant direction (most pairs have
/// cosine similarity well above 0.5). The embedding table doubles as the
/// output projection, so raw vectors leave characters nearly
/// indistinguishable to the softmax. Trained rows are those with a nonzero
/// count, or every non-special row for tables read from disk. Other rows
/// are left untouched.
pub fn normalize_rows(table: &EmbeddingTable) -> EmbeddingTable {
    let d = table.dim;
    let trained: Vec<usize> = (0..table.rows())
        .filter(|&id| !CharVocab::is_special(id) && table.counts.as_ref().is_none_or(|c| c[id] > 0))
        .collect();
    let mut out = table.clone();
    if trained.is_empty() {
        return out;
    }
    let mut mean = vec![0.0f64; d];
    for &id in &trained {
        for (m, &x) in mean.iter_mut().zip(table.row(id)) {
            *m += x as f64 / trained.len() as f64;
        }
    }
    for &id in &trained {
        let row = &mut out.data[id * d..(id + 1) * d];
        for (x, m) in row.iter_mut().zip(&mean) {
            *x = (*x as f64 - m) as f32;
        }
        let norm = row.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    out
}

/// Resamples from `N(0, 1/d)` the rows of the special symbols and of every
/// character that never occurred in the training corpus. Other rows are left
/// untouched.
pub fn init_specials(table: &EmbeddingTable, vocab: &CharVocab, seed: u64) -> Result<EmbeddingTable> {
    table.check_vocab(vocab)?;
    let d = table.dim;
    let std = 1.0 / (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = table.clone();
    for id in 0..table.rows() {
        let unseen = table.counts.as_ref().is_some_and(|c| c[id] == 0);
        if CharVocab::is_special(id) || unseen {
            for x in &mut out.data[id * d..(id + 1) * d] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = (z * std) as f32;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, encode_line, extend_vocab, RawCorpus};

    fn setup(lines: &[&str]) -> (CharVocab, Vec<EncodedLine>) {
        let raw = RawCorpus::new(lines.iter().map(|s| s.to_string()).collect(), "t").unwrap();
        let vocab = build_vocab(&raw).unwrap();
        let enc = raw.lines.iter().map(|l| encode_line(&vocab, l, false).unwrap()).collect();
        (vocab, enc)
    }

    #[test]
    fn alternating_corpus_learns_the_neighbour() {
        let (vocab, enc) = setup(&["abababababababab", "babababababa"]);
        let run = train_cbow(&enc, &vocab, 8, 1, 30, 0).unwrap();
        let (a, b) = (vocab.id_of('a').unwrap(), vocab.id_of('b').unwrap());
        // with window 1 every `b` is surrounded by `a`s
        let lp = run.predict(&[a, a]);
        assert!(lp[b] > lp[a], "{lp:?}");
        let lp = run.predict(&[b]);
        assert!(lp[a] > lp[b], "{lp:?}");
    }

    #[test]
    fn loss_does_not_increase() {
        let (vocab, enc) = setup(&["the cat sat on the mat", "a cat and a hat", "that hat sat"]);
        let run = train_cbow(&enc, &vocab, 16, 2, 12, 7).unwrap();
        for w in run.epoch_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", run.epoch_loss);
        }
        assert!(run.table.is_finite());
    }

    #[test]
    fn seeded_and_validated() {
        let (vocab, enc) = setup(&["abcabc", "cab"]);
        let a = train_cbow(&enc, &vocab, 4, 5, 3, 1).unwrap().table;
        assert_eq!(a, train_cbow(&enc, &vocab, 4, 5, 3, 1).unwrap().table);
        assert_ne!(a, train_cbow(&enc, &vocab, 4, 5, 3, 2).unwrap().table);
        assert!(train_cbow(&enc, &vocab, 4, 5, 0, 1).is_err());
        assert!(train_cbow(&enc, &vocab, 0, 5, 1, 1).is_err());
        assert!(train_cbow(&[], &vocab, 4, 5, 1, 1).is_err());
        let mut bad = enc.clone();
        bad[0].ids[0] = 999;
        assert!(train_cbow(&bad, &vocab, 4, 5, 1, 1).is_err());
    }

    #[test]
    fn specials_and_unseen_rows_are_resampled() {
        let (vocab, enc) = setup(&["abcabc", "cab"]);
        let t = train_cbow(&enc, &vocab, 4, 2, 2, 1).unwrap().table;
        let raw = RawCorpus::new(vec!["xyz".into()], "t").unwrap();
        let (big, added) = extend_vocab(&vocab, &raw);
        let ext = t.extend_to(&big).unwrap();
        let out = init_specials(&ext, &big, 3).unwrap();
        for id in 0..big.len() {
            let resampled = CharVocab::is_special(id) || added.contains(&id);
            assert_eq!(out.row(id) == ext.row(id), !resampled, "row {id}");
        }
        assert_eq!(out, init_specials(&ext, &big, 3).unwrap());
        assert!(init_specials(&t, &big, 3).is_err());
    }

    #[test]
    fn normalized_rows_are_centred_unit_vectors() {
        let (vocab, enc) = setup(&["the cat sat on the mat", "a cat and a hat", "that hat sat"]);
        let t = train_cbow(&enc, &vocab, 16, 2, 12, 7).unwrap().table;
        let raw = RawCorpus::new(vec!["xyz".into()], "t").unwrap();
        let (big, added) = extend_vocab(&vocab, &raw);
        let ext = t.extend_to(&big).unwrap();
        let out = normalize_rows(&ext);
        let trained: Vec<usize> = (0..big.len())
            .filter(|&id| !CharVocab::is_special(id) && !added.contains(&id))
            .collect();
        let mut mean = [0.0f32; 16];
        for &id in &trained {
            for (m, &x) in mean.iter_mut().zip(ext.row(id)) {
                *m += x / trained.len() as f32;
            }
        }
        for id in 0..big.len() {
            if !trained.contains(&id) {
                assert_eq!(out.row(id), ext.row(id), "row {id}");
                continue;
            }
            let centred: Vec<f32> = ext.row(id).iter().zip(&mean).map(|(x, m)| x - m).collect();
            let norm = centred.iter().map(|x| x * x).sum::<f32>().sqrt();
            for (a, b) in out.row(id).iter().zip(&centred) {
                assert!((a - b / norm).abs() < 1e-5, "row {id}");
            }
        }
        // tables read from disk have no counts: every non-special row is trained
        let loaded = EmbeddingTable::from_bytes(&t.to_bytes()).unwrap();
        let n = normalize_rows(&loaded);
        assert_eq!(n.row(0), loaded.row(0));
        assert_eq!(n.row(6), normalize_rows(&t).row(6));
    }

    #[test]
    fn file_round_trip() {
        let (vocab, enc) = setup(&["abcabc"]);
        let t = train_cbow(&enc, &vocab, 3, 2, 1, 1).unwrap().table;
        let back = EmbeddingTable::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back.data(), t.data());
        assert_eq!(back.vocab_hash(), vocab.fingerprint());
        assert!(back.to_tensor::<f32>(&vocab).is_ok());
        let mut bytes = t.to_bytes();
        bytes.pop();
        assert!(EmbeddingTable::from_bytes(&bytes).is_err());
        assert!(EmbeddingTable::from_bytes(b"nope\n").is_err());
    }
}
