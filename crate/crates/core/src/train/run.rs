use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{clip_grad_norm, Adam};
use super::checkpoint::{config_hash, Checkpoint, Provenance};
use super::config::{lr_at, TrainConfig, TrainMode};
use crate::corpus::{CharVocab, EncodedLine};
use crate::error::{Error, Result};
use crate::eval;
use crate::mslm::{splitmix64, Mode, Mslm};
use crate::scalar::Scalar;
use crate::segmentation::Segmentation;

/// Starting point of a run.
#[derive(Clone, Debug)]
pub enum Init<T> {
    Fresh { model: Mslm<T>, vocab: CharVocab },
    /// Resumed under [`TrainMode::Pretrain`], restarted under
    /// [`TrainMode::Finetune`].
    From(Checkpoint<T>),
}

pub struct TrainData<'a> {
    pub train: &'a [EncodedLine],
    pub val: &'a [EncodedLine],
    /// Gold-segmented lines whose boundary MCC is logged at every
    /// checkpoint. Never used for selection.
    pub monitor: Option<&'a [EncodedLine]>,
}

/// Which checkpoints a run keeps in memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Keep {
    All,
    /// The best by validation bpc and the last one.
    BestAndLast,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Training bpc averaged over the batches since the previous row.
    pub train_bpc: Option<f64>,
    pub val_bpc: f64,
    pub mcc: Option<f64>,
}

impl MetricsRow {
    pub fn tsv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!("{}\t{}\t{:.6}\t{}", self.step, opt(self.train_bpc), self.val_bpc, opt(self.mcc))
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    /// Validation bpc of the starting model.
    pub initial_val_bpc: f64,
    /// Kept checkpoints, in step order.
    pub checkpoints: Vec<Checkpoint<T>>,
    /// One row for the starting model, then one per checkpoint.
    pub log: Vec<MetricsRow>,
    /// Steps whose gradient norm exceeded the clipping threshold.
    pub clipped_steps: Vec<usize>,
}

impl<T: Scalar> RunOutput<T> {
    pub fn best(&self) -> Result<&Checkpoint<T>> {
        select_best(&self.checkpoints)
    }

    pub fn metrics_tsv(&self) -> String {
        let mut s = String::from("step\ttrain_bpc\tval_bpc\tmcc\n");
        for r in &self.log {
            s.push_str(&r.tsv_line());
            s.push('\n');
        }
        s
    }
}

/// Anything with a step and a validation bpc.
pub trait Scored {
    fn step(&self) -> usize;
    fn val_bpc(&self) -> f64;
}

impl<T> Scored for Checkpoint<T> {
    fn step(&self) -> usize {
        self.step
    }
    fn val_bpc(&self) -> f64 {
        self.val_bpc
    }
}

impl Scored for MetricsRow {
    fn step(&self) -> usize {
        self.step
    }
    fn val_bpc(&self) -> f64 {
        self.val_bpc
    }
}

/// Lowest validation bpc; ties go to the earliest step. NaN ranks last.
pub fn select_best<C: Scored>(items: &[C]) -> Result<&C> {
    items
        .iter()
        .min_by(|a, b| {
            let key = |c: &C| if c.val_bpc().is_nan() { f64::INFINITY } else { c.val_bpc() };
            key(a).total_cmp(&key(b)).then(a.step().cmp(&b.step()))
        })
        .ok_or_else(|| Error::InvalidArgument("no checkpoints to select from".into()))
}

fn check_coverage(model_vocab: usize, vocab: &CharVocab, lines: &[EncodedLine], what: &str) -> Result<()> {
    if model_vocab != vocab.len() {
        return Err(Error::Data(format!(
            "model has {model_vocab} vocabulary rows but the vocabulary has {} entries",
            vocab.len()
        )));
    }
    for (n, l) in lines.iter().enumerate() {
        if let Some(&bad) = l.ids.iter().find(|&&i| i >= vocab.len()) {
            return Err(Error::Data(format!(
                "{what} line {}: id {bad} is not covered by the vocabulary; extend it first",
                n + 1
            )));
        }
    }
    Ok(())
}

fn chunks(lines: &[EncodedLine], size: usize) -> impl Iterator<Item = Vec<&[usize]>> {
    lines.chunks(size.max(1)).map(|c| c.iter().map(|l| l.ids.as_slice()).collect())
}

/// Corpus-level bits per character without dropout.
pub fn corpus_bpc<T: Scalar>(model: &Mslm<T>, lines: &[EncodedLine], batch_size: usize) -> Result<f64> {
    if lines.is_empty() {
        return Err(Error::Data("cannot compute bpc of an empty corpus".into()));
    }
    let (mut total, mut chars) = (0.0, 0);
    for batch in chunks(lines, batch_size) {
        let l = model.batch_loss(&batch, Mode::Eval)?;
        total += l.total_log_marginal.f64();
        chars += l.total_chars;
    }
    Ok(-total / (chars as f64 * std::f64::consts::LN_2))
}

/// Viterbi segmentation of every line.
pub fn segment_lines<T: Scalar>(model: &Mslm<T>, lines: &[EncodedLine], batch_size: usize) -> Result<Vec<Segmentation>> {
    let mut out = Vec::with_capacity(lines.len());
    for batch in chunks(lines, batch_size) {
        for lat in model.score_batch(&batch)? {
            out.push(lat.viterbi().0);
        }
    }
    Ok(out)
}

fn gold_of(lines: &[EncodedLine]) -> Result<Vec<Segmentation>> {
    lines
        .iter()
        .enumerate()
        .map(|(n, l)| {
            l.gold_segmentation()
                .ok_or_else(|| Error::Data(format!("line {} has no gold segmentation", n + 1)))
        })
        .collect()
}

/// Boundary MCC of the model's Viterbi segmentations against gold.
pub fn monitor_mcc<T: Scalar>(model: &Mslm<T>, gold: &[EncodedLine]) -> Result<f64> {
    let g = gold_of(gold)?;
    let p = segment_lines(model, gold, 32)?;
    let pb: Vec<_> = p.iter().map(Segmentation::to_boundary_vector).collect();
    let gb: Vec<_> = g.iter().map(Segmentation::to_boundary_vector).collect();
    eval::mcc(&pb, &gb)
}

/// Span precision, recall and F1 of the model's segmentations against gold.
pub fn segmentation_report<T: Scalar>(model: &Mslm<T>, gold: &[EncodedLine]) -> Result<eval::EvalReport> {
    let g = gold_of(gold)?;
    let p = segment_lines(model, gold, 32)?;
    eval::EvalReport::from_segmentations(&p, &g, eval::Aggregation::Micro)
}

fn batch_indices(n: usize, size: usize, seed: u64, step: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (step as u64).wrapping_mul(0xA076_1D64_78BD_642F)));
    index::sample(&mut rng, n, size.min(n)).into_vec()
}

fn dropout_seed(seed: u64, step: usize) -> u64 {
    splitmix64(seed.rotate_left(29) ^ (step as u64).wrapping_mul(0xE703_7ED1_A0B4_28DB))
}

/// Trains with Adam under the warmup/decay schedule. The batch and the
/// dropout masks of each step depend only on the seed and the step number,
/// so a run resumed from one of its checkpoints retraces the original.
pub fn train_run<T: Scalar>(config: &TrainConfig, init: Init<T>, data: &TrainData<'_>, keep: Keep) -> Result<RunOutput<T>> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    let (mut model, vocab, start, mut adam, parent) = match init {
        Init::Fresh { model, vocab } => (model, vocab, 0, None, "none".to_owned()),
        Init::From(ckpt) => {
            let id = ckpt.id();
            match config.mode {
                TrainMode::Pretrain => (ckpt.model, ckpt.vocab, ckpt.step, ckpt.optimizer, ckpt.provenance.parent),
                TrainMode::Finetune => (ckpt.model, ckpt.vocab, 0, None, id),
            }
        }
    };
    if start > config.steps {
        return Err(Error::InvalidArgument(format!(
            "checkpoint is at step {start}, beyond the configured {} steps",
            config.steps
        )));
    }
    check_coverage(model.config.vocab_size, &vocab, data.train, "training")?;
    check_coverage(model.config.vocab_size, &vocab, data.val, "validation")?;
    if let Some(m) = data.monitor {
        check_coverage(model.config.vocab_size, &vocab, m, "monitor")?;
    }
    model.config.dropout_encoder = config.encoder_dropout;
    model.config.dropout_embedding = config.other_dropout;
    model.config.dropout_decoder = config.other_dropout;
    let mut adam = adam.take().unwrap_or_else(|| Adam::new(model.params.tensors()));
    let provenance = Provenance {
        config_hash: config_hash(&model.config, config),
        parent,
    };

    let mcc_of = |m: &Mslm<T>| data.monitor.map(|g| monitor_mcc(m, g)).transpose();
    let initial_val_bpc = corpus_bpc(&model, data.val, config.batch_size)?;
    let mut log = vec![MetricsRow {
        step: start,
        train_bpc: None,
        val_bpc: initial_val_bpc,
        mcc: mcc_of(&model)?,
    }];
    let mut checkpoints: Vec<Checkpoint<T>> = Vec::new();
    let (mut best, mut last): (Option<Checkpoint<T>>, Option<Checkpoint<T>>) = (None, None);
    let mut clipped_steps = Vec::new();
    let (mut nll, mut chars) = (0.0f64, 0usize);

    for step in start + 1..=config.steps {
        let picked = batch_indices(data.train.len(), config.batch_size, config.seed, step);
        let lines: Vec<&[usize]> = picked.iter().map(|&i| data.train[i].ids.as_slice()).collect();
        let mode = Mode::Train {
            seed: dropout_seed(config.seed, step),
        };
        let (loss, mut grads) = model.loss_and_grad(&lines, mode)?;
        if !loss.loss.is_finite() {
            return Err(Error::NonFinite { step });
        }
        let norm = clip_grad_norm(&mut grads, config.clip_norm);
        if !norm.is_finite() {
            return Err(Error::NonFinite { step });
        }
        if norm > config.clip_norm {
            clipped_steps.push(step);
        }
        adam.step(model.params.tensors_mut(), &grads, lr_at(config, step)?);
        nll -= loss.total_log_marginal.f64();
        chars += loss.total_chars;

        if step % config.checkpoint_every == 0 || step == config.steps {
            if !model.params.is_finite() {
                return Err(Error::NonFinite { step });
            }
            let val_bpc = corpus_bpc(&model, data.val, config.batch_size)?;
            if !val_bpc.is_finite() {
                return Err(Error::NonFinite { step });
            }
            log.push(MetricsRow {
                step,
                train_bpc: Some(nll / (chars as f64 * std::f64::consts::LN_2)),
                val_bpc,
                mcc: mcc_of(&model)?,
            });
            (nll, chars) = (0.0, 0);
            let ckpt = Checkpoint {
                step,
                model: model.clone(),
                vocab: vocab.clone(),
                val_bpc,
                train_config: config.clone(),
                optimizer: Some(adam.clone()),
                provenance: provenance.clone(),
            };
            match keep {
                Keep::All => checkpoints.push(ckpt),
                Keep::BestAndLast => {
                    if best.as_ref().is_none_or(|b: &Checkpoint<T>| ckpt.val_bpc < b.val_bpc) {
                        best = Some(ckpt.clone());
                    }
                    last = Some(ckpt);
                }
            }
        }
    }
    if let Some(b) = best {
        let l = last.expect("set together with best");
        if l.step != b.step {
            checkpoints.push(b);
        }
        checkpoints.push(l);
    }
    Ok(RunOutput {
        initial_val_bpc,
        checkpoints,
        log,
        clipped_steps,
    })
}
