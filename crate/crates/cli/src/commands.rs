use std::path::{Path, PathBuf};

use seglm_core::corpus::{
    build_vocab, concat_corpora, corpus_stats, downsample, encode_line, extend_vocab, preprocess as run_pipeline,
    remove_overlap, CharVocab, CleaningRules, EncodedLine, RawCorpus, StatsReport,
};
use seglm_core::embed_init::{init_specials, normalize_rows, train_cbow, EmbeddingTable};
use seglm_core::eval::{self, Aggregation};
use seglm_core::train::{
    corpus_bpc, segment_lines, sweep as run_sweep, train_run, Checkpoint, Init, Keep, RunOutput, TrainConfig,
    TrainData, TrainMode,
};
use seglm_core::{Checkpoint32, Mslm32};

use crate::config::{preset_grid, ExperimentConfig};
use crate::{CliError, CliResult, EmbedInitArgs, EvaluateArgs, PreprocessArgs, SegmentArgs, StatsArgs, SweepArgs, TrainArgs};

pub(crate) fn read_corpus(path: &Path) -> CliResult<RawCorpus> {
    Ok(RawCorpus::read(path)?)
}

/// Encodes the non-blank lines of `corpus`.
pub(crate) fn encode_all(vocab: &CharVocab, corpus: &RawCorpus, gold: bool) -> CliResult<Vec<EncodedLine>> {
    corpus
        .lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| encode_line(vocab, l, gold).map_err(CliError::from))
        .collect()
}

pub(crate) fn resolve_seed(flag: Option<u64>, config: &ExperimentConfig) -> u64 {
    flag.or(config.seed).unwrap_or(0)
}

pub(crate) fn output_dir(config: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = config
        .output_dir
        .clone()
        .ok_or_else(|| CliError::Usage("config is missing output_dir".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Normalized CBOW embeddings for `vocab` trained on `train`, with specials
/// and unseen characters randomly initialized.
pub(crate) fn cbow_table(
    config: &ExperimentConfig,
    vocab: &CharVocab,
    train: &[EncodedLine],
    dim: usize,
    seed: u64,
) -> CliResult<EmbeddingTable> {
    let run = train_cbow(train, vocab, dim, config.embed.window, config.embed.epochs, seed)?;
    Ok(init_specials(&normalize_rows(&run.table), vocab, seed ^ 0x5eed)?)
}

/// A fresh model for `train_raw`: the vocabulary of `[data] vocab` extended
/// to the corpus (or built from it), and embeddings from `[data]
/// embeddings` or trained with CBOW.
pub(crate) fn fresh_model(config: &ExperimentConfig, train_raw: &RawCorpus, seed: u64) -> CliResult<(Mslm32, CharVocab)> {
    let (vocab, base) = match &config.data.vocab {
        Some(p) => {
            let base = CharVocab::read(p)?;
            (extend_vocab(&base, train_raw).0, Some(base))
        }
        None => (build_vocab(train_raw)?, None),
    };
    let mut model = Mslm32::new(config.model_config(vocab.len())?, seed)?;
    let table = match &config.data.embeddings {
        Some(p) => {
            let t = EmbeddingTable::read(p)?;
            let t = match &base {
                Some(b) if b.len() != vocab.len() => {
                    t.to_tensor::<f32>(b)?;
                    t.extend_to(&vocab)?
                }
                _ => t,
            };
            init_specials_if_extended(t, &vocab, seed)?
        }
        None => {
            let enc = encode_all(&vocab, train_raw, false)?;
            cbow_table(config, &vocab, &enc, model.config.hidden, seed)?
        }
    };
    if table.dim() != model.config.hidden {
        return Err(CliError::Usage(format!(
            "embeddings have dimension {} but the model's hidden size is {}",
            table.dim(),
            model.config.hidden
        )));
    }
    model.set_embeddings(&table.to_tensor(&vocab)?)?;
    Ok((model, vocab))
}

fn init_specials_if_extended(t: EmbeddingTable, vocab: &CharVocab, seed: u64) -> CliResult<EmbeddingTable> {
    if t.counts().is_some() {
        Ok(init_specials(&t, vocab, seed ^ 0x5eed)?)
    } else {
        Ok(t)
    }
}

/// Extends a checkpoint's vocabulary and embedding rows to cover
/// `train_raw`. New rows are randomly initialized.
pub(crate) fn adapt_checkpoint(mut ckpt: Checkpoint32, train_raw: &RawCorpus, seed: u64) -> CliResult<Checkpoint32> {
    let (vocab, added) = extend_vocab(&ckpt.vocab, train_raw);
    if !added.is_empty() {
        ckpt.model.extend_vocab(vocab.len(), seed ^ 0xe47e)?;
        ckpt.vocab = vocab;
        ckpt.optimizer = None;
    }
    Ok(ckpt)
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    std::fs::write(path, contents).map_err(|e| seglm_core::Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(())
}

pub(crate) fn preprocess(a: &PreprocessArgs, seed: u64, dry: bool) -> CliResult {
    let parts = a.inputs.iter().map(|p| read_corpus(p)).collect::<CliResult<Vec<_>>>()?;
    let heldout = a.heldout.iter().map(|p| read_corpus(p)).collect::<CliResult<Vec<_>>>()?;
    let mut rules = if a.noisy_web {
        CleaningRules::noisy_web()
    } else {
        CleaningRules::default()
    };
    rules.max_chars = a.max_chars;
    rules.collapse_whitespace = !a.exact_overlap;
    if let Some(b) = &a.blocklist {
        rules.blocklist = read_corpus(b)?.lines.into_iter().filter(|l| !l.trim().is_empty()).collect();
    }
    if a.max_chars == 0 {
        return Err(CliError::Usage("--max-chars must be positive".into()));
    }
    if dry {
        println!("preprocess: {} input file(s), {} held-out file(s)", parts.len(), heldout.len());
        return Ok(());
    }
    let input = concat_corpora(&parts);
    let mut out = run_pipeline(&input, &rules)?;
    for h in &heldout {
        out = remove_overlap(&out, h, rules.collapse_whitespace);
    }
    if let Some(n) = a.downsample {
        out = downsample(&out, n, seed)?;
    }
    out.write(&a.out)?;
    eprintln!("{} lines in, {} lines out", input.len(), out.len());
    Ok(())
}

pub(crate) fn stats(a: &StatsArgs) -> CliResult {
    println!("File\t{}", StatsReport::HEADER);
    for p in &a.inputs {
        let c = read_corpus(p)?;
        let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        println!("{name}\t{}", corpus_stats(&c).tsv_row());
    }
    Ok(())
}

pub(crate) fn embed_init(a: &EmbedInitArgs, seed: u64, dry: bool) -> CliResult {
    let raw = read_corpus(&a.input)?;
    let vocab = match &a.vocab {
        Some(p) => extend_vocab(&CharVocab::read(p)?, &raw).0,
        None => build_vocab(&raw)?,
    };
    if a.dim == 0 || a.window == 0 || a.epochs == 0 {
        return Err(CliError::Usage("--dim, --window and --epochs must be positive".into()));
    }
    if dry {
        println!("embed-init: {} lines, vocabulary of {} entries", raw.len(), vocab.len());
        return Ok(());
    }
    let enc = encode_all(&vocab, &raw, false)?;
    let run = train_cbow(&enc, &vocab, a.dim, a.window, a.epochs, seed)?;
    let table = init_specials(&normalize_rows(&run.table), &vocab, seed ^ 0x5eed)?;
    table.write(&a.out)?;
    vocab.write(&a.vocab_out)?;
    for (e, l) in run.epoch_loss.iter().enumerate() {
        eprintln!("epoch {}\tloss {l:.4}", e + 1);
    }
    Ok(())
}

/// Data of a training run, encoded with `vocab`.
pub(crate) struct Encoded {
    pub train: Vec<EncodedLine>,
    pub val: Vec<EncodedLine>,
    pub monitor: Option<Vec<EncodedLine>>,
}

impl Encoded {
    pub fn new(config: &ExperimentConfig, vocab: &CharVocab, train: &RawCorpus) -> CliResult<Self> {
        let val = read_corpus(config.require(&config.data.val, "[data] val")?)?;
        let monitor = match &config.data.monitor {
            Some(p) => Some(encode_all(vocab, &read_corpus(p)?, true)?),
            None => None,
        };
        Ok(Encoded {
            train: encode_all(vocab, train, false)?,
            val: encode_all(vocab, &val, false)?,
            monitor,
        })
    }

    pub fn data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.train,
            val: &self.val,
            monitor: self.monitor.as_deref(),
        }
    }
}

fn write_run(dir: &Path, out: &RunOutput<f32>, save_all: bool) -> CliResult {
    let best = out.best()?;
    best.save(dir.join("best.ckpt"))?;
    out.checkpoints.last().expect("at least one checkpoint").save(dir.join("last.ckpt"))?;
    if save_all {
        for c in &out.checkpoints {
            c.save(dir.join(format!("step-{:06}.ckpt", c.step)))?;
        }
    }
    best.vocab.write(dir.join("vocab.txt"))?;
    write_file(&dir.join("metrics.tsv"), out.metrics_tsv())?;
    println!("initial val bpc\t{:.4}", out.initial_val_bpc);
    println!("best step\t{}", best.step);
    println!("best val bpc\t{:.4}", best.val_bpc);
    if !out.clipped_steps.is_empty() {
        eprintln!("gradient clipped at {} step(s)", out.clipped_steps.len());
    }
    Ok(())
}

pub(crate) fn train(a: &TrainArgs, seed: Option<u64>, dry: bool, finetune: bool) -> CliResult {
    let config = ExperimentConfig::load(&a.config)?;
    let seed = resolve_seed(seed, &config);
    let mode = if finetune { TrainMode::Finetune } else { TrainMode::Pretrain };
    let tc = config.train_config(mode, seed)?;
    let train_path = config.require(&config.data.train, "[data] train")?;
    config.require(&config.data.val, "[data] val")?;
    if finetune && a.init.is_none() {
        return Err(CliError::Usage("finetune needs --init <checkpoint>".into()));
    }
    if let Some(p) = a.init.as_ref().filter(|p| !p.exists()) {
        return Err(CliError::Usage(format!("{} does not exist", p.display())));
    }
    if dry {
        println!("{} config ok: {} steps, peak lr {}", mode.as_str(), tc.steps, tc.peak_lr);
        return Ok(());
    }
    let dir = output_dir(&config)?;
    let train_raw = read_corpus(train_path)?;
    let init = match &a.init {
        Some(p) => {
            let ck = adapt_checkpoint(Checkpoint::load(p)?, &train_raw, seed)?;
            Init::From(ck)
        }
        None => {
            let (model, vocab) = fresh_model(&config, &train_raw, seed)?;
            Init::Fresh { model, vocab }
        }
    };
    let vocab = match &init {
        Init::From(c) => c.vocab.clone(),
        Init::Fresh { vocab, .. } => vocab.clone(),
    };
    let enc = Encoded::new(&config, &vocab, &train_raw)?;
    let keep = if a.save_all { Keep::All } else { Keep::BestAndLast };
    let out = train_run(&tc, init, &enc.data(), keep)?;
    write_run(&dir, &out, a.save_all)
}

pub(crate) fn segment_file(ckpt: &Checkpoint32, input: &RawCorpus) -> CliResult<String> {
    let mut out = String::new();
    let keep: Vec<&String> = input.lines.iter().filter(|l| !l.trim().is_empty()).collect();
    let enc = encode_all(&ckpt.vocab, input, false)?;
    let segs = segment_lines(&ckpt.model, &enc, 32)?;
    let mut it = enc.iter().zip(&segs);
    debug_assert_eq!(keep.len(), enc.len());
    for l in &input.lines {
        if !l.trim().is_empty() {
            let (e, s) = it.next().expect("one segmentation per non-blank line");
            out.push_str(&s.render(&e.chars()));
        }
        out.push('\n');
    }
    Ok(out)
}

pub(crate) fn segment(a: &SegmentArgs, dry: bool) -> CliResult {
    let ckpt = Checkpoint32::load(&a.ckpt)?;
    let input = read_corpus(&a.input)?;
    if dry {
        println!("segment: {} lines with a {}-layer model", input.len(), ckpt.model.config.layers);
        return Ok(());
    }
    write_file(&a.out, segment_file(&ckpt, &input)?)
}

pub(crate) fn evaluate(a: &EvaluateArgs, dry: bool) -> CliResult {
    let agg = if a.macro_average { Aggregation::Macro } else { Aggregation::Micro };
    if dry {
        for p in [&a.pred, &a.gold] {
            read_corpus(p)?;
        }
        println!("evaluate: inputs readable");
        return Ok(());
    }
    let mut report = eval::evaluate(&a.pred, &a.gold, agg)?;
    if let Some(c) = &a.ckpt {
        let ckpt = Checkpoint32::load(c)?;
        let gold = encode_all(&ckpt.vocab, &read_corpus(&a.gold)?, true)?;
        report.bpc = Some(corpus_bpc(&ckpt.model, &gold, 32)?);
    }
    print!("{report}");
    Ok(())
}

pub(crate) fn sweep(a: &SweepArgs, seed: Option<u64>, dry: bool) -> CliResult {
    let config = ExperimentConfig::load(&a.config)?;
    let seed = resolve_seed(seed, &config);
    let grid = match &a.preset {
        Some(p) => preset_grid(p)?,
        None => config
            .sweep_grid()?
            .ok_or_else(|| CliError::Usage("no [sweep] section and no --preset".into()))?,
    };
    let mode = if a.init.is_some() { TrainMode::Finetune } else { TrainMode::Pretrain };
    let base: TrainConfig = config.train_config(mode, seed)?;
    let train_path = config.require(&config.data.train, "[data] train")?;
    config.require(&config.data.val, "[data] val")?;
    if dry {
        println!("sweep config ok: {} grid points", grid.points().len());
        return Ok(());
    }
    let dir = output_dir(&config)?;
    let train_raw = read_corpus(train_path)?;
    let init = match &a.init {
        Some(p) => Init::From(adapt_checkpoint(Checkpoint::load(p)?, &train_raw, seed)?),
        None => {
            let (model, vocab) = fresh_model(&config, &train_raw, seed)?;
            Init::Fresh { model, vocab }
        }
    };
    let vocab = match &init {
        Init::From(c) => c.vocab.clone(),
        Init::Fresh { vocab, .. } => vocab.clone(),
    };
    let enc = Encoded::new(&config, &vocab, &train_raw)?;
    let gold = match &config.data.eval_gold {
        Some(p) => Some(encode_all(&vocab, &read_corpus(p)?, true)?),
        None => None,
    };
    let report = run_sweep(&grid, &base, &init, &enc.data(), gold.as_deref(), a.jobs.max(1))?;
    write_file(&dir.join("sweep.tsv"), report.tsv())?;
    print!("{}", report.tsv());
    if let Some(best) = &report.best {
        best.save(dir.join("best.ckpt"))?;
        best.vocab.write(dir.join("vocab.txt"))?;
    }
    if let Some(s) = report.top4() {
        println!("top-{} F1 by bpc\t{s}", s.rows);
    }
    if report.winner.is_none() {
        return Err(CliError::Core(seglm_core::Error::Data(
            "every grid point failed; see sweep.tsv".into(),
        )));
    }
    Ok(())
}
