//! Target-size ladder: every model is evaluated zero-shot and after
//! training on nested samples of the target corpus of increasing size.

use std::path::PathBuf;

use clap::Args;

use seglm_core::corpus::{build_vocab, RawCorpus};
use seglm_core::train::{
    closest_tuned_size, segmentation_report, size_ladder, train_run, Checkpoint, Init, Keep, TrainConfig, TrainMode,
};
use seglm_core::{Checkpoint32, Mslm32};

use crate::commands::{adapt_checkpoint, encode_all, fresh_model, output_dir, read_corpus, resolve_seed, write_file, Encoded};
use crate::config::ExperimentConfig;
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct LadderArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Target training sizes, comma separated; `full` is the whole corpus.
    /// The zero-shot column (size 0) is always included.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<String>>,
    /// Pre-trained checkpoint, optionally labelled as `label=path`. Repeatable.
    #[arg(long)]
    pub pretrained: Vec<String>,
    /// Add a row for a model trained from scratch on each target sample.
    #[arg(long)]
    pub baseline: bool,
    /// Table output (default: `ladder.tsv` in the output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Target sizes of the published ladder: 2^8 through 2^15, then the full set.
const DEFAULT_SIZES: [usize; 8] = [256, 512, 1024, 2048, 4096, 8192, 16_384, 32_768];

enum Size {
    Lines(usize),
    Full,
}

fn parse_sizes(raw: &[String]) -> CliResult<Vec<Size>> {
    raw.iter()
        .map(|s| match s.trim() {
            "full" => Ok(Size::Full),
            t => t
                .parse()
                .map(Size::Lines)
                .map_err(|_| CliError::Usage(format!("bad ladder size {t:?}"))),
        })
        .collect()
}

fn parse_model(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((label, path)) => (label.to_owned(), PathBuf::from(path)),
        None => {
            let p = PathBuf::from(arg);
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (label, p)
        }
    }
}

fn training_config(config: &ExperimentConfig, size: usize, seed: u64) -> CliResult<TrainConfig> {
    let mut tc = match config.ladder.schedule.as_deref().unwrap_or("config") {
        "config" => config.train_config(TrainMode::Finetune, seed)?,
        "by-size" => {
            let mut tc = TrainConfig::target(size, 0.0, 0.0, TrainMode::Finetune);
            let t = &config.train;
            tc.peak_lr = t.peak_lr.unwrap_or(5e-4);
            tc.encoder_dropout = t.encoder_dropout.unwrap_or(0.125);
            tc.other_dropout = t.other_dropout.unwrap_or(tc.other_dropout);
            tc.batch_size = t.batch_size.unwrap_or(tc.batch_size);
            tc.clip_norm = t.clip_norm.unwrap_or(tc.clip_norm);
            tc.seed = seed;
            tc
        }
        other => return Err(CliError::Usage(format!("unknown ladder schedule {other:?}"))),
    };
    let tuned = &config.ladder.tuned;
    let sizes: Vec<usize> = tuned.iter().map(|t| t.size).collect();
    if let Some(s) = closest_tuned_size(size, &sizes) {
        let p = tuned.iter().find(|t| t.size == s).expect("chosen from the list");
        tc.peak_lr = p.peak_lr;
        tc.encoder_dropout = p.encoder_dropout;
    }
    tc.validate().map_err(|e| CliError::Usage(format!("ladder at size {size}: {e}")))?;
    Ok(tc)
}

fn f1_of(ckpt_model: &Mslm32, vocab: &seglm_core::corpus::CharVocab, gold: &RawCorpus) -> CliResult<f64> {
    let g = encode_all(vocab, gold, true)?;
    Ok(segmentation_report(ckpt_model, &g)?.f1)
}

/// Formats F1 as a percentage with one decimal, as in the published tables.
fn pct(f1: f64) -> String {
    format!("{:.1}", 100.0 * f1)
}

pub(crate) fn ladder(a: &LadderArgs, seed: Option<u64>, dry: bool) -> CliResult {
    let config = ExperimentConfig::load(&a.config)?;
    let seed = resolve_seed(seed, &config);
    let train_path = config.require(&config.data.train, "[data] train (target corpus)")?;
    config.require(&config.data.val, "[data] val")?;
    let gold_path = config.require(&config.data.eval_gold, "[data] eval_gold")?;
    let sizes = match (&a.sizes, &config.ladder.sizes) {
        (Some(s), _) => parse_sizes(s)?,
        (None, Some(s)) => s.iter().map(|&n| Size::Lines(n)).collect(),
        (None, None) => DEFAULT_SIZES.iter().map(|&n| Size::Lines(n)).chain([Size::Full]).collect(),
    };
    let models: Vec<(String, PathBuf)> = a.pretrained.iter().map(|s| parse_model(s)).collect();
    if models.is_empty() && !a.baseline {
        return Err(CliError::Usage("ladder needs --pretrained and/or --baseline".into()));
    }
    if let Some((_, p)) = models.iter().find(|(_, p)| !p.exists()) {
        return Err(CliError::Usage(format!("{} does not exist", p.display())));
    }

    let target = read_corpus(train_path)?;
    let mut sizes: Vec<usize> = sizes
        .into_iter()
        .map(|s| match s {
            Size::Lines(n) => n,
            Size::Full => target.len(),
        })
        .filter(|&n| n > 0)
        .collect();
    sizes.sort_unstable();
    sizes.dedup();
    if let Some(&n) = sizes.iter().find(|&&n| n > target.len()) {
        return Err(CliError::Core(seglm_core::Error::Data(format!(
            "ladder size {n} exceeds the target corpus of {} lines",
            target.len()
        ))));
    }
    for &n in &sizes {
        training_config(&config, n, seed)?;
    }
    if dry {
        println!(
            "ladder: {} model(s) x sizes 0,{}",
            models.len() + a.baseline as usize,
            sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
        );
        return Ok(());
    }
    let dir = output_dir(&config)?;
    let gold = read_corpus(gold_path)?;
    let sets = size_ladder(&target, &sizes, seed)?;

    let mut header = vec!["Model".to_owned(), "0".to_owned()];
    header.extend(sizes.iter().map(|&n| {
        if n == target.len() {
            format!("{n} (full)")
        } else {
            n.to_string()
        }
    }));
    let mut table = vec![header.join("\t")];

    let mut rows: Vec<(String, Option<PathBuf>)> = models.into_iter().map(|(l, p)| (l, Some(p))).collect();
    if a.baseline {
        rows.push(("Monolingual".to_owned(), None));
    }
    for (label, path) in rows {
        let mut cells = vec![label.clone()];
        // zero-shot: no target data, no gradient steps
        let zero = match &path {
            Some(p) => {
                let ck = Checkpoint32::load(p)?;
                f1_of(&ck.model, &ck.vocab, &gold)?
            }
            None => {
                let vocab = build_vocab(&target)?;
                let model = Mslm32::new(config.model_config(vocab.len())?, seed)?;
                f1_of(&model, &vocab, &gold)?
            }
        };
        eprintln!("{label}\t0\t{}", pct(zero));
        cells.push(pct(zero));
        for (set, &n) in sets.iter().zip(&sizes) {
            let tc = training_config(&config, n, seed)?;
            let init = match &path {
                Some(p) => Init::From(adapt_checkpoint(Checkpoint::load(p)?, set, seed)?),
                None => {
                    let (model, vocab) = fresh_model(&config, set, seed)?;
                    Init::Fresh { model, vocab }
                }
            };
            let vocab = match &init {
                Init::From(c) => c.vocab.clone(),
                Init::Fresh { vocab, .. } => vocab.clone(),
            };
            let enc = Encoded::new(&config, &vocab, set)?;
            let out = train_run(&tc, init, &enc.data(), Keep::BestAndLast)?;
            let best = out.best()?;
            let f1 = f1_of(&best.model, &best.vocab, &gold)?;
            eprintln!("{label}\t{n}\t{}", pct(f1));
            cells.push(pct(f1));
        }
        table.push(cells.join("\t"));
    }
    let text = table.join("\n") + "\n";
    let out = a.out.clone().unwrap_or_else(|| dir.join("ladder.tsv"));
    write_file(&out, &text)?;
    print!("{text}");
    Ok(())
}
