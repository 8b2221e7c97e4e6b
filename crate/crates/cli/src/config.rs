//! Experiment files: TOML with a few flat sections.
//!
//! ```toml
//! seed = 1
//! output_dir = "runs/multi"
//!
//! [data]
//! train = "train.anlp"
//! val = "dev.anlp"
//! eval_gold = "quc.gold"      # optional, space-segmented
//!
//! [model]
//! hidden = 256
//!
//! [train]
//! peak_lr = 0.0007
//!
//! [sweep]
//! preset = "pretrain"
//! ```
//!
//! Relative paths are resolved against the file's directory and must exist
//! when the file is loaded (except `output_dir`).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use seglm_core::mslm::ModelConfig;
use seglm_core::train::{SweepGrid, TrainConfig, TrainMode};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub embed: EmbedSection,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub ladder: LadderSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Gold-segmented lines whose MCC is logged during training.
    pub monitor: Option<PathBuf>,
    /// Gold-segmented evaluation set (sweep F1, ladder).
    pub eval_gold: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub feedforward: Option<usize>,
    pub heads: Option<usize>,
    pub max_seg_len: Option<usize>,
    pub max_len: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: Option<usize>,
    pub warmup_steps: Option<usize>,
    pub peak_lr: Option<f64>,
    pub encoder_dropout: Option<f64>,
    pub other_dropout: Option<f64>,
    pub batch_size: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSection {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

fn default_window() -> usize {
    5
}

fn default_epochs() -> usize {
    32
}

impl Default for EmbedSection {
    fn default() -> Self {
        EmbedSection {
            window: default_window(),
            epochs: default_epochs(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `pretrain`, `target-256`, `target-2048` or `target-full`.
    pub preset: Option<String>,
    pub learning_rates: Option<Vec<f64>>,
    pub encoder_dropouts: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    pub sizes: Option<Vec<usize>>,
    /// `config` (the [train] section at every size) or `by-size` (steps,
    /// warmup and checkpoint interval chosen by target size).
    pub schedule: Option<String>,
    /// Hyperparameters tuned at particular sizes; every ladder size uses the
    /// entry closest on a log scale.
    #[serde(default)]
    pub tuned: Vec<TunedPoint>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunedPoint {
    pub size: usize,
    pub peak_lr: f64,
    pub encoder_dropout: f64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut c: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let d = &mut c.data;
        for p in [
            &mut d.train,
            &mut d.val,
            &mut d.monitor,
            &mut d.eval_gold,
            &mut d.vocab,
            &mut d.embeddings,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(CliError::Usage(format!("{}: {} does not exist", path.display(), p.display())));
            }
        }
        if let Some(o) = c.output_dir.as_mut().filter(|o| o.is_relative()) {
            *o = base.join(&*o);
        }
        c.model_config(8)?;
        c.train_config(TrainMode::Pretrain, 0)?;
        c.sweep_grid()?;
        Ok(c)
    }

    pub fn require<'a>(&self, p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
        p.as_deref().ok_or_else(|| CliError::Usage(format!("config is missing {what}")))
    }

    /// Model architecture for a vocabulary of `vocab_size` entries: the
    /// standard architecture with any overrides from `[model]`.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig, CliError> {
        let m = &self.model;
        let mut c = ModelConfig::standard(vocab_size);
        if let Some(h) = m.hidden {
            c.hidden = h;
            c.feedforward = 2 * h;
        }
        c.layers = m.layers.unwrap_or(c.layers);
        c.feedforward = m.feedforward.unwrap_or(c.feedforward);
        c.heads = m.heads.unwrap_or(c.heads);
        c.max_seg_len = m.max_seg_len.unwrap_or(c.max_seg_len);
        c.max_len = m.max_len.unwrap_or(c.max_len);
        c.validate().map_err(|e| CliError::Usage(format!("[model]: {e}")))?;
        Ok(c)
    }

    /// The pre-training schedule with any overrides from `[train]`.
    pub fn train_config(&self, mode: TrainMode, seed: u64) -> Result<TrainConfig, CliError> {
        let mut c = TrainConfig::pretrain(7e-4, 0.125);
        self.apply_train(&mut c);
        c.mode = mode;
        c.seed = seed;
        c.validate().map_err(|e| CliError::Usage(format!("[train]: {e}")))?;
        Ok(c)
    }

    pub fn apply_train(&self, c: &mut TrainConfig) {
        let t = &self.train;
        c.steps = t.steps.unwrap_or(c.steps);
        c.warmup_steps = t.warmup_steps.unwrap_or(c.warmup_steps);
        c.peak_lr = t.peak_lr.unwrap_or(c.peak_lr);
        c.encoder_dropout = t.encoder_dropout.unwrap_or(c.encoder_dropout);
        c.other_dropout = t.other_dropout.unwrap_or(c.other_dropout);
        c.batch_size = t.batch_size.unwrap_or(c.batch_size);
        c.checkpoint_every = t.checkpoint_every.unwrap_or(c.checkpoint_every);
        c.clip_norm = t.clip_norm.unwrap_or(c.clip_norm);
    }

    pub fn sweep_grid(&self) -> Result<Option<SweepGrid>, CliError> {
        let Some(s) = &self.sweep else { return Ok(None) };
        let mut grid = match s.preset.as_deref() {
            None => SweepGrid {
                learning_rates: vec![],
                encoder_dropouts: vec![],
            },
            Some(p) => preset_grid(p)?,
        };
        if let Some(l) = &s.learning_rates {
            grid.learning_rates = l.clone();
        }
        if let Some(d) = &s.encoder_dropouts {
            grid.encoder_dropouts = d.clone();
        }
        SweepGrid::new(grid.learning_rates, grid.encoder_dropouts)
            .map(Some)
            .map_err(|e| CliError::Usage(format!("[sweep]: {e}")))
    }
}

pub fn preset_grid(name: &str) -> Result<SweepGrid, CliError> {
    Ok(match name {
        "pretrain" => SweepGrid::pretrain(),
        "target-256" => SweepGrid::target_256(),
        "target-2048" => SweepGrid::target_2048(),
        "target-full" => SweepGrid::target_full(),
        other => {
            return Err(CliError::Usage(format!(
                "unknown sweep preset {other:?} (expected pretrain, target-256, target-2048 or target-full)"
            )))
        }
    })
}
