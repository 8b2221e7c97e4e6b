use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Train from a fresh model, or resume an interrupted run from its
    /// checkpoint (step counter and optimizer state continue).
    Pretrain,
    /// Start from a checkpoint with the step counter at 0 and fresh
    /// optimizer state.
    Finetune,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Pretrain => "pretrain",
            TrainMode::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(TrainMode::Pretrain),
            "finetune" => Ok(TrainMode::Finetune),
            _ => Err(Error::InvalidArgument(format!("unknown training mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub encoder_dropout: f64,
    /// Dropout on the encoder input and on the decoder's start symbol and
    /// context.
    pub other_dropout: f64,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
}

impl TrainConfig {
    /// Multilingual pre-training: 16,768 steps with 1024 warmup steps and
    /// checkpoints every 128. The learning rate and encoder dropout are
    /// swept over [`SweepGrid::pretrain`].
    pub fn pretrain(peak_lr: f64, encoder_dropout: f64) -> Self {
        TrainConfig {
            steps: 16_768,
            warmup_steps: 1024,
            peak_lr,
            encoder_dropout,
            other_dropout: 0.0625,
            batch_size: 32,
            checkpoint_every: 128,
            seed: 0,
            mode: TrainMode::Pretrain,
            clip_norm: 1.0,
        }
    }

    /// Target-language training for a corpus of `lines` lines: 8192 steps
    /// (4096 for 256 and 512 lines, which also warm up for 512 steps only),
    /// checkpoints every 64 steps up to 512 lines and every 128 beyond.
    pub fn target(lines: usize, peak_lr: f64, encoder_dropout: f64, mode: TrainMode) -> Self {
        let small = lines <= 512;
        TrainConfig {
            steps: if small { 4096 } else { 8192 },
            warmup_steps: if small { 512 } else { 1024 },
            peak_lr,
            encoder_dropout,
            other_dropout: 0.0625,
            batch_size: 32,
            checkpoint_every: if small { 64 } else { 128 },
            seed: 0,
            mode,
            clip_norm: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.steps == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return bad("steps, batch_size and checkpoint_every must be positive".into());
        }
        if self.warmup_steps > self.steps {
            return bad(format!(
                "warmup_steps {} exceeds steps {}",
                self.warmup_steps, self.steps
            ));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr {} must be positive", self.peak_lr));
        }
        for (name, p) in [("encoder", self.encoder_dropout), ("other", self.other_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} dropout {p} outside [0, 1)"));
            }
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "steps={}\nwarmup_steps={}\npeak_lr={:?}\nencoder_dropout={:?}\nother_dropout={:?}\nbatch_size={}\n\
             checkpoint_every={}\nseed={}\nmode={}\nclip_norm={:?}\n",
            self.steps,
            self.warmup_steps,
            self.peak_lr,
            self.encoder_dropout,
            self.other_dropout,
            self.batch_size,
            self.checkpoint_every,
            self.seed,
            self.mode.as_str(),
            self.clip_norm
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = crate::kv::parse(text, "train config")?;
        let c = TrainConfig {
            steps: kv.get("steps")?,
            warmup_steps: kv.get("warmup_steps")?,
            peak_lr: kv.get("peak_lr")?,
            encoder_dropout: kv.get("encoder_dropout")?,
            other_dropout: kv.get("other_dropout")?,
            batch_size: kv.get("batch_size")?,
            checkpoint_every: kv.get("checkpoint_every")?,
            seed: kv.get("seed")?,
            mode: TrainMode::parse(&kv.get_str("mode")?)?,
            clip_norm: kv.get("clip_norm")?,
        };
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }
}

/// Linear warmup from 0 to the peak over `warmup_steps`, then linear decay
/// to 0 at `steps`.
pub fn lr_at(config: &TrainConfig, step: usize) -> Result<f64> {
    if step > config.steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} outside the schedule of {} steps",
            config.steps
        )));
    }
    let (s, w, n) = (step as f64, config.warmup_steps as f64, config.steps as f64);
    Ok(if step <= config.warmup_steps {
        if config.warmup_steps == 0 {
            config.peak_lr
        } else {
            config.peak_lr * s / w
        }
    } else {
        config.peak_lr * (n - s) / (n - w)
    })
}

/// Learning rates crossed with encoder dropout rates.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub learning_rates: Vec<f64>,
    pub encoder_dropouts: Vec<f64>,
}

impl SweepGrid {
    pub fn new(learning_rates: Vec<f64>, encoder_dropouts: Vec<f64>) -> Result<Self> {
        if learning_rates.is_empty() || encoder_dropouts.is_empty() {
            return Err(Error::InvalidArgument("sweep grid must not be empty".into()));
        }
        Ok(SweepGrid {
            learning_rates,
            encoder_dropouts,
        })
    }

    /// Eight evenly spaced rates on [0.0005, 0.0009] and encoder dropout
    /// 12.5% or 25%.
    pub fn pretrain() -> Self {
        SweepGrid {
            learning_rates: (0..8).map(|i| 0.0005 + 0.0004 * i as f64 / 7.0).collect(),
            encoder_dropouts: vec![0.125, 0.25],
        }
    }

    /// Grid tuned for 256 target lines.
    pub fn target_256() -> Self {
        SweepGrid {
            learning_rates: vec![5e-5, 7.5e-5, 1e-4, 2.5e-4, 5e-4],
            encoder_dropouts: vec![0.125, 0.25, 0.5],
        }
    }

    /// Grid tuned for 2048 target lines.
    pub fn target_2048() -> Self {
        SweepGrid {
            learning_rates: vec![1e-4, 2.5e-4, 5e-4, 7.5e-4, 1e-3],
            encoder_dropouts: vec![0.125, 0.25, 0.5],
        }
    }

    /// Grid tuned for the full target corpus.
    pub fn target_full() -> Self {
        SweepGrid {
            learning_rates: vec![1e-4, 2.5e-4, 5e-4, 7.5e-4, 1e-3],
            encoder_dropouts: vec![0.065, 0.125, 0.25],
        }
    }

    /// Grid points in row-major (learning rate, dropout) order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.learning_rates
            .iter()
            .flat_map(|&lr| self.encoder_dropouts.iter().map(move |&d| (lr, d)))
            .collect()
    }
}

/// Of the tuned sizes, the one closest to `size` on a log scale (ties go
/// to the smaller size). Hyperparameters chosen there are reused at
/// `size`.
pub fn closest_tuned_size(size: usize, tuned: &[usize]) -> Option<usize> {
    let ls = (size.max(1) as f64).ln();
    tuned.iter().copied().min_by(|&a, &b| {
        let da = ((a.max(1) as f64).ln() - ls).abs();
        let db = ((b.max(1) as f64).ln() - ls).abs();
        da.partial_cmp(&db).expect("finite").then(a.cmp(&b))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_fixtures() {
        let c = TrainConfig::pretrain(1e-3, 0.125);
        assert_eq!(lr_at(&c, 0).unwrap(), 0.0);
        assert_eq!(lr_at(&c, 1024).unwrap(), 1e-3);
        assert!((lr_at(&c, 8896).unwrap() - 0.5e-3).abs() < 1e-15);
        assert_eq!(lr_at(&c, 16_768).unwrap(), 0.0);
        assert!(lr_at(&c, 16_769).is_err());
        assert!((lr_at(&c, 512).unwrap() - 0.5e-3).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_continuous_and_peaks_at_warmup() {
        let mut c = TrainConfig::target(256, 2.0, 0.1, TrainMode::Finetune);
        c.steps = 100;
        c.warmup_steps = 30;
        let lrs: Vec<f64> = (0..=100).map(|s| lr_at(&c, s).unwrap()).collect();
        let peak = lrs.iter().cloned().fold(0.0, f64::max);
        assert_eq!(peak, lrs[30]);
        for w in lrs.windows(2) {
            assert!((w[1] - w[0]).abs() <= 2.0 / 30.0 + 1e-12);
        }
    }

    #[test]
    fn zero_warmup_starts_at_peak() {
        let mut c = TrainConfig::pretrain(1.0, 0.1);
        c.warmup_steps = 0;
        c.steps = 10;
        assert_eq!(lr_at(&c, 0).unwrap(), 1.0);
        assert_eq!(lr_at(&c, 5).unwrap(), 0.5);
    }

    #[test]
    fn config_text_round_trip() {
        let c = TrainConfig::target(4096, 2.5e-4, 0.25, TrainMode::Finetune);
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(TrainConfig::from_text(&(c.to_text() + "extra=1\n")).is_err());
        let mut bad = c.clone();
        bad.warmup_steps = bad.steps + 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn presets() {
        let g = SweepGrid::pretrain();
        assert_eq!(g.points().len(), 16);
        assert_eq!(g.learning_rates[0], 0.0005);
        assert!((g.learning_rates[7] - 0.0009).abs() < 1e-15);
        assert_eq!(SweepGrid::target_256().points().len(), 15);
        assert_eq!(TrainConfig::target(512, 1e-4, 0.1, TrainMode::Finetune).steps, 4096);
        assert_eq!(TrainConfig::target(1024, 1e-4, 0.1, TrainMode::Finetune).checkpoint_every, 128);
        assert!(SweepGrid::new(vec![], vec![0.1]).is_err());
    }

    #[test]
    fn closest_size_on_log_scale() {
        let tuned = [256, 2048, 47_729];
        assert_eq!(closest_tuned_size(512, &tuned), Some(256));
        assert_eq!(closest_tuned_size(1024, &tuned), Some(2048));
        assert_eq!(closest_tuned_size(8192, &tuned), Some(2048));
        assert_eq!(closest_tuned_size(16_384, &tuned), Some(47_729));
    }
}
