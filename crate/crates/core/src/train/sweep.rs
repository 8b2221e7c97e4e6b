use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::checkpoint::Checkpoint;
use super::config::{SweepGrid, TrainConfig};
use super::run::{segmentation_report, train_run, Init, Keep, TrainData};
use crate::corpus::{downsample, EncodedLine, RawCorpus};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Result of one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub learning_rate: f64,
    pub encoder_dropout: f64,
    /// The run's error message if it failed.
    pub outcome: std::result::Result<SweepPoint, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub best_step: usize,
    pub best_val_bpc: f64,
    /// Span F1 of the best checkpoint, when gold data was supplied.
    pub f1: Option<f64>,
}

/// Spread of F1 over the best rows by bpc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub rows: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub stdev: f64,
}

impl Spread {
    /// `stdev / mean` as a percentage.
    pub fn relative_pct(&self) -> f64 {
        if self.mean == 0.0 {
            0.0
        } else {
            100.0 * self.stdev / self.mean
        }
    }
}

impl fmt::Display for Spread {
    /// F1 in percent, e.g. `34.2 ± 0.6 (1.8%)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.1} ± {:.1} ({:.1}%)",
            100.0 * self.mean,
            100.0 * self.stdev,
            self.relative_pct()
        )
    }
}

#[derive(Clone, Debug)]
pub struct SweepReport<T> {
    pub rows: Vec<SweepRow>,
    /// Index of the row with the lowest validation bpc.
    pub winner: Option<usize>,
    /// Best checkpoint of the winning row.
    pub best: Option<Checkpoint<T>>,
}

impl<T> SweepReport<T> {
    pub const TSV_HEADER: &'static str = "learning_rate\tencoder_dropout\tbest_step\tval_bpc\tf1\tstatus";

    pub fn tsv(&self) -> String {
        let mut s = format!("{}\n", Self::TSV_HEADER);
        for r in &self.rows {
            let line = match &r.outcome {
                Ok(p) => format!(
                    "{}\t{}\t{}\t{:.6}\t{}\tok",
                    r.learning_rate,
                    r.encoder_dropout,
                    p.best_step,
                    p.best_val_bpc,
                    p.f1.map(|f| format!("{f:.6}")).unwrap_or_default()
                ),
                Err(e) => format!(
                    "{}\t{}\t\t\t\tfailed: {}",
                    r.learning_rate,
                    r.encoder_dropout,
                    e.replace(['\t', '\n'], " ")
                ),
            };
            s.push_str(&line);
            s.push('\n');
        }
        s
    }

    /// Mean and sample standard deviation of F1 over the (up to) four
    /// successful rows with the lowest bpc. `None` without F1 values.
    pub fn top4(&self) -> Option<Spread> {
        let mut ok: Vec<&SweepPoint> = self.rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        ok.sort_by(|a, b| a.best_val_bpc.total_cmp(&b.best_val_bpc));
        let f1s: Vec<f64> = ok.iter().take(4).map(|p| p.f1).collect::<Option<_>>()?;
        if f1s.is_empty() {
            return None;
        }
        let n = f1s.len() as f64;
        let mean = f1s.iter().sum::<f64>() / n;
        let stdev = if f1s.len() > 1 {
            (f1s.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Spread {
            rows: f1s.len(),
            mean,
            stdev,
        })
    }
}

/// One run per grid point, with up to `jobs` runs in parallel. A failed
/// run is recorded in its row and does not stop the sweep. With `gold`,
/// the best checkpoint of each run is scored for span F1.
pub fn sweep<T: Scalar>(
    grid: &SweepGrid,
    base: &TrainConfig,
    init: &Init<T>,
    data: &TrainData<'_>,
    gold: Option<&[EncodedLine]>,
    jobs: usize,
) -> Result<SweepReport<T>> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::InvalidArgument("sweep grid must not be empty".into()));
    }
    let results: Mutex<Vec<Option<(SweepRow, Option<Checkpoint<T>>)>>> = Mutex::new(vec![None; points.len()]);
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(lr, drop)) = points.get(i) else { break };
        let mut config = base.clone();
        config.peak_lr = lr;
        config.encoder_dropout = drop;
        let run = || -> Result<(SweepPoint, Checkpoint<T>)> {
            let out = train_run(&config, init.clone(), data, Keep::BestAndLast)?;
            let best = out.best()?.clone();
            let f1 = gold.map(|g| segmentation_report(&best.model, g).map(|r| r.f1)).transpose()?;
            Ok((
                SweepPoint {
                    best_step: best.step,
                    best_val_bpc: best.val_bpc,
                    f1,
                },
                best,
            ))
        };
        let (outcome, ckpt) = match run() {
            Ok((p, c)) => (Ok(p), Some(c)),
            Err(e) => (Err(e.to_string()), None),
        };
        let row = SweepRow {
            learning_rate: lr,
            encoder_dropout: drop,
            outcome,
        };
        results.lock().expect("no panics while holding the lock")[i] = Some((row, ckpt));
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, points.len()) {
            s.spawn(work);
        }
    });

    let mut rows = Vec::with_capacity(points.len());
    let mut ckpts = Vec::with_capacity(points.len());
    for r in results.into_inner().expect("workers finished") {
        let (row, c) = r.expect("every grid point ran");
        rows.push(row);
        ckpts.push(c);
    }
    let winner = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.outcome.as_ref().ok().map(|p| (i, p.best_val_bpc)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);
    let best = winner.and_then(|i| ckpts[i].take());
    Ok(SweepReport { rows, winner, best })
}

/// Nested samples of `corpus`, one per size: each smaller set is contained
/// in every larger one.
pub fn size_ladder(corpus: &RawCorpus, sizes: &[usize], seed: u64) -> Result<Vec<RawCorpus>> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(format!("ladder sizes {sizes:?} are not ascending")));
    }
    sizes.iter().map(|&n| downsample(corpus, n, seed)).collect()
}
