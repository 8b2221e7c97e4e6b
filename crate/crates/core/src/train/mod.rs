//! Optimization loops, learning-rate schedules, checkpoints, sweeps and
//! best-checkpoint selection.

mod adam;
mod checkpoint;
mod config;
mod run;
mod sweep;

pub use adam::{clip_grad_norm, Adam};
pub use checkpoint::{config_hash, Checkpoint, Provenance};
pub use config::{closest_tuned_size, lr_at, SweepGrid, TrainConfig, TrainMode};
pub use run::{
    corpus_bpc, monitor_mcc, segment_lines, segmentation_report, select_best, train_run, Init, Keep, MetricsRow,
    RunOutput, Scored, TrainData,
};
pub use sweep::{size_ladder, sweep, Spread, SweepPoint, SweepReport, SweepRow};

#[cfg(test)]
mod tests;
