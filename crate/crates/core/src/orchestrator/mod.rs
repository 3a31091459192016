//! The epoch loop, schedules, run configuration, metrics and checkpoints.
//!
//! Algorithm variants differ in which stages run; the backward-trace strategy is selected
//! by name from a registry and the remaining switches come from named presets.

pub mod checkpoint;
mod config;
mod metrics;
mod schedule;
mod strategy;
mod trainer;

pub use config::{parse_value, RunConfig};
pub use metrics::{header_line, read_column, steps_to_threshold, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use schedule::ScheduleSpec;
pub use strategy::{
    backward_strategy, find_preset, preset_names, BackwardEntry, BackwardImitate, BackwardMode, BackwardReinforce,
    BackwardStrategy, NoBackward, Preset, BACKWARD_REGISTRY, PRESETS,
};
pub use trainer::{evaluate_policy, holdout_split, Stage, Trainer, TrainingState};
