//! Batch detection of sustained and recurrent freeway congestion from
//! minute-wise probe-vehicle speeds.
//!
//! The pipeline reads speed records, assembles one 1440-minute profile per
//! segment and day, flags minutes whose congestion index stays above a
//! threshold for a full lookback window, and marks minutes of day that are
//! congested often enough to count as recurrent. Segments are processed in
//! parallel partitions with output independent of the worker count.
//!
//! The mask rule and the recurrence normalization are pluggable; see
//! [`strategy::StrategyRegistry`].

pub mod aggregate;
pub mod bitmask;
pub mod cli;
pub mod detect;
pub mod evaluate;
pub mod ingest;
pub mod model;
pub mod outputs;
pub mod parallel;
pub mod strategy;
pub mod synth;

pub use bitmask::{MinuteMask, MINUTES_PER_DAY};
pub use detect::{congestion_index, congestion_mask, detect_segment, rc_profile, Detector};
pub use model::{
    build_graph, ConfusionMatrix, CongestionParams, DetectionResult, SegmentDayProfile,
    SegmentGraph, SegmentId, SegmentMeta, SpeedRecord,
};
pub use parallel::{run_pipeline, Pipeline, RunStats};
pub use strategy::StrategyRegistry;
