//! Partitioned map-reduce over segments.
//!
//! Each partition holds whole segments, so no data moves between workers. A
//! fixed pool of scoped threads pulls partitions from a shared cursor, runs
//! detection on every segment, and the reducer sorts the union of results by
//! segment id. Output therefore depends only on the input profiles and
//! parameters, never on the worker count or partitioning.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

use crate::detect::{DetectError, Detector};
use crate::ingest::{self, IngestError};
use crate::model::{
    build_graph, CongestionParams, DetectionResult, ModelError, SegmentDayProfile, SegmentGraph,
    SegmentId, SegmentMeta,
};
use crate::strategy::StrategyRegistry;
use crate::synth::{self, ScenarioError, ScenarioSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("partition {partition} failed: {reason}")]
    Worker { partition: usize, reason: String },
    #[error("segment {0} is split across partitions")]
    SplitSegment(SegmentId),
    #[error("profiles for segment {0} which is not in the network")]
    UnknownSegment(SegmentId),
    #[error("benchmark sizes must be positive and strictly increasing, got {0:?}")]
    BadSizes(Vec<u32>),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Resource accounting for one pipeline run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub wall_time_seconds: f64,
    pub worker_count: usize,
    pub segments_processed: u64,
    pub bytes_ingested: u64,
    pub estimated_cost: f64,
}

impl RunStats {
    pub fn to_kv_string(&self) -> String {
        format!(
            "wall_time_seconds = {}\nworker_count = {}\nsegments_processed = {}\nbytes_ingested = {}\nestimated_cost = {}\n",
            self.wall_time_seconds,
            self.worker_count,
            self.segments_processed,
            self.bytes_ingested,
            self.estimated_cost
        )
    }

    /// Reads the output of [`RunStats::to_kv_string`]; unknown keys are ignored.
    pub fn from_kv_str(text: &str) -> Result<Self, ModelError> {
        let mut stats = Self::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |reason: String| ModelError::ParamsSyntax {
                line: idx + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
            let value = value.trim();
            let bad = |e: &dyn std::fmt::Display| syntax(format!("{}: {e}", key.trim()));
            match key.trim() {
                "wall_time_seconds" => {
                    stats.wall_time_seconds = value.parse().map_err(|e| bad(&e))?
                }
                "worker_count" => stats.worker_count = value.parse().map_err(|e| bad(&e))?,
                "segments_processed" => {
                    stats.segments_processed = value.parse().map_err(|e| bad(&e))?
                }
                "bytes_ingested" => stats.bytes_ingested = value.parse().map_err(|e| bad(&e))?,
                "estimated_cost" => stats.estimated_cost = value.parse().map_err(|e| bad(&e))?,
                _ => {}
            }
        }
        Ok(stats)
    }
}

/// Node-hours times a flat rate.
pub fn estimate_cost(stats: &RunStats, rate_per_node_hour: f64) -> f64 {
    stats.wall_time_seconds / 3600.0 * stats.worker_count as f64 * rate_per_node_hour
}

/// All days of one segment.
#[derive(Debug, Clone)]
pub struct SegmentWork {
    pub meta: SegmentMeta,
    pub profiles: Vec<SegmentDayProfile>,
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub id: usize,
    pub work: Vec<SegmentWork>,
}

/// Groups profiles by segment and deals segments round-robin (in segment id
/// order) into `partitions` buckets. Empty buckets are dropped.
pub fn partition_profiles(
    profiles: Vec<SegmentDayProfile>,
    graph: &SegmentGraph,
    partitions: usize,
) -> Result<Vec<Partition>, PipelineError> {
    let partitions = partitions.max(1);
    let mut by_segment: BTreeMap<SegmentId, Vec<SegmentDayProfile>> = BTreeMap::new();
    for profile in profiles {
        by_segment
            .entry(profile.segment_id().clone())
            .or_default()
            .push(profile);
    }
    let mut buckets: Vec<Partition> = (0..partitions)
        .map(|id| Partition {
            id,
            work: Vec::new(),
        })
        .collect();
    for (i, (id, profiles)) in by_segment.into_iter().enumerate() {
        let meta = graph
            .get(&id)
            .ok_or_else(|| PipelineError::UnknownSegment(id.clone()))?
            .clone();
        buckets[i % partitions]
            .work
            .push(SegmentWork { meta, profiles });
    }
    buckets.retain(|p| !p.work.is_empty());
    Ok(buckets)
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    detector: Detector,
    workers: usize,
    rate_per_node_hour: f64,
}

impl Pipeline {
    pub fn new(detector: Detector) -> Self {
        Self {
            detector,
            workers: 1,
            rate_per_node_hour: 0.0,
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn rate_per_node_hour(mut self, rate: f64) -> Self {
        self.rate_per_node_hour = rate;
        self
    }

    /// Detects every segment; results are sorted by segment id.
    pub fn run(
        &self,
        partitions: &[Partition],
    ) -> Result<(Vec<DetectionResult>, RunStats), PipelineError> {
        if self.workers == 0 {
            return Err(PipelineError::NoWorkers);
        }
        let mut seen = std::collections::HashSet::new();
        for work in partitions.iter().flat_map(|p| &p.work) {
            if !seen.insert(&work.meta.segment_id) {
                return Err(PipelineError::SplitSegment(work.meta.segment_id.clone()));
            }
        }

        let start = Instant::now();
        let cursor = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let first_error: Mutex<Option<PipelineError>> = Mutex::new(None);
        let threads = self.workers.min(partitions.len()).max(1);

        let mut results: Vec<DetectionResult> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|_| {
                    scope.spawn(|| {
                        let mut local = Vec::new();
                        while !failed.load(Ordering::Relaxed) {
                            let next = cursor.fetch_add(1, Ordering::Relaxed);
                            let Some(partition) = partitions.get(next) else {
                                break;
                            };
                            match self.run_partition(partition) {
                                Ok(mut out) => local.append(&mut out),
                                Err(e) => {
                                    failed.store(true, Ordering::Relaxed);
                                    let mut slot =
                                        first_error.lock().unwrap_or_else(|p| p.into_inner());
                                    // Keep the lowest partition id for a stable message.
                                    let replace = match (&*slot, &e) {
                                        (
                                            Some(PipelineError::Worker { partition: old, .. }),
                                            PipelineError::Worker { partition: new, .. },
                                        ) => new < old,
                                        (None, _) => true,
                                        _ => false,
                                    };
                                    if replace {
                                        *slot = Some(e);
                                    }
                                    break;
                                }
                            }
                        }
                        local
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("partition panics are caught"))
                .collect()
        });

        if let Some(err) = first_error.into_inner().unwrap_or_else(|p| p.into_inner()) {
            return Err(err);
        }
        results.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));

        let mut stats = RunStats {
            wall_time_seconds: start.elapsed().as_secs_f64(),
            worker_count: self.workers,
            segments_processed: results.len() as u64,
            bytes_ingested: 0,
            estimated_cost: 0.0,
        };
        stats.estimated_cost = estimate_cost(&stats, self.rate_per_node_hour);
        Ok((results, stats))
    }

    fn run_partition(&self, partition: &Partition) -> Result<Vec<DetectionResult>, PipelineError> {
        let fail = |reason: String| PipelineError::Worker {
            partition: partition.id,
            reason,
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            partition
                .work
                .iter()
                .map(|w| self.detector.detect_segment(&w.profiles, &w.meta))
                .collect::<Result<Vec<_>, _>>()
        }));
        match outcome {
            Ok(Ok(results)) => Ok(results),
            Ok(Err(e)) => Err(fail(e.to_string())),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "worker panicked".to_string());
                Err(fail(format!("panic: {msg}")))
            }
        }
    }
}

/// Runs detection with the built-in strategies.
pub fn run_pipeline(
    partitions: &[Partition],
    params: &CongestionParams,
    workers: usize,
) -> Result<(Vec<DetectionResult>, RunStats), PipelineError> {
    let detector = Detector::new(params.clone(), StrategyRegistry::builtin())?;
    Pipeline::new(detector).workers(workers).run(partitions)
}

pub const BENCH_HEADER: &str = "input_bytes,wall_time_seconds,workers";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub input_bytes: u64,
    pub wall_time_seconds: f64,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Scenario whose day count is multiplied by each size.
    pub base: ScenarioSpec,
    pub workers: usize,
    /// Timed repetitions per size; the fastest is reported.
    pub repetitions: usize,
    pub params: CongestionParams,
}

/// Times ingest + detection on CSV corpora of `base.days * size` days.
pub fn scaling_benchmark(
    sizes: &[u32],
    config: &BenchConfig,
) -> Result<Vec<BenchRow>, PipelineError> {
    if sizes.contains(&0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PipelineError::BadSizes(sizes.to_vec()));
    }
    if config.workers == 0 {
        return Err(PipelineError::NoWorkers);
    }
    let detector = Detector::new(config.params.clone(), StrategyRegistry::builtin())?;
    let pipeline = Pipeline::new(detector).workers(config.workers);

    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let spec = config.base.with_days(config.base.days * size);
        let corpus = synth::generate(&spec)?;
        let mut bytes = Vec::new();
        ingest::write_records_csv(&mut bytes, &corpus.records)?;
        drop(corpus.records);
        let graph = build_graph(corpus.segments)?;

        let mut best = f64::INFINITY;
        for _ in 0..config.repetitions.max(1) {
            let start = Instant::now();
            let ingested = ingest::ingest(bytes.as_slice(), &config.params)?;
            let partitions = partition_profiles(ingested.profiles, &graph, config.workers * 4)?;
            let (results, _) = pipeline.run(&partitions)?;
            std::hint::black_box(&results);
            best = best.min(start.elapsed().as_secs_f64());
        }
        rows.push(BenchRow {
            input_bytes: bytes.len() as u64,
            wall_time_seconds: best,
            workers: config.workers,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{}",
            r.input_bytes, r.wall_time_seconds, r.workers
        );
    }
    out
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Ingest(IngestError::Io(e))
    }
}
