//! Accuracy of detected congestion against a reference labeling, and the
//! processing-time/accuracy trade-off report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;
use std::str::FromStr;

use chrono::NaiveDate;
use thiserror::Error;

use crate::bitmask::{MinuteMask, MINUTES_PER_DAY};
use crate::model::{ConfusionMatrix, SegmentId};
use crate::parallel::RunStats;

/// Congestion labels per segment-day. Keys define the evaluated universe.
pub type LabelSet = BTreeMap<(SegmentId, NaiveDate), MinuteMask>;

pub const REPORT_HEADER: &str = "label,wall_time_seconds,estimated_cost,accuracy";
pub const PAIRWISE_HEADER: &str = "label_a,label_b,time_reduction_pct";

#[derive(Debug, Error, PartialEq)]
pub enum EvaluateError {
    #[error(
        "labelings cover different segment-days: {} missing from reference [{}], {} missing from detected [{}]",
        .missing_in_reference.len(), preview(.missing_in_reference),
        .missing_in_detected.len(), preview(.missing_in_detected)
    )]
    UniverseMismatch {
        missing_in_reference: Vec<(SegmentId, NaiveDate)>,
        missing_in_detected: Vec<(SegmentId, NaiveDate)>,
    },
    #[error("unknown granularity `{0}` (expected minute or hour)")]
    Granularity(String),
    #[error("line {line}: {reason}")]
    BadLine { line: u64, reason: String },
    #[error("read failed: {0}")]
    Io(String),
}

fn preview(keys: &[(SegmentId, NaiveDate)]) -> String {
    let mut shown: Vec<String> = keys
        .iter()
        .take(5)
        .map(|(s, d)| format!("{s}@{d}"))
        .collect();
    if keys.len() > 5 {
        shown.push("...".into());
    }
    shown.join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    Minute,
    #[default]
    Hour,
}

impl Granularity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::Minute => "minute",
            Granularity::Hour => "hour",
        }
    }
}

impl FromStr for Granularity {
    type Err = EvaluateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minute" => Ok(Granularity::Minute),
            "hour" => Ok(Granularity::Hour),
            other => Err(EvaluateError::Granularity(other.to_string())),
        }
    }
}

/// Counts agreement cell by cell. At hour granularity each segment-day has
/// 24 cells, positive when any of the hour's minutes is positive.
pub fn confusion(
    detected: &LabelSet,
    reference: &LabelSet,
    granularity: Granularity,
) -> Result<ConfusionMatrix, EvaluateError> {
    let missing_in_reference: Vec<_> = detected
        .keys()
        .filter(|k| !reference.contains_key(k))
        .cloned()
        .collect();
    let missing_in_detected: Vec<_> = reference
        .keys()
        .filter(|k| !detected.contains_key(k))
        .cloned()
        .collect();
    if !missing_in_reference.is_empty() || !missing_in_detected.is_empty() {
        return Err(EvaluateError::UniverseMismatch {
            missing_in_reference,
            missing_in_detected,
        });
    }

    let mut cm = ConfusionMatrix::default();
    for (key, det) in detected {
        let reference = &reference[key];
        match granularity {
            Granularity::Minute => {
                let tp = det.intersection(reference).count_ones() as u64;
                let d = det.count_ones() as u64;
                let r = reference.count_ones() as u64;
                cm.tp += tp;
                cm.fp += d - tp;
                cm.fn_ += r - tp;
                cm.tn += MINUTES_PER_DAY as u64 + tp - d - r;
            }
            Granularity::Hour => {
                for (d, r) in det.hours().into_iter().zip(reference.hours()) {
                    match (d, r) {
                        (true, true) => cm.tp += 1,
                        (false, false) => cm.tn += 1,
                        (true, false) => cm.fp += 1,
                        (false, true) => cm.fn_ += 1,
                    }
                }
            }
        }
    }
    Ok(cm)
}

/// Extends sparse positive cells to a full labeling over `universe`; keys
/// absent from the universe are an error.
pub fn labels_over_universe(
    universe: &BTreeSet<(SegmentId, NaiveDate)>,
    positives: LabelSet,
) -> Result<LabelSet, EvaluateError> {
    let extra: Vec<_> = positives
        .keys()
        .filter(|k| !universe.contains(k))
        .cloned()
        .collect();
    if !extra.is_empty() {
        return Err(EvaluateError::UniverseMismatch {
            missing_in_reference: Vec::new(),
            missing_in_detected: extra,
        });
    }
    let mut out: LabelSet = universe
        .iter()
        .map(|k| (k.clone(), MinuteMask::empty()))
        .collect();
    out.extend(positives);
    Ok(out)
}

/// Reads `segment_id,date,minute` positive cells.
pub fn parse_truth_csv<R: Read>(mut stream: R) -> Result<LabelSet, EvaluateError> {
    let mut text = String::new();
    stream
        .read_to_string(&mut text)
        .map_err(|e| EvaluateError::Io(e.to_string()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == crate::synth::TRUTH_HEADER => {}
        Some((_, header)) => {
            return Err(EvaluateError::BadLine {
                line: 1,
                reason: format!(
                    "expected header `{}`, found `{header}`",
                    crate::synth::TRUTH_HEADER
                ),
            })
        }
        None => return Ok(LabelSet::new()),
    }
    let mut out = LabelSet::new();
    for (idx, line) in lines {
        let line_no = idx as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EvaluateError::BadLine {
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [id, date, minute] = fields[..] else {
            return Err(bad(format!("expected 3 fields, got {}", fields.len())));
        };
        let date: NaiveDate = date
            .parse()
            .map_err(|_| bad(format!("bad date `{date}`")))?;
        let minute: usize = minute
            .parse()
            .ok()
            .filter(|m| *m < MINUTES_PER_DAY)
            .ok_or_else(|| bad(format!("bad minute `{minute}`")))?;
        out.entry((SegmentId::new(id), date))
            .or_default()
            .set(minute, true);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub stats: RunStats,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub label: String,
    pub wall_time_seconds: f64,
    pub estimated_cost: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseRow {
    pub label_a: String,
    pub label_b: String,
    /// `100 * (1 - t_a / t_b)`; `None` when `t_b` is zero and `t_a` is not.
    pub time_reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TradeoffReport {
    pub rows: Vec<TradeoffRow>,
    pub pairwise: Vec<PairwiseRow>,
}

pub fn time_reduction_pct(t_a: f64, t_b: f64) -> Option<f64> {
    if t_a == t_b {
        return Some(0.0);
    }
    (t_b != 0.0).then(|| 100.0 * (1.0 - t_a / t_b))
}

/// One row per run, plus a pairwise row for every earlier/later pair giving
/// how much faster the earlier run is than the later one.
pub fn tradeoff_report(runs: &[RunSummary]) -> TradeoffReport {
    let rows = runs
        .iter()
        .map(|r| TradeoffRow {
            label: r.label.clone(),
            wall_time_seconds: r.stats.wall_time_seconds,
            estimated_cost: r.stats.estimated_cost,
            accuracy: r.confusion.accuracy(),
        })
        .collect();
    let mut pairwise = Vec::new();
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            pairwise.push(PairwiseRow {
                label_a: a.label.clone(),
                label_b: b.label.clone(),
                time_reduction_pct: time_reduction_pct(
                    a.stats.wall_time_seconds,
                    b.stats.wall_time_seconds,
                ),
            });
        }
    }
    TradeoffReport { rows, pairwise }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TradeoffReport {
    pub fn report_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.label,
                r.wall_time_seconds,
                r.estimated_cost,
                opt(r.accuracy)
            );
        }
        out
    }

    pub fn pairwise_csv(&self) -> String {
        let mut out = format!("{PAIRWISE_HEADER}\n");
        for p in &self.pairwise {
            let _ = writeln!(
                out,
                "{},{},{}",
                p.label_a,
                p.label_b,
                opt(p.time_reduction_pct)
            );
        }
        out
    }
}
