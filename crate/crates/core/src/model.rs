//! Domain types shared across ingestion, detection, aggregation and evaluation.
//!
//! Speed observations form a third-order tensor indexed by segment, date and
//! minute of day. The detection atom is one segment-day: a 1440-slot speed and
//! reference-speed vector plus a validity mask.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmask::{MinuteMask, MINUTES_PER_DAY};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("duplicate (road, order_index) pairs: {}", format_duplicates(.0))]
    DuplicateOrder(Vec<(String, u32)>),
    #[error("duplicate segment id {0}")]
    DuplicateSegment(SegmentId),
    #[error("segment {id}: {reason}")]
    InvalidSegment { id: SegmentId, reason: String },
    #[error("profile {id} {date}: {reason}")]
    InvalidProfile {
        id: SegmentId,
        date: NaiveDate,
        reason: String,
    },
    #[error("invalid parameter {key}: {reason}")]
    InvalidParam { key: &'static str, reason: String },
    #[error("params line {line}: {reason}")]
    ParamsSyntax { line: usize, reason: String },
}

fn format_duplicates(dups: &[(String, u32)]) -> String {
    dups.iter()
        .map(|(road, idx)| format!("{road}#{idx}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Opaque segment identifier. Cloning is a refcount bump.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentId(Arc<str>);

impl SegmentId {
    pub fn new(id: impl AsRef<str>) -> Self {
        Self(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SegmentId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

impl From<String> for SegmentId {
    fn from(s: String) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub segment_id: SegmentId,
    pub road: String,
    /// Position along the road; unique within a road.
    pub order_index: u32,
    pub length_miles: f64,
    /// Spatial weight of the node. All segments weigh 1 unless stated otherwise.
    pub weight: f64,
}

impl SegmentMeta {
    pub fn new(
        segment_id: impl Into<SegmentId>,
        road: impl Into<String>,
        order_index: u32,
        length_miles: f64,
    ) -> Result<Self, ModelError> {
        let meta = Self {
            segment_id: segment_id.into(),
            road: road.into(),
            order_index,
            length_miles,
            weight: 1.0,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: &str| ModelError::InvalidSegment {
            id: self.segment_id.clone(),
            reason: reason.to_string(),
        };
        if !(self.length_miles > 0.0 && self.length_miles.is_finite()) {
            return Err(fail("length_miles must be > 0"));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(fail("weight must be > 0"));
        }
        Ok(())
    }
}

/// Freeway network: nodes are segments, edges join neighbours along a road.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGraph {
    /// Sorted by `(road, order_index)`.
    segments: Vec<SegmentMeta>,
    /// Index pairs into `segments`, lower index first.
    edges: Vec<(usize, usize)>,
    by_id: HashMap<SegmentId, usize>,
}

/// Builds the chain topology of each road from segment order.
pub fn build_graph(segments: Vec<SegmentMeta>) -> Result<SegmentGraph, ModelError> {
    let mut segments = segments;
    for meta in &segments {
        meta.validate()?;
    }
    segments.sort_by(|a, b| (&a.road, a.order_index).cmp(&(&b.road, b.order_index)));

    let mut duplicates: Vec<(String, u32)> = segments
        .windows(2)
        .filter(|w| w[0].road == w[1].road && w[0].order_index == w[1].order_index)
        .map(|w| (w[0].road.clone(), w[0].order_index))
        .collect();
    if !duplicates.is_empty() {
        duplicates.dedup();
        return Err(ModelError::DuplicateOrder(duplicates));
    }

    let mut by_id = HashMap::with_capacity(segments.len());
    for (idx, meta) in segments.iter().enumerate() {
        if by_id.insert(meta.segment_id.clone(), idx).is_some() {
            return Err(ModelError::DuplicateSegment(meta.segment_id.clone()));
        }
    }

    let edges = (1..segments.len())
        .filter(|&i| segments[i - 1].road == segments[i].road)
        .map(|i| (i - 1, i))
        .collect();

    Ok(SegmentGraph {
        segments,
        edges,
        by_id,
    })
}

impl SegmentGraph {
    pub fn segments(&self) -> &[SegmentMeta] {
        &self.segments
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = (&SegmentId, &SegmentId)> {
        self.edges
            .iter()
            .map(|&(a, b)| (&self.segments[a].segment_id, &self.segments[b].segment_id))
    }

    pub fn get(&self, id: &SegmentId) -> Option<&SegmentMeta> {
        self.by_id.get(id).map(|&i| &self.segments[i])
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segment counts per road, sorted by road name.
    pub fn road_sizes(&self) -> BTreeMap<&str, usize> {
        let mut sizes = BTreeMap::new();
        for meta in &self.segments {
            *sizes.entry(meta.road.as_str()).or_insert(0) += 1;
        }
        sizes
    }
}

/// One probe observation: average speed on a segment during one minute.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedRecord {
    pub segment_id: SegmentId,
    pub date: NaiveDate,
    /// Minute of day, 0..=1439.
    pub minute: u16,
    pub speed_mph: f64,
    pub reference_speed_mph: f64,
}

/// Speeds for one segment over one day, after gap filling.
///
/// Slots where `valid` is false hold 0.0 in both speed vectors and are never
/// read by detection or aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDayProfile {
    segment_id: SegmentId,
    date: NaiveDate,
    speeds: Vec<f64>,
    reference_speeds: Vec<f64>,
    valid: MinuteMask,
}

impl SegmentDayProfile {
    pub fn new(
        segment_id: SegmentId,
        date: NaiveDate,
        speeds: Vec<f64>,
        reference_speeds: Vec<f64>,
        valid: MinuteMask,
    ) -> Result<Self, ModelError> {
        let profile = Self {
            segment_id,
            date,
            speeds,
            reference_speeds,
            valid,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// A fully observed day at constant reference speed.
    pub fn from_speeds(
        segment_id: SegmentId,
        date: NaiveDate,
        speeds: Vec<f64>,
        reference_speed: f64,
    ) -> Result<Self, ModelError> {
        Self::new(
            segment_id,
            date,
            speeds,
            vec![reference_speed; MINUTES_PER_DAY],
            MinuteMask::full(),
        )
    }

    fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| ModelError::InvalidProfile {
            id: self.segment_id.clone(),
            date: self.date,
            reason,
        };
        if self.speeds.len() != MINUTES_PER_DAY || self.reference_speeds.len() != MINUTES_PER_DAY {
            return Err(fail(format!(
                "expected {MINUTES_PER_DAY} slots, got {} speeds and {} reference speeds",
                self.speeds.len(),
                self.reference_speeds.len()
            )));
        }
        for minute in self.valid.iter_ones() {
            let (s, rs) = (self.speeds[minute], self.reference_speeds[minute]);
            if !(s >= 0.0 && s.is_finite()) {
                return Err(fail(format!("minute {minute}: speed {s} must be >= 0")));
            }
            if !(rs > 0.0 && rs.is_finite()) {
                return Err(fail(format!(
                    "minute {minute}: reference speed {rs} must be > 0"
                )));
            }
        }
        Ok(())
    }

    pub fn segment_id(&self) -> &SegmentId {
        &self.segment_id
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn reference_speeds(&self) -> &[f64] {
        &self.reference_speeds
    }

    pub fn valid(&self) -> &MinuteMask {
        &self.valid
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("profile serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let profile: Self = serde_json::from_str(text).map_err(|e| ModelError::ParamsSyntax {
            line: e.line(),
            reason: e.to_string(),
        })?;
        profile.validate()?;
        Ok(profile)
    }
}

/// Name of the built-in per-week RC normalization.
pub const PER_WEEK: &str = "per_week";
pub const PER_MONTH: &str = "per_month";
pub const ABSOLUTE_COUNT: &str = "absolute_count";

/// Every detection threshold in one place.
#[derive(Debug, Clone, PartialEq)]
pub struct CongestionParams {
    /// Minutes with CI strictly above this are candidates.
    pub ci_threshold: f64,
    /// Lookback length: minute i needs minutes i-window..=i above threshold.
    pub window_minutes: usize,
    pub rc_threshold: f64,
    /// Registered name of the RC normalization strategy.
    pub rc_normalization: String,
    pub gap_fill_minutes: usize,
    pub backfill_runs: bool,
    /// Currency per vehicle-hour of delay; 0 disables costing.
    pub value_of_time_per_hour: f64,
}

impl Default for CongestionParams {
    fn default() -> Self {
        Self {
            ci_threshold: 0.15,
            window_minutes: 15,
            rc_threshold: 3.0,
            rc_normalization: PER_WEEK.to_string(),
            gap_fill_minutes: 5,
            backfill_runs: false,
            value_of_time_per_hour: 0.0,
        }
    }
}

impl CongestionParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.ci_threshold > 0.0 && self.ci_threshold < 1.0) {
            return Err(ModelError::InvalidParam {
                key: "ci_threshold",
                reason: format!("{} not in (0, 1)", self.ci_threshold),
            });
        }
        if self.window_minutes < 1 || self.window_minutes >= MINUTES_PER_DAY {
            return Err(ModelError::InvalidParam {
                key: "window_minutes",
                reason: format!("{} not in [1, {})", self.window_minutes, MINUTES_PER_DAY),
            });
        }
        if !(self.rc_threshold > 0.0 && self.rc_threshold.is_finite()) {
            return Err(ModelError::InvalidParam {
                key: "rc_threshold",
                reason: format!("{} must be > 0", self.rc_threshold),
            });
        }
        if !(self.value_of_time_per_hour >= 0.0 && self.value_of_time_per_hour.is_finite()) {
            return Err(ModelError::InvalidParam {
                key: "value_of_time_per_hour",
                reason: format!("{} must be >= 0", self.value_of_time_per_hour),
            });
        }
        Ok(())
    }

    /// Parses flat `key = value` text. Blank lines and `#` comments are
    /// skipped; unspecified keys keep their defaults.
    pub fn from_kv_str(text: &str) -> Result<Self, ModelError> {
        let mut params = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |reason: String| ModelError::ParamsSyntax {
                line: line_no,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim().trim_matches('"'));
            let bad = |e: &dyn fmt::Display| syntax(format!("{key}: cannot parse `{value}`: {e}"));
            match key {
                "ci_threshold" => params.ci_threshold = value.parse().map_err(|e| bad(&e))?,
                "window_minutes" => params.window_minutes = value.parse().map_err(|e| bad(&e))?,
                "rc_threshold" => params.rc_threshold = value.parse().map_err(|e| bad(&e))?,
                "rc_normalization" => params.rc_normalization = value.to_string(),
                "gap_fill_minutes" => {
                    params.gap_fill_minutes = value.parse().map_err(|e| bad(&e))?
                }
                "backfill_runs" => params.backfill_runs = value.parse().map_err(|e| bad(&e))?,
                "value_of_time_per_hour" => {
                    params.value_of_time_per_hour = value.parse().map_err(|e| bad(&e))?
                }
                other => return Err(syntax(format!("unknown key `{other}`"))),
            }
        }
        params.validate()?;
        Ok(params)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "ci_threshold = {}\nwindow_minutes = {}\nrc_threshold = {}\nrc_normalization = {}\n\
             gap_fill_minutes = {}\nbackfill_runs = {}\nvalue_of_time_per_hour = {}\n",
            self.ci_threshold,
            self.window_minutes,
            self.rc_threshold,
            self.rc_normalization,
            self.gap_fill_minutes,
            self.backfill_runs,
            self.value_of_time_per_hour
        )
    }
}

/// Everything detection produces for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub segment_id: SegmentId,
    pub per_day_masks: BTreeMap<NaiveDate, MinuteMask>,
    /// Minute-of-day slots flagged as recurrent congestion.
    pub rc_profile: MinuteMask,
    pub avg_daily_congestion_hours: f64,
    pub rc_hours: f64,
    pub total_delay_vehicle_hours: f64,
    pub total_cost: f64,
    /// Congested minutes whose speed was raised to the floor speed for delay.
    pub floor_capped_minutes: u64,
}

/// Agreement counts between a detected and a reference labeling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `(tp + tn) / total`, or `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (self.tp + self.tn) as f64 / total as f64)
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: &str, road: &str, order: u32) -> SegmentMeta {
        SegmentMeta::new(id, road, order, 0.5).unwrap()
    }

    #[test]
    fn chain_of_three() {
        let graph = build_graph(vec![
            seg("c", "I-35", 2),
            seg("a", "I-35", 0),
            seg("b", "I-35", 1),
        ])
        .unwrap();
        let edges: Vec<_> = graph
            .edge_ids()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(
            edges,
            vec![("a".into(), "b".into()), ("b".into(), "c".into())]
        );
    }

    #[test]
    fn single_segment_has_no_edges() {
        let graph = build_graph(vec![seg("a", "I-80", 7)]).unwrap();
        assert!(graph.edges().is_empty());
        assert_eq!(graph.len(), 1);
    }

    #[test]
    fn network_edge_count_is_segments_minus_roads() {
        // 3017 segments over four interstates.
        let sizes = [
            ("I-35", 900u32),
            ("I-80", 1100),
            ("I-29", 600),
            ("I-380", 417),
        ];
        let mut segments = Vec::new();
        for (road, n) in sizes {
            for i in 0..n {
                segments.push(seg(&format!("{road}-{i}"), road, i));
            }
        }
        assert_eq!(segments.len(), 3017);
        let graph = build_graph(segments).unwrap();
        assert_eq!(graph.edges().len(), 3017 - 4);
    }

    #[test]
    fn duplicate_order_is_named() {
        let err = build_graph(vec![
            seg("a", "I-35", 1),
            seg("b", "I-35", 1),
            seg("c", "I-80", 1),
        ])
        .unwrap_err();
        assert_eq!(err, ModelError::DuplicateOrder(vec![("I-35".into(), 1)]));
        assert!(err.to_string().contains("I-35#1"));
    }

    #[test]
    fn segment_invariants() {
        assert!(SegmentMeta::new("a", "I-35", 0, 0.0).is_err());
        let mut meta = seg("a", "I-35", 0);
        meta.weight = 0.0;
        assert!(meta.validate().is_err());
    }

    #[test]
    fn profile_rejects_wrong_length() {
        let date = NaiveDate::from_ymd_opt(2018, 3, 1).unwrap();
        let err = SegmentDayProfile::from_speeds("s".into(), date, vec![60.0; 10], 65.0);
        assert!(err.is_err());
    }

    #[test]
    fn params_kv_roundtrip() {
        let params = CongestionParams {
            ci_threshold: 0.2,
            window_minutes: 10,
            rc_normalization: ABSOLUTE_COUNT.into(),
            backfill_runs: true,
            value_of_time_per_hour: 18.5,
            ..Default::default()
        };
        let parsed = CongestionParams::from_kv_str(&params.to_kv_string()).unwrap();
        assert_eq!(parsed, params);
    }

    #[test]
    fn params_errors_are_line_anchored() {
        let err =
            CongestionParams::from_kv_str("# c\nci_threshold = 0.1\nwindow = 3\n").unwrap_err();
        assert!(
            matches!(err, ModelError::ParamsSyntax { line: 3, .. }),
            "{err}"
        );
        let err = CongestionParams::from_kv_str("ci_threshold = 1.5").unwrap_err();
        assert!(matches!(
            err,
            ModelError::InvalidParam {
                key: "ci_threshold",
                ..
            }
        ));
    }

    #[test]
    fn accuracy_of_counts() {
        let cm = ConfusionMatrix {
            tp: 8,
            tn: 80,
            fp: 6,
            fn_: 6,
        };
        assert!((cm.accuracy().unwrap() - 0.88).abs() < 1e-15);
        assert_eq!(ConfusionMatrix::default().accuracy(), None);
    }
}
