//! Delay, cost and per-segment roll-ups of detection results.
//!
//! No traffic volumes are available, so delay is reported per probe vehicle:
//! each congested, valid minute contributes the extra time needed to traverse
//! the segment at the observed speed instead of the reference speed,
//! `L * (1/S - 1/RS)` hours, clamped at zero. Observed speeds below
//! [`FLOOR_SPEED_MPH`] are raised to it so a standstill yields a large but
//! finite delay.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::bitmask::MinuteMask;
use crate::model::{
    CongestionParams, DetectionResult, SegmentDayProfile, SegmentGraph, SegmentId, SegmentMeta,
};

pub const FLOOR_SPEED_MPH: f64 = 1.0;

pub const SUMMARY_HEADER: &str =
    "segment_id,road,order_index,avg_daily_congestion_hours,rc_hours,delay_vehicle_hours,cost";

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("result for segment {0} which is not in the network")]
    UnknownSegment(SegmentId),
    #[error("segment {0} appears in more than one result")]
    DuplicateSegment(SegmentId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DelayTally {
    pub vehicle_hours: f64,
    pub floor_capped_minutes: u64,
}

/// Extra traversal time over the congested minutes of one segment-day.
pub fn delay_vehicle_hours(
    profile: &SegmentDayProfile,
    mask: &MinuteMask,
    meta: &SegmentMeta,
) -> DelayTally {
    let mut tally = DelayTally::default();
    for minute in mask.intersection(profile.valid()).iter_ones() {
        let mut speed = profile.speeds()[minute];
        if speed < FLOOR_SPEED_MPH {
            speed = FLOOR_SPEED_MPH;
            tally.floor_capped_minutes += 1;
        }
        let reference = profile.reference_speeds()[minute];
        tally.vehicle_hours += minute_delay(meta.length_miles, speed, reference);
    }
    tally
}

#[inline]
fn minute_delay(length_miles: f64, speed: f64, reference: f64) -> f64 {
    (length_miles * (1.0 / speed - 1.0 / reference)).max(0.0)
}

/// Monetized delay at the configured value of time.
pub fn cost(delay_vehicle_hours: f64, params: &CongestionParams) -> f64 {
    delay_vehicle_hours * params.value_of_time_per_hour
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub segment_id: SegmentId,
    pub road: String,
    pub order_index: u32,
    pub avg_daily_congestion_hours: f64,
    pub rc_hours: f64,
    pub delay_vehicle_hours: f64,
    pub cost: f64,
}

/// One row per segment, ordered along each road.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryTable {
    rows: Vec<SummaryRow>,
}

pub fn segment_summary_table(
    results: &[DetectionResult],
    graph: &SegmentGraph,
) -> Result<SummaryTable, AggregateError> {
    let mut rows = Vec::with_capacity(results.len());
    for result in results {
        let meta = graph
            .get(&result.segment_id)
            .ok_or_else(|| AggregateError::UnknownSegment(result.segment_id.clone()))?;
        rows.push(SummaryRow {
            segment_id: meta.segment_id.clone(),
            road: meta.road.clone(),
            order_index: meta.order_index,
            avg_daily_congestion_hours: result.avg_daily_congestion_hours,
            rc_hours: result.rc_hours,
            delay_vehicle_hours: result.total_delay_vehicle_hours,
            cost: result.total_cost,
        });
    }
    SummaryTable::from_rows(rows)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Totals {
    pub avg_daily_congestion_hours: f64,
    pub rc_hours: f64,
    pub delay_vehicle_hours: f64,
    pub cost: f64,
}

impl SummaryTable {
    pub fn from_rows(mut rows: Vec<SummaryRow>) -> Result<Self, AggregateError> {
        rows.sort_by(|a, b| (&a.road, a.order_index).cmp(&(&b.road, b.order_index)));
        let mut seen = std::collections::HashSet::with_capacity(rows.len());
        for row in &rows {
            if !seen.insert(&row.segment_id) {
                return Err(AggregateError::DuplicateSegment(row.segment_id.clone()));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[SummaryRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Combines partial tables built from disjoint segment sets.
    pub fn merge(self, other: SummaryTable) -> Result<SummaryTable, AggregateError> {
        let mut rows = self.rows;
        rows.extend(other.rows);
        Self::from_rows(rows)
    }

    /// Column sums, accumulated in row order.
    pub fn totals(&self) -> Totals {
        self.rows.iter().fold(Totals::default(), |acc, row| Totals {
            avg_daily_congestion_hours: acc.avg_daily_congestion_hours
                + row.avg_daily_congestion_hours,
            rc_hours: acc.rc_hours + row.rc_hours,
            delay_vehicle_hours: acc.delay_vehicle_hours + row.delay_vehicle_hours,
            cost: acc.cost + row.cost,
        })
    }

    /// Column sums per road.
    pub fn road_totals(&self) -> BTreeMap<&str, Totals> {
        let mut out: BTreeMap<&str, Totals> = BTreeMap::new();
        for row in &self.rows {
            let t = out.entry(row.road.as_str()).or_default();
            t.avg_daily_congestion_hours += row.avg_daily_congestion_hours;
            t.rc_hours += row.rc_hours;
            t.delay_vehicle_hours += row.delay_vehicle_hours;
            t.cost += row.cost;
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(SUMMARY_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.segment_id,
                r.road,
                r.order_index,
                r.avg_daily_congestion_hours,
                r.rc_hours,
                r.delay_vehicle_hours,
                r.cost
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitmask::MINUTES_PER_DAY;
    use crate::model::build_graph;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn meta(id: &str, order: u32) -> SegmentMeta {
        SegmentMeta::new(id, "I-35", order, 0.5).unwrap()
    }

    fn profile(speeds: Vec<f64>) -> SegmentDayProfile {
        let date = NaiveDate::from_ymd_opt(2018, 3, 1).unwrap();
        SegmentDayProfile::from_speeds("S".into(), date, speeds, 60.0).unwrap()
    }

    #[test]
    fn no_congestion_no_delay() {
        let p = profile(vec![30.0; MINUTES_PER_DAY]);
        assert_eq!(
            delay_vehicle_hours(&p, &MinuteMask::empty(), &meta("S", 0)).vehicle_hours,
            0.0
        );
    }

    #[test]
    fn one_minute_delay() {
        let p = profile(vec![30.0; MINUTES_PER_DAY]);
        let mut mask = MinuteMask::empty();
        mask.set(500, true);
        let d = delay_vehicle_hours(&p, &mask, &meta("S", 0));
        assert!((d.vehicle_hours - 1.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn faster_than_reference_is_clamped() {
        let p = profile(vec![65.0; MINUTES_PER_DAY]);
        let d = delay_vehicle_hours(&p, &MinuteMask::full(), &meta("S", 0));
        assert_eq!(d.vehicle_hours, 0.0);
    }

    #[test]
    fn standstill_uses_floor_speed() {
        let p = profile(vec![0.0; MINUTES_PER_DAY]);
        let mut mask = MinuteMask::empty();
        mask.set(0, true);
        let d = delay_vehicle_hours(&p, &mask, &meta("S", 0));
        assert_eq!(d.floor_capped_minutes, 1);
        assert!((d.vehicle_hours - 0.5 * (1.0 - 1.0 / 60.0)).abs() < 1e-15);
    }

    #[test]
    fn cost_examples() {
        let mut params = CongestionParams::default();
        assert_eq!(cost(2.0, &params), 0.0);
        params.value_of_time_per_hour = 20.0;
        assert_eq!(cost(2.0, &params), 40.0);
        params.value_of_time_per_hour = 24.0;
        assert!((cost(1.0 / 120.0, &params) - 0.2).abs() < 1e-12);
    }

    fn result(id: &str, hours: f64) -> DetectionResult {
        DetectionResult {
            segment_id: id.into(),
            per_day_masks: BTreeMap::new(),
            rc_profile: MinuteMask::empty(),
            avg_daily_congestion_hours: hours,
            rc_hours: 0.0,
            total_delay_vehicle_hours: hours / 10.0,
            total_cost: 0.0,
            floor_capped_minutes: 0,
        }
    }

    #[test]
    fn summary_rows_sorted_along_road() {
        let graph = build_graph(vec![meta("B", 1), meta("A", 0)]).unwrap();
        let table = segment_summary_table(&[result("B", 0.0), result("A", 1.0)], &graph).unwrap();
        let ids: Vec<_> = table
            .rows()
            .iter()
            .map(|r| r.segment_id.to_string())
            .collect();
        assert_eq!(ids, vec!["A", "B"]);
        assert_eq!(table.totals().avg_daily_congestion_hours, 1.0);
        let csv = table.to_csv();
        assert_eq!(csv.lines().next(), Some(SUMMARY_HEADER));
        assert_eq!(csv.lines().nth(1), Some("A,I-35,0,1,0,0.1,0"));
    }

    #[test]
    fn empty_summary_is_header_only() {
        let graph = build_graph(vec![meta("A", 0)]).unwrap();
        let table = segment_summary_table(&[], &graph).unwrap();
        assert_eq!(table.to_csv(), format!("{SUMMARY_HEADER}\n"));
    }

    #[test]
    fn unknown_segment_rejected() {
        let graph = build_graph(vec![meta("A", 0)]).unwrap();
        assert_eq!(
            segment_summary_table(&[result("Z", 1.0)], &graph),
            Err(AggregateError::UnknownSegment("Z".into()))
        );
    }

    #[test]
    fn merge_equals_single_pass() {
        let graph = build_graph((0..6).map(|i| meta(&format!("S{i}"), i)).collect()).unwrap();
        let results: Vec<_> = (0..6).map(|i| result(&format!("S{i}"), i as f64)).collect();
        let whole = segment_summary_table(&results, &graph).unwrap();
        let left = segment_summary_table(&results[3..], &graph).unwrap();
        let right = segment_summary_table(&results[..3], &graph).unwrap();
        assert_eq!(left.merge(right).unwrap(), whole);
        assert_eq!(whole.road_totals()["I-35"].avg_daily_congestion_hours, 15.0);
    }

    proptest! {
        #[test]
        fn delay_is_additive_and_nonnegative(
            speeds in proptest::collection::vec(0.0f64..90.0, MINUTES_PER_DAY),
            picks in proptest::collection::vec(any::<bool>(), MINUTES_PER_DAY),
            split in proptest::collection::vec(any::<bool>(), MINUTES_PER_DAY),
        ) {
            let p = profile(speeds);
            let m = meta("S", 0);
            let mask = MinuteMask::from_bools(&picks);
            let part_a = mask.intersection(&MinuteMask::from_bools(&split));
            let part_b = MinuteMask::from_fn(|i| mask.get(i) && !split[i]);
            let whole = delay_vehicle_hours(&p, &mask, &m).vehicle_hours;
            let a = delay_vehicle_hours(&p, &part_a, &m).vehicle_hours;
            let b = delay_vehicle_hours(&p, &part_b, &m).vehicle_hours;
            prop_assert!(whole >= 0.0 && a >= 0.0 && b >= 0.0);
            prop_assert!((whole - (a + b)).abs() <= 1e-9 * whole.max(1.0));
        }
    }
}
