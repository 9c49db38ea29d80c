//! Synthetic probe-speed corpora with planted congestion episodes.
//!
//! Each segment draws from its own ChaCha stream seeded from the scenario seed
//! and the segment's position, so output is reproducible and independent of
//! generation order.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmask::{MinuteMask, MINUTES_PER_DAY};
use crate::model::{SegmentDayProfile, SegmentId, SegmentMeta, SpeedRecord};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub name: String,
    pub segment_count: u32,
    pub length_miles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaySelector {
    EveryDay,
    Weekdays,
    /// Zero-based day offsets from the scenario start date.
    DayList(Vec<u32>),
}

impl DaySelector {
    fn selects(&self, offset: u32, date: NaiveDate) -> bool {
        match self {
            DaySelector::EveryDay => true,
            DaySelector::Weekdays => !matches!(date.weekday(), Weekday::Sat | Weekday::Sun),
            DaySelector::DayList(days) => days.contains(&offset),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEpisode {
    /// Restricts the episode to one road; all roads when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road: Option<String>,
    /// Inclusive order_index interval.
    pub segment_range: [u32; 2],
    /// Inclusive minute-of-day interval.
    pub minute_range: [u16; 2],
    pub days: DaySelector,
    pub congested_speed_mph: f64,
}

fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    #[serde(default = "default_start_date")]
    pub start_date: NaiveDate,
    pub days: u32,
    pub free_flow_mph: f64,
    #[serde(default)]
    pub noise_sigma_mph: f64,
    /// Probability that a minute goes unreported, for gap-policy tests.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub dropout_prob: f64,
    pub roads: Vec<RoadSpec>,
    #[serde(default)]
    pub episodes: Vec<PlantedEpisode>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.days < 1 {
            return Err(invalid("days", "days ≥ 1 required"));
        }
        if !(self.free_flow_mph > 0.0 && self.free_flow_mph.is_finite()) {
            return Err(invalid("free_flow_mph", "must be > 0"));
        }
        if !(self.noise_sigma_mph >= 0.0 && self.noise_sigma_mph.is_finite()) {
            return Err(invalid("noise_sigma_mph", "must be ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(invalid("dropout_prob", "must be in [0, 1)"));
        }
        if self.roads.is_empty() {
            return Err(invalid("roads", "at least one road required"));
        }
        for (i, road) in self.roads.iter().enumerate() {
            if road.segment_count < 1 {
                return Err(invalid(
                    format!("roads[{i}].segment_count"),
                    "segment_count ≥ 1 required",
                ));
            }
            if !(road.length_miles > 0.0 && road.length_miles.is_finite()) {
                return Err(invalid(format!("roads[{i}].length_miles"), "must be > 0"));
            }
            if self.roads[..i].iter().any(|r| r.name == road.name) {
                return Err(invalid(
                    format!("roads[{i}].name"),
                    format!("duplicate road {}", road.name),
                ));
            }
            if road.name.is_empty() || road.name.contains(',') {
                return Err(invalid(
                    format!("roads[{i}].name"),
                    "must be non-empty without commas",
                ));
            }
        }
        for (i, ep) in self.episodes.iter().enumerate() {
            let field = |f: &str| format!("episodes[{i}].{f}");
            if let Some(road) = &ep.road {
                if !self.roads.iter().any(|r| &r.name == road) {
                    return Err(invalid(field("road"), format!("unknown road {road}")));
                }
            }
            if ep.segment_range[0] > ep.segment_range[1] {
                return Err(invalid(field("segment_range"), "start after end"));
            }
            let [m0, m1] = ep.minute_range;
            if m0 > m1 || m1 as usize >= MINUTES_PER_DAY {
                return Err(invalid(
                    field("minute_range"),
                    "must be an interval within 0..=1439",
                ));
            }
            if !(ep.congested_speed_mph >= 0.0 && ep.congested_speed_mph < self.free_flow_mph) {
                return Err(invalid(
                    field("congested_speed_mph"),
                    "must be ≥ 0 and below free_flow_mph",
                ));
            }
        }
        Ok(())
    }

    pub fn segments(&self) -> Vec<SegmentMeta> {
        self.roads
            .iter()
            .flat_map(|road| {
                (0..road.segment_count).map(move |i| SegmentMeta {
                    segment_id: segment_id(&road.name, i),
                    road: road.name.clone(),
                    order_index: i,
                    length_miles: road.length_miles,
                    weight: 1.0,
                })
            })
            .collect()
    }

    pub fn dates(&self) -> impl Iterator<Item = (u32, NaiveDate)> + '_ {
        (0..self.days).map(|d| (d, self.start_date + Days::new(d as u64)))
    }

    /// Same scenario with `days` scaled by `factor`.
    pub fn with_days(&self, days: u32) -> Self {
        Self {
            days,
            ..self.clone()
        }
    }
}

pub fn segment_id(road: &str, order_index: u32) -> SegmentId {
    SegmentId::new(format!("{road}-{order_index:04}"))
}

/// Planted cells per (segment, date); every generated segment-day has an entry.
pub type TruthMasks = BTreeMap<(SegmentId, NaiveDate), MinuteMask>;

#[derive(Debug, Clone, Default)]
pub struct GeneratedCorpus {
    pub segments: Vec<SegmentMeta>,
    pub records: Vec<SpeedRecord>,
    pub truth: TruthMasks,
    /// Cells planted by more than one episode; the later episode's speed wins.
    pub overlap_warnings: u64,
}

struct SegmentDay {
    speeds: Vec<f64>,
    present: MinuteMask,
    planted: MinuteMask,
}

fn sub_seed(seed: u64, segment_index: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        ^ segment_index
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn generate_segment<F>(spec: &ScenarioSpec, index: usize, meta: &SegmentMeta, mut emit: F) -> u64
where
    F: FnMut(NaiveDate, SegmentDay),
{
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, index as u64));
    let noise = Normal::new(0.0, spec.noise_sigma_mph).expect("sigma validated");
    let episodes: Vec<&PlantedEpisode> = spec
        .episodes
        .iter()
        .filter(|ep| ep.road.as_ref().is_none_or(|r| *r == meta.road))
        .filter(|ep| (ep.segment_range[0]..=ep.segment_range[1]).contains(&meta.order_index))
        .collect();

    let mut total_overlaps = 0;
    for (offset, date) in spec.dates() {
        let mut regime = vec![spec.free_flow_mph; MINUTES_PER_DAY];
        let mut planted = MinuteMask::empty();
        let mut overlaps = 0;
        for ep in episodes.iter().filter(|ep| ep.days.selects(offset, date)) {
            let [m0, m1] = ep.minute_range;
            let (m0, m1) = (m0 as usize, m1 as usize);
            overlaps += planted
                .intersection(&MinuteMask::from_runs(&[(m0, m1)]))
                .count_ones() as u64;
            planted.set_range(m0, m1, true);
            regime[m0..=m1].fill(ep.congested_speed_mph);
        }
        let mut present = MinuteMask::full();
        let speeds = regime
            .iter()
            .enumerate()
            .map(|(m, &base)| {
                let s: f64 = base + noise.sample(&mut rng);
                if spec.dropout_prob > 0.0 && rng.random::<f64>() < spec.dropout_prob {
                    present.set(m, false);
                }
                s.max(0.0)
            })
            .collect();
        total_overlaps += overlaps;
        emit(
            date,
            SegmentDay {
                speeds,
                present,
                planted,
            },
        );
    }
    total_overlaps
}

/// Records plus ground truth for a scenario.
pub fn generate(spec: &ScenarioSpec) -> Result<GeneratedCorpus, ScenarioError> {
    spec.validate()?;
    let segments = spec.segments();
    let mut corpus = GeneratedCorpus::default();
    for (index, meta) in segments.iter().enumerate() {
        corpus.overlap_warnings += generate_segment(spec, index, meta, |date, day| {
            corpus
                .truth
                .insert((meta.segment_id.clone(), date), day.planted);
            for (minute, &speed) in day.speeds.iter().enumerate() {
                if day.present.get(minute) {
                    corpus.records.push(SpeedRecord {
                        segment_id: meta.segment_id.clone(),
                        date,
                        minute: minute as u16,
                        speed_mph: speed,
                        reference_speed_mph: spec.free_flow_mph,
                    });
                }
            }
        });
    }
    corpus.segments = segments;
    Ok(corpus)
}

/// Profiles equivalent to ingesting [`generate`]'s records with no gap
/// filling, without materializing the records.
pub fn generate_profiles(
    spec: &ScenarioSpec,
) -> Result<(Vec<SegmentMeta>, Vec<SegmentDayProfile>), ScenarioError> {
    spec.validate()?;
    let segments = spec.segments();
    let mut profiles = Vec::with_capacity(segments.len() * spec.days as usize);
    for (index, meta) in segments.iter().enumerate() {
        generate_segment(spec, index, meta, |date, day| {
            let mut speeds = day.speeds;
            let mut refs = vec![spec.free_flow_mph; MINUTES_PER_DAY];
            for m in 0..MINUTES_PER_DAY {
                if !day.present.get(m) {
                    speeds[m] = 0.0;
                    refs[m] = 0.0;
                }
            }
            profiles.push(
                SegmentDayProfile::new(meta.segment_id.clone(), date, speeds, refs, day.present)
                    .expect("generated speeds are valid"),
            );
        });
    }
    Ok((segments, profiles))
}

pub const TRUTH_HEADER: &str = "segment_id,date,minute";

/// One line per planted cell, ordered by segment, date, minute.
pub fn write_truth_csv<W: Write>(mut out: W, truth: &TruthMasks) -> std::io::Result<()> {
    writeln!(out, "{TRUTH_HEADER}")?;
    for ((id, date), mask) in truth {
        for minute in mask.iter_ones() {
            writeln!(out, "{id},{date},{minute}")?;
        }
    }
    out.flush()
}
