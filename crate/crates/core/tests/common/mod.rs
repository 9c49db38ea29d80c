//! Test-only oracles, written independently of the library's detection path.
#![allow(dead_code)]

use chrono::NaiveDate;
use freeway_congestion::synth::{DaySelector, PlantedEpisode, RoadSpec, ScenarioSpec};
use freeway_congestion::{CongestionParams, MinuteMask, SegmentDayProfile, MINUTES_PER_DAY};
use proptest::prelude::*;

/// Direct reading of the lookback rule: minute i is congested iff every
/// minute in i-window..=i is valid with (RS-S)/(RS+S) strictly above the
/// threshold. O(N * W).
pub fn brute_force_mask(profile: &SegmentDayProfile, threshold: f64, window: usize) -> Vec<bool> {
    let mut out = vec![false; MINUTES_PER_DAY];
    for (i, slot) in out.iter_mut().enumerate() {
        if i < window {
            continue;
        }
        let mut all = true;
        for j in (i - window)..=i {
            let s = profile.speeds()[j];
            let rs = profile.reference_speeds()[j];
            if !profile.valid().get(j) || (rs - s) / (rs + s) <= threshold {
                all = false;
                break;
            }
        }
        *slot = all;
    }
    out
}

pub fn mask_to_bools(mask: &MinuteMask) -> Vec<bool> {
    (0..MINUTES_PER_DAY).map(|m| mask.get(m)).collect()
}

/// Planted runs with the first `window` minutes of each removed; what the
/// lookback rule must report on noiseless data.
pub fn expected_from_truth(truth: &MinuteMask, window: usize) -> MinuteMask {
    let mut out = MinuteMask::empty();
    for (start, end) in truth.runs() {
        if end >= start + window {
            out.set_range(start + window, end, true);
        }
    }
    out
}

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Two roads, weekday peaks on a corridor and a weekend-only episode elsewhere.
pub fn planted_scenario(
    segments_per_road: u32,
    days: u32,
    sigma: f64,
    congested_mph: f64,
) -> ScenarioSpec {
    let half = segments_per_road / 2;
    ScenarioSpec {
        seed: 20180101,
        start_date: date(2018, 1, 1),
        days,
        free_flow_mph: 65.0,
        noise_sigma_mph: sigma,
        dropout_prob: 0.0,
        roads: vec![
            RoadSpec {
                name: "I-35".into(),
                segment_count: segments_per_road,
                length_miles: 0.5,
            },
            RoadSpec {
                name: "I-80".into(),
                segment_count: segments_per_road,
                length_miles: 0.45,
            },
        ],
        episodes: vec![
            PlantedEpisode {
                road: Some("I-35".into()),
                segment_range: [0, half.saturating_sub(1)],
                minute_range: [420, 530],
                days: DaySelector::Weekdays,
                congested_speed_mph: congested_mph,
            },
            PlantedEpisode {
                road: Some("I-35".into()),
                segment_range: [0, half.saturating_sub(1)],
                minute_range: [960, 1065],
                days: DaySelector::Weekdays,
                congested_speed_mph: congested_mph,
            },
            PlantedEpisode {
                road: Some("I-80".into()),
                segment_range: [half, segments_per_road - 1],
                minute_range: [700, 730],
                days: DaySelector::DayList(vec![5, 6]),
                congested_speed_mph: congested_mph,
            },
        ],
    }
}

/// Chunks of (length, kind, level, reference speed) laid end to end.
/// Kinds: 0 free flow, 1 congested, 2 unobserved, 3 exactly at threshold.
pub fn arb_profile() -> impl Strategy<Value = SegmentDayProfile> {
    proptest::collection::vec((1usize..50, 0u8..4, 0.0f64..1.0, 30.0f64..80.0), 30..160).prop_map(
        |chunks| {
            let mut speeds = Vec::with_capacity(MINUTES_PER_DAY);
            let mut refs = Vec::with_capacity(MINUTES_PER_DAY);
            let mut valid = Vec::with_capacity(MINUTES_PER_DAY);
            'fill: loop {
                for &(len, kind, level, rs) in &chunks {
                    for _ in 0..len {
                        if speeds.len() == MINUTES_PER_DAY {
                            break 'fill;
                        }
                        let ci: f64 = match kind {
                            0 => -0.2 + 0.35 * level,
                            1 => 0.151 + 0.8 * level,
                            _ => 0.15,
                        };
                        let speed = rs * (1.0 - ci) / (1.0 + ci);
                        let observed = kind != 2;
                        speeds.push(if observed { speed } else { 0.0 });
                        refs.push(if observed { rs } else { 0.0 });
                        valid.push(observed);
                    }
                }
            }
            SegmentDayProfile::new(
                "S".into(),
                date(2018, 3, 1),
                speeds,
                refs,
                MinuteMask::from_bools(&valid),
            )
            .unwrap()
        },
    )
}

pub fn arb_params() -> impl Strategy<Value = CongestionParams> {
    (0.05f64..0.5, 1usize..40).prop_map(|(ci_threshold, window_minutes)| CongestionParams {
        ci_threshold,
        window_minutes,
        ..Default::default()
    })
}
