//! Congestion index, sustained-congestion masks and the recurrence indicator.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::NaiveDate;
use thiserror::Error;

use crate::aggregate;
use crate::bitmask::{MinuteMask, MINUTES_PER_DAY};
use crate::model::{
    CongestionParams, DetectionResult, ModelError, SegmentDayProfile, SegmentId, SegmentMeta,
};
use crate::strategy::{MaskRule, RcNormalizer, StrategyError, StrategyRegistry};

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("congestion index undefined for speed {speed} and reference speed {reference}")]
    Domain { speed: f64, reference: f64 },
    #[error("segment {0}: no profiles to detect on")]
    NoProfiles(SegmentId),
    #[error("segment {expected}: got a profile for {found}")]
    MixedSegments {
        expected: SegmentId,
        found: SegmentId,
    },
    #[error("segment {segment}: two profiles for {date}")]
    DuplicateDate { segment: SegmentId, date: NaiveDate },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Params(#[from] ModelError),
}

/// `(RS - S) / (RS + S)`: 0 at reference speed, 1 at standstill.
pub fn congestion_index(speed: f64, reference_speed: f64) -> Result<f64, DetectError> {
    if !(reference_speed > 0.0 && reference_speed.is_finite() && speed >= 0.0 && speed.is_finite())
    {
        return Err(DetectError::Domain {
            speed,
            reference: reference_speed,
        });
    }
    Ok(ci_unchecked(speed, reference_speed))
}

#[inline]
fn ci_unchecked(speed: f64, reference_speed: f64) -> f64 {
    (reference_speed - speed) / (reference_speed + speed)
}

/// Per-minute CI; invalid minutes get `f64::NAN`, which never exceeds a threshold.
pub fn ci_series(profile: &SegmentDayProfile) -> Vec<f64> {
    let valid = profile.valid();
    profile
        .speeds()
        .iter()
        .zip(profile.reference_speeds())
        .enumerate()
        .map(|(minute, (&s, &rs))| {
            if valid.get(minute) {
                ci_unchecked(s, rs)
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Congestion mask of one segment-day under the built-in rule `params` selects.
pub fn congestion_mask(profile: &SegmentDayProfile, params: &CongestionParams) -> MinuteMask {
    let rule = StrategyRegistry::builtin()
        .mask_rule_for(params)
        .expect("built-in mask rules are always registered");
    rule.apply(&ci_series(profile), profile.valid(), params)
}

/// Minute-of-day slots congested frequently enough across the given days.
pub fn rc_profile(
    per_day_masks: &BTreeMap<NaiveDate, MinuteMask>,
    params: &CongestionParams,
) -> Result<MinuteMask, DetectError> {
    let normalizer = StrategyRegistry::builtin().normalizer_for(params)?;
    Ok(rc_with(
        normalizer.as_ref(),
        per_day_masks.values(),
        params.rc_threshold,
    ))
}

fn rc_with<'a>(
    normalizer: &dyn RcNormalizer,
    masks: impl ExactSizeIterator<Item = &'a MinuteMask> + Clone,
    threshold: f64,
) -> MinuteMask {
    let days = masks.len();
    if days == 0 {
        return MinuteMask::empty();
    }
    let mut counts = [0u32; MINUTES_PER_DAY];
    for mask in masks {
        for minute in mask.iter_ones() {
            counts[minute] += 1;
        }
    }
    MinuteMask::from_fn(|m| counts[m] > 0 && normalizer.normalize(counts[m], days) > threshold)
}

/// Parameters with their strategies resolved, ready to run on many segments.
#[derive(Clone)]
pub struct Detector {
    params: CongestionParams,
    mask_rule: Arc<dyn MaskRule>,
    normalizer: Arc<dyn RcNormalizer>,
}

impl Detector {
    pub fn new(params: CongestionParams, registry: &StrategyRegistry) -> Result<Self, DetectError> {
        params.validate()?;
        let mask_rule = registry.mask_rule_for(&params)?;
        let normalizer = registry.normalizer_for(&params)?;
        Ok(Self {
            params,
            mask_rule,
            normalizer,
        })
    }

    pub fn params(&self) -> &CongestionParams {
        &self.params
    }

    pub fn mask(&self, profile: &SegmentDayProfile) -> MinuteMask {
        self.mask_rule
            .apply(&ci_series(profile), profile.valid(), &self.params)
    }

    pub fn rc(&self, per_day_masks: &BTreeMap<NaiveDate, MinuteMask>) -> MinuteMask {
        rc_with(
            self.normalizer.as_ref(),
            per_day_masks.values(),
            self.params.rc_threshold,
        )
    }

    /// Runs every stage on all days of one segment.
    pub fn detect_segment(
        &self,
        profiles: &[SegmentDayProfile],
        meta: &SegmentMeta,
    ) -> Result<DetectionResult, DetectError> {
        if profiles.is_empty() {
            return Err(DetectError::NoProfiles(meta.segment_id.clone()));
        }
        let mut ordered: Vec<&SegmentDayProfile> = profiles.iter().collect();
        ordered.sort_by_key(|p| p.date());

        let mut per_day_masks = BTreeMap::new();
        let mut delay = 0.0;
        let mut capped = 0u64;
        for profile in ordered {
            if profile.segment_id() != &meta.segment_id {
                return Err(DetectError::MixedSegments {
                    expected: meta.segment_id.clone(),
                    found: profile.segment_id().clone(),
                });
            }
            let mask = self.mask(profile);
            let day_delay = aggregate::delay_vehicle_hours(profile, &mask, meta);
            delay += day_delay.vehicle_hours;
            capped += day_delay.floor_capped_minutes;
            if per_day_masks.insert(profile.date(), mask).is_some() {
                return Err(DetectError::DuplicateDate {
                    segment: meta.segment_id.clone(),
                    date: profile.date(),
                });
            }
        }

        let rc_profile = self.rc(&per_day_masks);
        let congested: u64 = per_day_masks.values().map(|m| m.count_ones() as u64).sum();
        Ok(DetectionResult {
            segment_id: meta.segment_id.clone(),
            avg_daily_congestion_hours: congested as f64 / (60.0 * per_day_masks.len() as f64),
            rc_hours: rc_profile.count_ones() as f64 / 60.0,
            rc_profile,
            per_day_masks,
            total_delay_vehicle_hours: delay,
            total_cost: aggregate::cost(delay, &self.params),
            floor_capped_minutes: capped,
        })
    }
}

impl std::fmt::Debug for Detector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Detector")
            .field("params", &self.params)
            .field("mask_rule", &self.mask_rule.name())
            .field("normalizer", &self.normalizer.name())
            .finish()
    }
}

/// One-shot detection with the built-in strategies.
pub fn detect_segment(
    profiles: &[SegmentDayProfile],
    meta: &SegmentMeta,
    params: &CongestionParams,
) -> Result<DetectionResult, DetectError> {
    Detector::new(params.clone(), StrategyRegistry::builtin())?.detect_segment(profiles, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ABSOLUTE_COUNT, PER_MONTH};

    const RS: f64 = 60.0;
    const SLOW: f64 = 30.0; // CI = 1/3
    const FREE: f64 = 60.0; // CI = 0

    fn date(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2018, 3, day).unwrap()
    }

    fn profile_with_slow(runs: &[(usize, usize)], invalid: &[usize]) -> SegmentDayProfile {
        let mut speeds = vec![FREE; MINUTES_PER_DAY];
        for &(a, b) in runs {
            speeds[a..=b].fill(SLOW);
        }
        let mut valid = MinuteMask::full();
        for &m in invalid {
            valid.set(m, false);
            speeds[m] = 0.0;
        }
        let mut refs = vec![RS; MINUTES_PER_DAY];
        for &m in invalid {
            refs[m] = 0.0;
        }
        SegmentDayProfile::new("S001".into(), date(1), speeds, refs, valid).unwrap()
    }

    /// Independent double-loop scan of the lookback rule.
    fn brute_force(profile: &SegmentDayProfile, params: &CongestionParams) -> MinuteMask {
        let w = params.window_minutes;
        MinuteMask::from_fn(|i| {
            if i < w {
                return false;
            }
            (i - w..=i).all(|j| {
                profile.valid().get(j)
                    && (profile.reference_speeds()[j] - profile.speeds()[j])
                        / (profile.reference_speeds()[j] + profile.speeds()[j])
                        > params.ci_threshold
            })
        })
    }

    #[test]
    fn ci_examples() {
        assert_eq!(congestion_index(65.0, 65.0).unwrap(), 0.0);
        assert_eq!(congestion_index(0.0, 65.0).unwrap(), 1.0);
        assert!((congestion_index(30.0, 70.0).unwrap() - 0.4).abs() <= 1e-12 * 0.4);
        let theta = 0.15;
        let s = 60.0 * (1.0 - theta) / (1.0 + theta);
        assert!((congestion_index(s, 60.0).unwrap() - theta).abs() <= 1e-12 * theta);
    }

    #[test]
    fn ci_domain_errors() {
        assert!(congestion_index(30.0, 0.0).is_err());
        assert!(congestion_index(30.0, -5.0).is_err());
        assert!(congestion_index(-1.0, 60.0).is_err());
    }

    #[test]
    fn short_run_is_never_congested() {
        let params = CongestionParams::default();
        let p = profile_with_slow(&[(100, 110)], &[]);
        assert!(!congestion_mask(&p, &params).any());
        assert_eq!(congestion_mask(&p, &params), brute_force(&p, &params));
    }

    #[test]
    fn long_run_flags_after_lookback() {
        let params = CongestionParams::default();
        let p = profile_with_slow(&[(100, 130)], &[]);
        let mask = congestion_mask(&p, &params);
        assert_eq!(mask.runs(), vec![(115, 130)]);
        assert_eq!(mask, brute_force(&p, &params));
    }

    #[test]
    fn backfill_labels_whole_run() {
        let params = CongestionParams {
            backfill_runs: true,
            ..Default::default()
        };
        let p = profile_with_slow(&[(100, 130), (200, 210)], &[]);
        assert_eq!(congestion_mask(&p, &params).runs(), vec![(100, 130)]);
    }

    #[test]
    fn threshold_is_strict() {
        let theta = 0.15;
        let s = 60.0 * (1.0 - theta) / (1.0 + theta);
        let ci = congestion_index(s, 60.0).unwrap();
        // Pick a threshold exactly equal to the computed CI.
        let params = CongestionParams {
            ci_threshold: ci,
            ..Default::default()
        };
        let p = SegmentDayProfile::from_speeds("S".into(), date(1), vec![s; MINUTES_PER_DAY], 60.0)
            .unwrap();
        assert!(!congestion_mask(&p, &params).any());
    }

    #[test]
    fn invalid_minute_breaks_window() {
        let params = CongestionParams::default();
        let p = profile_with_slow(&[(100, 130)], &[115]);
        let mask = congestion_mask(&p, &params);
        assert!(!mask.any());
        assert_eq!(mask, brute_force(&p, &params));

        let p = profile_with_slow(&[(100, 140)], &[115]);
        assert_eq!(congestion_mask(&p, &params).runs(), vec![(131, 140)]);
    }

    #[test]
    fn all_invalid_is_all_false() {
        let p = SegmentDayProfile::new(
            "S".into(),
            date(1),
            vec![0.0; MINUTES_PER_DAY],
            vec![0.0; MINUTES_PER_DAY],
            MinuteMask::empty(),
        )
        .unwrap();
        assert!(!congestion_mask(&p, &CongestionParams::default()).any());
    }

    fn masks_with_count(
        days: usize,
        congested_days: usize,
        minute: usize,
    ) -> BTreeMap<NaiveDate, MinuteMask> {
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        (0..days)
            .map(|d| {
                let mut m = MinuteMask::empty();
                if d < congested_days {
                    m.set(minute, true);
                }
                (start + chrono::Days::new(d as u64), m)
            })
            .collect()
    }

    #[test]
    fn rc_examples_per_week() {
        let params = CongestionParams::default();
        assert!(!rc_profile(&masks_with_count(7, 0, 480), &params)
            .unwrap()
            .any());
        assert!(rc_profile(&masks_with_count(7, 4, 480), &params)
            .unwrap()
            .get(480));
        assert!(!rc_profile(&masks_with_count(365, 156, 480), &params)
            .unwrap()
            .get(480));
        assert!(rc_profile(&masks_with_count(365, 160, 480), &params)
            .unwrap()
            .get(480));
    }

    #[test]
    fn rc_absolute_and_monthly() {
        let params = CongestionParams {
            rc_normalization: ABSOLUTE_COUNT.into(),
            ..Default::default()
        };
        let rc = rc_profile(&masks_with_count(365, 4, 480), &params).unwrap();
        assert_eq!(rc.iter_ones().collect::<Vec<_>>(), vec![480]);

        // 365 days is 11.99 average months: 13 days → 1.08, 11 days → 0.92 per month.
        let params = CongestionParams {
            rc_normalization: PER_MONTH.into(),
            rc_threshold: 1.0,
            ..Default::default()
        };
        assert!(rc_profile(&masks_with_count(365, 13, 480), &params)
            .unwrap()
            .get(480));
        assert!(!rc_profile(&masks_with_count(365, 11, 480), &params)
            .unwrap()
            .get(480));
    }

    #[test]
    fn unknown_normalization_is_an_error() {
        let params = CongestionParams {
            rc_normalization: "per_fortnight".into(),
            ..Default::default()
        };
        assert!(matches!(
            rc_profile(&masks_with_count(7, 4, 480), &params),
            Err(DetectError::Strategy(_))
        ));
    }

    fn meta() -> SegmentMeta {
        SegmentMeta::new("S001", "I-35", 0, 0.5).unwrap()
    }

    #[test]
    fn segment_without_congestion() {
        let p = profile_with_slow(&[], &[]);
        let r = detect_segment(&[p], &meta(), &CongestionParams::default()).unwrap();
        assert_eq!(r.avg_daily_congestion_hours, 0.0);
        assert_eq!(r.rc_hours, 0.0);
        assert_eq!(r.total_delay_vehicle_hours, 0.0);
    }

    #[test]
    fn average_hours_over_two_days() {
        // 135 slow minutes flag 120 minutes after the 15-minute lookback.
        let day1 = profile_with_slow(&[(400, 534)], &[]);
        let day2 =
            SegmentDayProfile::from_speeds("S001".into(), date(2), vec![FREE; MINUTES_PER_DAY], RS)
                .unwrap();
        let r = detect_segment(&[day2, day1], &meta(), &CongestionParams::default()).unwrap();
        assert_eq!(r.per_day_masks[&date(1)].count_ones(), 120);
        assert_eq!(r.avg_daily_congestion_hours, 1.0);
        // Two days is 2/7 weeks; one occurrence is 3.5 per week > 3.
        assert_eq!(r.rc_hours, 2.0);
    }

    #[test]
    fn end_to_end_matches_brute_force() {
        let params = CongestionParams::default();
        let p = profile_with_slow(&[(100, 130)], &[]);
        let r = detect_segment(std::slice::from_ref(&p), &meta(), &params).unwrap();
        let expected = brute_force(&p, &params);
        assert_eq!(r.per_day_masks[&date(1)], expected);
        // A single day is 1/7 week, so every congested minute is recurrent.
        assert_eq!(r.rc_profile, expected);
        assert_eq!(r.rc_hours, 16.0 / 60.0);
        let delay = 16.0 * 0.5 * (1.0 / SLOW - 1.0 / RS);
        assert!((r.total_delay_vehicle_hours - delay).abs() < 1e-12);
    }

    #[test]
    fn detect_errors() {
        let params = CongestionParams::default();
        assert_eq!(
            detect_segment(&[], &meta(), &params),
            Err(DetectError::NoProfiles("S001".into()))
        );
        let other =
            SegmentDayProfile::from_speeds("S002".into(), date(1), vec![FREE; MINUTES_PER_DAY], RS)
                .unwrap();
        assert!(matches!(
            detect_segment(&[other], &meta(), &params),
            Err(DetectError::MixedSegments { .. })
        ));
        let p = profile_with_slow(&[], &[]);
        assert!(matches!(
            detect_segment(&[p.clone(), p], &meta(), &params),
            Err(DetectError::DuplicateDate { .. })
        ));
    }
}
