//! Named, interchangeable pieces of the detector.
//!
//! Two families are pluggable: the rule that turns a day of congestion-index
//! values into a congestion mask, and the normalization that turns per-minute
//! day counts into a recurrence frequency. Built-ins are registered by
//! [`StrategyRegistry::with_builtins`]; callers can register their own under
//! new names and select them through [`CongestionParams`].

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::bitmask::{MinuteMask, MINUTES_PER_DAY};
use crate::model::{CongestionParams, ABSOLUTE_COUNT, PER_MONTH, PER_WEEK};

/// Registered name of the plain lookback rule.
pub const LOOKBACK: &str = "lookback";
/// Registered name of the lookback rule that labels whole episodes.
pub const LOOKBACK_BACKFILL: &str = "lookback_backfill";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StrategyError {
    #[error("unknown {family} strategy `{name}` (registered: {})", .known.join(", "))]
    Unknown {
        family: &'static str,
        name: String,
        known: Vec<String>,
    },
}

/// Turns per-minute congestion index values into a congestion mask.
///
/// `ci` has one slot per minute of day; slots not set in `valid` carry no
/// information and must never be flagged on their own.
pub trait MaskRule: Send + Sync {
    fn name(&self) -> &str;
    fn apply(&self, ci: &[f64], valid: &MinuteMask, params: &CongestionParams) -> MinuteMask;
}

/// Maps "minute i was congested on `count` of `days` observed days" to the
/// frequency compared against the RC threshold.
pub trait RcNormalizer: Send + Sync {
    fn name(&self) -> &str;
    fn normalize(&self, count: u32, days: usize) -> f64;
}

/// Minute i is congested when minutes `i - window ..= i` are all valid and
/// strictly above the CI threshold.
#[derive(Debug, Default, Clone, Copy)]
pub struct LookbackRule;

impl MaskRule for LookbackRule {
    fn name(&self) -> &str {
        LOOKBACK
    }

    fn apply(&self, ci: &[f64], valid: &MinuteMask, params: &CongestionParams) -> MinuteMask {
        debug_assert_eq!(ci.len(), MINUTES_PER_DAY);
        let needed = params.window_minutes + 1;
        let mut mask = MinuteMask::empty();
        let mut run = 0usize;
        for (minute, &value) in ci.iter().enumerate() {
            if valid.get(minute) && value > params.ci_threshold {
                run += 1;
                if run >= needed {
                    mask.set(minute, true);
                }
            } else {
                run = 0;
            }
        }
        mask
    }
}

/// Lookback rule, then every above-threshold run that produced a flag is
/// flagged from its first minute.
#[derive(Debug, Default, Clone, Copy)]
pub struct BackfillRule;

impl MaskRule for BackfillRule {
    fn name(&self) -> &str {
        LOOKBACK_BACKFILL
    }

    fn apply(&self, ci: &[f64], valid: &MinuteMask, params: &CongestionParams) -> MinuteMask {
        let mut mask = LookbackRule.apply(ci, valid, params);
        let needed = params.window_minutes + 1;
        let mut run_start = None;
        // Trailing sentinel closes a run that reaches the end of the day.
        for (minute, &value) in ci.iter().chain([f64::NAN].iter()).enumerate() {
            let above =
                minute < MINUTES_PER_DAY && valid.get(minute) && value > params.ci_threshold;
            match (above, run_start) {
                (true, None) => run_start = Some(minute),
                (false, Some(start)) => {
                    if minute - start >= needed {
                        mask.set_range(start, minute - 1, true);
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        mask
    }
}

/// Occurrences per week of observed data: `count / (days / 7)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct PerWeek;

impl RcNormalizer for PerWeek {
    fn name(&self) -> &str {
        PER_WEEK
    }

    fn normalize(&self, count: u32, days: usize) -> f64 {
        count as f64 / (days as f64 / 7.0)
    }
}

/// Occurrences per average month: `count / (days / 30.4375)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct PerMonth;

impl RcNormalizer for PerMonth {
    fn name(&self) -> &str {
        PER_MONTH
    }

    fn normalize(&self, count: u32, days: usize) -> f64 {
        count as f64 / (days as f64 / 30.4375)
    }
}

/// Raw number of congested days.
#[derive(Debug, Default, Clone, Copy)]
pub struct AbsoluteCount;

impl RcNormalizer for AbsoluteCount {
    fn name(&self) -> &str {
        ABSOLUTE_COUNT
    }

    fn normalize(&self, count: u32, _days: usize) -> f64 {
        count as f64
    }
}

#[derive(Clone, Default)]
pub struct StrategyRegistry {
    mask_rules: BTreeMap<String, Arc<dyn MaskRule>>,
    normalizers: BTreeMap<String, Arc<dyn RcNormalizer>>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut registry = Self::new();
        registry.register_mask_rule(Arc::new(LookbackRule));
        registry.register_mask_rule(Arc::new(BackfillRule));
        registry.register_normalizer(Arc::new(PerWeek));
        registry.register_normalizer(Arc::new(PerMonth));
        registry.register_normalizer(Arc::new(AbsoluteCount));
        registry
    }

    /// Shared registry holding only the built-ins.
    pub fn builtin() -> &'static StrategyRegistry {
        static BUILTIN: OnceLock<StrategyRegistry> = OnceLock::new();
        BUILTIN.get_or_init(Self::with_builtins)
    }

    /// Registers under the rule's own name, replacing any previous entry.
    pub fn register_mask_rule(&mut self, rule: Arc<dyn MaskRule>) {
        self.mask_rules.insert(rule.name().to_string(), rule);
    }

    pub fn register_normalizer(&mut self, normalizer: Arc<dyn RcNormalizer>) {
        self.normalizers
            .insert(normalizer.name().to_string(), normalizer);
    }

    pub fn mask_rule(&self, name: &str) -> Result<Arc<dyn MaskRule>, StrategyError> {
        self.mask_rules
            .get(name)
            .cloned()
            .ok_or_else(|| StrategyError::Unknown {
                family: "mask rule",
                name: name.to_string(),
                known: self.mask_rules.keys().cloned().collect(),
            })
    }

    pub fn normalizer(&self, name: &str) -> Result<Arc<dyn RcNormalizer>, StrategyError> {
        self.normalizers
            .get(name)
            .cloned()
            .ok_or_else(|| StrategyError::Unknown {
                family: "RC normalization",
                name: name.to_string(),
                known: self.normalizers.keys().cloned().collect(),
            })
    }

    pub fn mask_rule_names(&self) -> impl Iterator<Item = &str> {
        self.mask_rules.keys().map(String::as_str)
    }

    pub fn normalizer_names(&self) -> impl Iterator<Item = &str> {
        self.normalizers.keys().map(String::as_str)
    }

    /// The mask rule `params` asks for.
    pub fn mask_rule_for(
        &self,
        params: &CongestionParams,
    ) -> Result<Arc<dyn MaskRule>, StrategyError> {
        self.mask_rule(if params.backfill_runs {
            LOOKBACK_BACKFILL
        } else {
            LOOKBACK
        })
    }

    pub fn normalizer_for(
        &self,
        params: &CongestionParams,
    ) -> Result<Arc<dyn RcNormalizer>, StrategyError> {
        self.normalizer(&params.rc_normalization)
    }
}

impl std::fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StrategyRegistry")
            .field("mask_rules", &self.mask_rules.keys().collect::<Vec<_>>())
            .field("normalizers", &self.normalizers.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_registered() {
        let registry = StrategyRegistry::builtin();
        assert_eq!(
            registry.normalizer_names().collect::<Vec<_>>(),
            vec![ABSOLUTE_COUNT, PER_MONTH, PER_WEEK]
        );
        assert_eq!(
            registry.mask_rule_names().collect::<Vec<_>>(),
            vec![LOOKBACK, LOOKBACK_BACKFILL]
        );
    }

    #[test]
    fn unknown_name_lists_known() {
        let err = StrategyRegistry::builtin()
            .normalizer("per_fortnight")
            .err()
            .unwrap();
        assert!(err.to_string().contains("per_week"), "{err}");
    }

    struct PerDay;

    impl RcNormalizer for PerDay {
        fn name(&self) -> &str {
            "per_day"
        }

        fn normalize(&self, count: u32, days: usize) -> f64 {
            count as f64 / days as f64
        }
    }

    #[test]
    fn custom_normalizer_is_selectable() {
        let mut registry = StrategyRegistry::with_builtins();
        registry.register_normalizer(Arc::new(PerDay));
        let params = CongestionParams {
            rc_normalization: "per_day".into(),
            ..Default::default()
        };
        let n = registry.normalizer_for(&params).unwrap();
        assert_eq!(n.normalize(5, 10), 0.5);
    }

    #[test]
    fn backfill_flag_selects_rule() {
        let registry = StrategyRegistry::builtin();
        let mut params = CongestionParams::default();
        assert_eq!(registry.mask_rule_for(&params).unwrap().name(), LOOKBACK);
        params.backfill_runs = true;
        assert_eq!(
            registry.mask_rule_for(&params).unwrap().name(),
            LOOKBACK_BACKFILL
        );
    }
}
