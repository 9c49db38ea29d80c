//! Fixed-width 1440-slot bitset used for validity, congestion and RC masks.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Minutes in a day; every profile and mask has exactly this many slots.
pub const MINUTES_PER_DAY: usize = 24 * 60;

const WORDS: usize = MINUTES_PER_DAY.div_ceil(64);

/// One boolean per minute of day, packed into 64-bit words.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MinuteMask {
    words: [u64; WORDS],
}

impl MinuteMask {
    pub const fn empty() -> Self {
        Self { words: [0; WORDS] }
    }

    pub fn full() -> Self {
        let mut mask = Self::empty();
        mask.set_range(0, MINUTES_PER_DAY - 1, true);
        mask
    }

    pub fn from_fn(mut f: impl FnMut(usize) -> bool) -> Self {
        let mut mask = Self::empty();
        for minute in 0..MINUTES_PER_DAY {
            if f(minute) {
                mask.set(minute, true);
            }
        }
        mask
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        assert_eq!(
            bits.len(),
            MINUTES_PER_DAY,
            "mask needs {MINUTES_PER_DAY} slots"
        );
        Self::from_fn(|i| bits[i])
    }

    #[inline]
    pub fn get(&self, minute: usize) -> bool {
        debug_assert!(minute < MINUTES_PER_DAY);
        self.words[minute / 64] >> (minute % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, minute: usize, value: bool) {
        assert!(minute < MINUTES_PER_DAY, "minute {minute} out of range");
        let bit = 1u64 << (minute % 64);
        if value {
            self.words[minute / 64] |= bit;
        } else {
            self.words[minute / 64] &= !bit;
        }
    }

    /// Sets every minute in `start..=end`.
    pub fn set_range(&mut self, start: usize, end: usize, value: bool) {
        for minute in start..=end {
            self.set(minute, value);
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn any(&self) -> bool {
        self.words.iter().any(|&w| w != 0)
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.words.iter_mut().zip(other.words.iter()) {
            *a |= b;
        }
        out
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.words.iter_mut().zip(other.words.iter()) {
            *a &= b;
        }
        out
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..MINUTES_PER_DAY).filter(move |&m| self.get(m))
    }

    /// Maximal runs of set minutes as inclusive `(start, end)` pairs.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for minute in 0..MINUTES_PER_DAY {
            match (self.get(minute), start) {
                (true, None) => start = Some(minute),
                (false, Some(s)) => {
                    runs.push((s, minute - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, MINUTES_PER_DAY - 1));
        }
        runs
    }

    pub fn from_runs(runs: &[(usize, usize)]) -> Self {
        let mut mask = Self::empty();
        for &(start, end) in runs {
            mask.set_range(start, end, true);
        }
        mask
    }

    /// Collapses to 24 hourly flags; an hour is set if any of its minutes is.
    pub fn hours(&self) -> [bool; 24] {
        let mut out = [false; 24];
        for minute in self.iter_ones() {
            out[minute / 60] = true;
        }
        out
    }
}

impl Default for MinuteMask {
    fn default() -> Self {
        Self::empty()
    }
}

impl fmt::Debug for MinuteMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MinuteMask")
            .field("ones", &self.count_ones())
            .field("runs", &self.runs())
            .finish()
    }
}
