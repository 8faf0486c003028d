use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered trading dates. Offsets are counted in positions, not calendar days.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradingCalendar {
    dates: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self> {
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "calendar dates must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { dates })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn first(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn last(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.index_of(date).is_some()
    }

    pub fn get(&self, idx: usize) -> Option<NaiveDate> {
        self.dates.get(idx).copied()
    }

    /// Index of the last trading date `<= date`.
    pub fn index_on_or_before(&self, date: NaiveDate) -> Option<usize> {
        self.dates.partition_point(|d| *d <= date).checked_sub(1)
    }

    pub fn last_on_or_before(&self, date: NaiveDate) -> Option<NaiveDate> {
        self.index_on_or_before(date).map(|i| self.dates[i])
    }

    /// The trading date `k` positions away from `date`.
    pub fn shift(&self, date: NaiveDate, k: i64) -> Result<NaiveDate> {
        let out_of_range = || Error::OutOfRange { date, offset: k };
        let idx = self.index_of(date).ok_or_else(out_of_range)? as i64;
        let target = idx + k;
        if target < 0 || target >= self.dates.len() as i64 {
            return Err(out_of_range());
        }
        Ok(self.dates[target as usize])
    }

    /// Up to `n` trading dates ending at `date` inclusive, truncated at the
    /// start of the calendar.
    pub fn window_ending(&self, date: NaiveDate, n: usize) -> &[NaiveDate] {
        match self.index_on_or_before(date) {
            Some(end) => &self.dates[(end + 1).saturating_sub(n)..=end],
            None => &[],
        }
    }

    /// Trading dates in `[from, to]`.
    pub fn between(&self, from: NaiveDate, to: NaiveDate) -> &[NaiveDate] {
        let lo = self.dates.partition_point(|d| *d < from);
        let hi = self.dates.partition_point(|d| *d <= to);
        if lo >= hi {
            &[]
        } else {
            &self.dates[lo..hi]
        }
    }
}
