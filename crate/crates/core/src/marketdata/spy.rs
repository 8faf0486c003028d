use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::NaiveDate;

use super::{DailyBar, FactorReturns, MarketView, TradingCalendar};

/// A [`MarketView`] wrapper that records the latest date each query could
/// see and counts queries reaching past a ceiling.
///
/// Range queries are charged at their requested upper bound, so asking for
/// future bars is a violation even when none exist.
pub struct SpyStore<'a, M: MarketView + ?Sized> {
    inner: &'a M,
    ceiling: Option<NaiveDate>,
    violations: AtomicUsize,
    reads: AtomicUsize,
    max_read: Mutex<Option<NaiveDate>>,
}

impl<'a, M: MarketView + ?Sized> SpyStore<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            ceiling: None,
            violations: AtomicUsize::new(0),
            reads: AtomicUsize::new(0),
            max_read: Mutex::new(None),
        }
    }

    /// Every read dated after `ceiling` counts as a violation.
    pub fn with_ceiling(inner: &'a M, ceiling: NaiveDate) -> Self {
        Self {
            ceiling: Some(ceiling),
            ..Self::new(inner)
        }
    }

    pub fn violations(&self) -> usize {
        self.violations.load(Ordering::Relaxed)
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn max_date_read(&self) -> Option<NaiveDate> {
        *self.max_read.lock().expect("spy lock")
    }

    fn record(&self, date: NaiveDate) {
        self.reads.fetch_add(1, Ordering::Relaxed);
        if self.ceiling.is_some_and(|c| date > c) {
            self.violations.fetch_add(1, Ordering::Relaxed);
        }
        let mut max = self.max_read.lock().expect("spy lock");
        if max.is_none_or(|m| date > m) {
            *max = Some(date);
        }
    }
}

impl<M: MarketView + ?Sized> MarketView for SpyStore<'_, M> {
    fn calendar(&self) -> &TradingCalendar {
        self.inner.calendar()
    }

    fn bars_between(&self, ticker: &str, from: NaiveDate, to: NaiveDate) -> &[DailyBar] {
        self.record(to);
        self.inner.bars_between(ticker, from, to)
    }

    fn factor_row(&self, date: NaiveDate) -> Option<&FactorReturns> {
        self.record(date);
        self.inner.factor_row(date)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::testutil::store_with_closes;

    #[test]
    fn asof_queries_never_read_past_their_date() {
        let closes: Vec<f64> = (0..40).map(|i| 10.0 + i as f64 * 0.1).collect();
        let store = store_with_closes("ABC", "2024-01-01".parse().unwrap(), &closes);
        let day = store.calendar().get(25).unwrap();
        let spy = SpyStore::with_ceiling(&store, day);
        spy.asof_market_cap("ABC", day).unwrap();
        spy.asof_addv("ABC", day, 30).unwrap();
        spy.simple_return("ABC", day).unwrap();
        assert_eq!(spy.violations(), 0);
        assert_eq!(spy.max_date_read(), Some(day));

        let later = store.calendar().get(26).unwrap();
        spy.simple_return("ABC", later).unwrap();
        assert!(spy.violations() > 0);
    }
}
