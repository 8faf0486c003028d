//! Point-in-time market data: daily bars, shares outstanding and daily
//! three-factor returns.
//!
//! The trading calendar is the set of factor-return dates. A ticker that has
//! no bar on a calendar date has a gap; the calendar itself has no holes.
//!
//! Everything downstream reads market data through [`MarketView`], so a
//! [`SpyStore`] can be dropped in to audit which dates a computation touched.

mod calendar;
mod load;
mod spy;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

pub use calendar::TradingCalendar;
pub use load::{load_bars, load_factors, read_bars, read_factors, write_bars, write_factors};
pub use spy::SpyStore;

use crate::error::{Error, Result};

/// Minimum number of usable (nonzero-volume) bars for a dollar-volume average.
pub const MIN_ADDV_DAYS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyBar {
    pub ticker: String,
    pub date: NaiveDate,
    pub close: f64,
    /// Split and dividend adjusted close; returns are computed from this.
    pub adj_close: f64,
    pub volume: u64,
    pub shares_outstanding: f64,
}

impl DailyBar {
    pub fn market_cap(&self) -> f64 {
        self.close * self.shares_outstanding
    }

    pub fn dollar_volume(&self) -> f64 {
        self.close * self.volume as f64
    }
}

/// One trading day of factor returns, stored as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorReturns {
    pub date: NaiveDate,
    pub mkt_rf: f64,
    pub smb: f64,
    pub hml: f64,
    pub rf: f64,
}

/// Read access to point-in-time market data.
///
/// Implementors supply the three primitive queries; every derived query is
/// built on them so that wrappers see each date that is read.
pub trait MarketView: Sync {
    fn calendar(&self) -> &TradingCalendar;

    /// Bars for `ticker` dated within `[from, to]`, in date order.
    fn bars_between(&self, ticker: &str, from: NaiveDate, to: NaiveDate) -> &[DailyBar];

    fn factor_row(&self, date: NaiveDate) -> Option<&FactorReturns>;

    fn bar(&self, ticker: &str, date: NaiveDate) -> Option<&DailyBar> {
        self.bars_between(ticker, date, date).first()
    }

    /// Latest bar dated on or before `date`.
    fn latest_bar(&self, ticker: &str, date: NaiveDate) -> Option<&DailyBar> {
        self.bars_between(ticker, NaiveDate::MIN, date).last()
    }

    /// `adj_close(date) / adj_close(previous trading date) - 1`.
    fn simple_return(&self, ticker: &str, date: NaiveDate) -> Result<f64> {
        let gap = |dates: Vec<NaiveDate>| Error::DataGap {
            ticker: ticker.to_string(),
            dates,
        };
        let prev = self.calendar().shift(date, -1).map_err(|_| gap(vec![date]))?;
        let today = self.bar(ticker, date).ok_or_else(|| gap(vec![date]))?;
        let before = self.bar(ticker, prev).ok_or_else(|| gap(vec![prev]))?;
        Ok(today.adj_close / before.adj_close - 1.0)
    }

    /// `close * shares_outstanding` at the latest bar on or before `date`.
    fn asof_market_cap(&self, ticker: &str, date: NaiveDate) -> Result<f64> {
        self.latest_bar(ticker, date)
            .map(DailyBar::market_cap)
            .ok_or_else(|| Error::DataGap {
                ticker: ticker.to_string(),
                dates: vec![date],
            })
    }

    /// Mean dollar volume over bars dated in `(date - window_days, date]`,
    /// counting only days with nonzero volume.
    fn asof_addv(&self, ticker: &str, date: NaiveDate, window_days: u32) -> Result<f64> {
        let from = date - Duration::days(i64::from(window_days)) + Duration::days(1);
        let bars = self.bars_between(ticker, from, date);
        if bars.is_empty() && self.latest_bar(ticker, date).is_none() {
            return Err(Error::DataGap {
                ticker: ticker.to_string(),
                dates: vec![date],
            });
        }
        let usable: Vec<f64> = bars
            .iter()
            .filter(|b| b.volume > 0)
            .map(DailyBar::dollar_volume)
            .collect();
        if usable.len() < MIN_ADDV_DAYS {
            return Err(Error::InsufficientHistory {
                ticker: ticker.to_string(),
                date,
                have: usable.len(),
                need: MIN_ADDV_DAYS,
            });
        }
        Ok(usable.iter().sum::<f64>() / usable.len() as f64)
    }
}

impl<M: MarketView + ?Sized> MarketView for &M {
    fn calendar(&self) -> &TradingCalendar {
        (**self).calendar()
    }
    fn bars_between(&self, ticker: &str, from: NaiveDate, to: NaiveDate) -> &[DailyBar] {
        (**self).bars_between(ticker, from, to)
    }
    fn factor_row(&self, date: NaiveDate) -> Option<&FactorReturns> {
        (**self).factor_row(date)
    }
}

/// Immutable in-memory store.
#[derive(Debug, Clone, Default)]
pub struct MarketStore {
    bars: BTreeMap<String, Vec<DailyBar>>,
    factors: Vec<FactorReturns>,
    factor_index: HashMap<NaiveDate, usize>,
    calendar: TradingCalendar,
}

impl MarketStore {
    /// Builds a store; bars are grouped by ticker and sorted by date, and the
    /// calendar is taken from the factor dates.
    pub fn new(bars: Vec<DailyBar>, mut factors: Vec<FactorReturns>) -> Result<Self> {
        let mut by_ticker: BTreeMap<String, Vec<DailyBar>> = BTreeMap::new();
        for bar in bars {
            by_ticker.entry(bar.ticker.clone()).or_default().push(bar);
        }
        for (ticker, series) in by_ticker.iter_mut() {
            series.sort_by_key(|b| b.date);
            if let Some(w) = series.windows(2).find(|w| w[0].date == w[1].date) {
                return Err(Error::Validation(format!(
                    "duplicate bar for ({ticker}, {})",
                    w[0].date
                )));
            }
        }
        factors.sort_by_key(|f| f.date);
        let calendar = TradingCalendar::new(factors.iter().map(|f| f.date).collect())?;
        let factor_index = factors.iter().enumerate().map(|(i, f)| (f.date, i)).collect();
        Ok(Self {
            bars: by_ticker,
            factors,
            factor_index,
            calendar,
        })
    }

    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.bars.keys().map(String::as_str)
    }

    pub fn series(&self, ticker: &str) -> &[DailyBar] {
        self.bars.get(ticker).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn factors(&self) -> &[FactorReturns] {
        &self.factors
    }

    pub fn bar_count(&self) -> usize {
        self.bars.values().map(Vec::len).sum()
    }

    /// Writes `bars.csv` and `factors.csv` (fractions) into `dir`.
    pub fn write_cache(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_bars(&dir.join("bars.csv"), self.bars.values().flatten())?;
        write_factors(&dir.join("factors.csv"), &self.factors)?;
        Ok(())
    }

    pub fn load_cache(dir: &Path) -> Result<Self> {
        let (bars, _) = load_bars(&dir.join("bars.csv"))?;
        let factors = load_factors(&dir.join("factors.csv"), false)?;
        Self::new(bars, factors)
    }
}

impl MarketView for MarketStore {
    fn calendar(&self) -> &TradingCalendar {
        &self.calendar
    }

    fn bars_between(&self, ticker: &str, from: NaiveDate, to: NaiveDate) -> &[DailyBar] {
        let series = self.series(ticker);
        let lo = series.partition_point(|b| b.date < from);
        let hi = series.partition_point(|b| b.date <= to);
        if lo >= hi {
            &[]
        } else {
            &series[lo..hi]
        }
    }

    fn factor_row(&self, date: NaiveDate) -> Option<&FactorReturns> {
        self.factor_index.get(&date).map(|&i| &self.factors[i])
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn simple_return_arithmetic() {
        let store = store_with_closes("ABC", d("2024-01-01"), &[100.0, 110.0, 110.0]);
        let dates = store.calendar().dates().to_vec();
        assert!((store.simple_return("ABC", dates[1]).unwrap() - 0.10).abs() < 1e-15);
        assert_eq!(store.simple_return("ABC", dates[2]).unwrap(), 0.0);
    }

    #[test]
    fn first_date_has_no_return() {
        let store = store_with_closes("ABC", d("2024-01-01"), &[100.0, 110.0]);
        let first = store.calendar().first().unwrap();
        assert!(matches!(store.simple_return("ABC", first), Err(Error::DataGap { .. })));
    }

    #[test]
    fn missing_previous_bar_is_a_gap() {
        let dates = weekdays(d("2024-01-01"), 3);
        let bars = vec![bar("ABC", dates[0], 10.0), bar("ABC", dates[2], 11.0)];
        let store = MarketStore::new(bars, flat_factors(&dates)).unwrap();
        match store.simple_return("ABC", dates[2]) {
            Err(Error::DataGap { dates: missing, .. }) => assert_eq!(missing, vec![dates[1]]),
            other => panic!("expected gap, got {other:?}"),
        }
    }

    #[test]
    fn market_cap_uses_latest_bar_at_or_before() {
        let store = store_with_closes("ABC", d("2024-01-01"), &[10.0, 12.0]);
        let dates = store.calendar().dates().to_vec();
        assert_eq!(store.asof_market_cap("ABC", dates[0]).unwrap(), 50e6);
        // a Saturday after the last bar still sees Friday's close
        assert_eq!(store.asof_market_cap("ABC", d("2024-01-06")).unwrap(), 60e6);
        assert!(store.asof_market_cap("ABC", d("2023-12-01")).is_err());
        assert!(store.asof_market_cap("XYZ", dates[0]).is_err());
    }

    #[test]
    fn addv_at_filter_boundary() {
        // 30 calendar days of bars, each close 10 with volume 20,000
        let dates: Vec<NaiveDate> = d("2024-01-01").iter_days().take(30).collect();
        let bars = dates.iter().map(|&dt| bar("ABC", dt, 10.0)).collect();
        let store = MarketStore::new(bars, flat_factors(&dates)).unwrap();
        assert_eq!(store.asof_addv("ABC", dates[29], 30).unwrap(), 200_000.0);
    }

    #[test]
    fn addv_window_excludes_the_left_edge() {
        let dates: Vec<NaiveDate> = d("2024-01-01").iter_days().take(31).collect();
        let mut bars: Vec<DailyBar> = dates.iter().map(|&dt| bar("ABC", dt, 10.0)).collect();
        bars[0].volume = 1_000_000; // 30 days before the query date: outside (d-30, d]
        let store = MarketStore::new(bars, flat_factors(&dates)).unwrap();
        assert_eq!(store.asof_addv("ABC", dates[30], 30).unwrap(), 200_000.0);
    }

    #[test]
    fn addv_needs_ten_usable_days() {
        let dates = weekdays(d("2024-01-01"), 5);
        let bars = dates.iter().map(|&dt| bar("ABC", dt, 10.0)).collect();
        let store = MarketStore::new(bars, flat_factors(&dates)).unwrap();
        assert!(matches!(
            store.asof_addv("ABC", dates[4], 30),
            Err(Error::InsufficientHistory { have: 5, need: 10, .. })
        ));
    }

    #[test]
    fn zero_volume_days_are_skipped() {
        let dates: Vec<NaiveDate> = d("2024-01-01").iter_days().take(20).collect();
        let mut bars: Vec<DailyBar> = dates.iter().map(|&dt| bar("ABC", dt, 10.0)).collect();
        for b in bars.iter_mut().take(5) {
            b.volume = 0;
        }
        let store = MarketStore::new(bars, flat_factors(&dates)).unwrap();
        assert_eq!(store.asof_addv("ABC", dates[19], 30).unwrap(), 200_000.0);
    }

    #[test]
    fn duplicate_bars_are_rejected() {
        let dates = weekdays(d("2024-01-01"), 2);
        let bars = vec![bar("ABC", dates[0], 10.0), bar("ABC", dates[0], 11.0)];
        assert!(MarketStore::new(bars, flat_factors(&dates)).is_err());
    }

    proptest! {
        #[test]
        fn returns_telescope(steps in proptest::collection::vec(-0.2f64..0.2, 2..60)) {
            let mut closes = vec![50.0];
            for r in &steps {
                let last = *closes.last().unwrap();
                closes.push(last * (1.0 + r));
            }
            let store = store_with_closes("T", d("2021-06-01"), &closes);
            let dates = store.calendar().dates().to_vec();
            let growth: f64 = dates[1..]
                .iter()
                .map(|&dt| 1.0 + store.simple_return("T", dt).unwrap())
                .product();
            let ratio = closes[closes.len() - 1] / closes[0];
            prop_assert!((growth - 1.0 - (ratio - 1.0)).abs() < 1e-12);
        }
    }
}
