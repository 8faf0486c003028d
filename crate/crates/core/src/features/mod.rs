//! Disclosure-time predictors.
//!
//! Every market quantity is read as of the disclosure anchor, the last
//! trading day on or before the disclosure date, and never later.

mod matrix;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventstudy::{disclosure_anchor, Event, EventKey};
use crate::marketdata::MarketView;

pub use matrix::{build_matrix, FeatureMatrix, RowMeta, FEATURE_NAMES, N_FEATURES};

pub const RANGE_WINDOW: usize = 252;
pub const RANGE_MIN_BARS: usize = 60;
pub const VOL_WINDOW: usize = 30;
pub const VOL_MIN_RETURNS: usize = 20;
pub const ADDV_WINDOW_DAYS: u32 = 30;
const FIRST_PURCHASE_LOOKBACK_DAYS: i64 = 365;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub event_key: EventKey,
    pub title_score: u8,
    pub transaction_value: f64,
    pub is_first_purchase_12m: u8,
    pub value_vs_history_ratio: f64,
    pub price_deviation: f64,
    pub pct_from_52w_high: f64,
    pub pct_from_52w_low: f64,
    pub return_mtd: f64,
    pub volatility_30d: f64,
    pub market_cap_at_filing: f64,
    pub avg_daily_vol_at_filing: f64,
    pub is_biotech: u8,
}

impl FeatureVector {
    /// Values in [`FEATURE_NAMES`] order.
    pub fn to_row(&self) -> [f64; N_FEATURES] {
        [
            self.pct_from_52w_high,
            self.return_mtd,
            self.volatility_30d,
            self.market_cap_at_filing,
            self.pct_from_52w_low,
            self.avg_daily_vol_at_filing,
            f64::from(self.is_biotech),
            self.price_deviation,
            self.transaction_value,
            f64::from(self.is_first_purchase_12m),
            f64::from(self.title_score),
            self.value_vs_history_ratio,
        ]
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

fn has_phrase(words: &[String], phrase: &[&str]) -> bool {
    words
        .windows(phrase.len())
        .any(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
}

/// CEO 5, CFO 4, COO 3, Director 2, anything else 1. Multi-role titles
/// score their highest role.
pub fn title_score(insider_title_raw: &str) -> u8 {
    let w = words(insider_title_raw);
    let any = |abbr: &str, long: &[&str]| w.iter().any(|x| x == abbr) || has_phrase(&w, long);
    if any("ceo", &["chief", "executive", "officer"]) || has_phrase(&w, &["principal", "executive", "officer"]) {
        5
    } else if any("cfo", &["chief", "financial", "officer"]) || has_phrase(&w, &["principal", "financial", "officer"]) {
        4
    } else if any("coo", &["chief", "operating", "officer"]) {
        3
    } else if w.iter().any(|x| x == "director") {
        2
    } else {
        1
    }
}

/// Bar date used for "price at disclosure": the disclosure date itself when
/// it is a trading day, otherwise the preceding trading day.
fn disclosure_close(market: &impl MarketView, ticker: &str, disclosure_date: NaiveDate) -> Result<f64> {
    let anchor = disclosure_anchor(market, disclosure_date)?;
    market
        .bar(ticker, anchor)
        .map(|b| b.close)
        .ok_or_else(|| Error::DataGap {
            ticker: ticker.to_string(),
            dates: vec![anchor],
        })
}

/// Unadjusted close at disclosure over the reported transaction price, minus one.
pub fn price_deviation(event: &Event, market: &impl MarketView) -> Result<f64> {
    if event.price_per_share <= 0.0 {
        return Err(Error::Validation(format!("event {} has no positive price", event.key)));
    }
    Ok(disclosure_close(market, &event.ticker, event.disclosure_date())? / event.price_per_share - 1.0)
}

/// `(adj/high - 1, adj/low - 1)` over the trailing 252 trading days ending at `date`.
pub fn range_position(market: &impl MarketView, ticker: &str, date: NaiveDate) -> Result<(f64, f64)> {
    let window = market.calendar().window_ending(date, RANGE_WINDOW);
    let insufficient = |have| Error::InsufficientHistory {
        ticker: ticker.to_string(),
        date,
        have,
        need: RANGE_MIN_BARS,
    };
    let Some(&first) = window.first() else {
        return Err(insufficient(0));
    };
    let end = *window.last().unwrap();
    let bars = market.bars_between(ticker, first, end);
    if bars.len() < RANGE_MIN_BARS {
        return Err(insufficient(bars.len()));
    }
    let current = match bars.last() {
        Some(b) if b.date == end => b.adj_close,
        _ => {
            return Err(Error::DataGap {
                ticker: ticker.to_string(),
                dates: vec![end],
            })
        }
    };
    let high = bars.iter().map(|b| b.adj_close).fold(f64::MIN, f64::max);
    let low = bars.iter().map(|b| b.adj_close).fold(f64::MAX, f64::min);
    Ok((current / high - 1.0, current / low - 1.0))
}

/// Month-to-date return and annualized 30-trading-day volatility of log returns.
pub fn trailing_stats(market: &impl MarketView, ticker: &str, date: NaiveDate) -> Result<(f64, f64)> {
    let cal = market.calendar();
    let end = cal
        .last_on_or_before(date)
        .ok_or(Error::OutOfRange { date, offset: 0 })?;
    let current = market.bar(ticker, end).ok_or_else(|| Error::DataGap {
        ticker: ticker.to_string(),
        dates: vec![end],
    })?;

    // VOL_WINDOW returns need VOL_WINDOW + 1 dates
    let window = cal.window_ending(end, VOL_WINDOW + 1);
    let bars = market.bars_between(ticker, window[0], end);
    let by_date: HashMap<NaiveDate, f64> = bars.iter().map(|b| (b.date, b.adj_close)).collect();
    let log_returns: Vec<f64> = window
        .windows(2)
        .filter_map(|w| Some((by_date.get(&w[1])? / by_date.get(&w[0])?).ln()))
        .collect();
    if log_returns.len() < VOL_MIN_RETURNS {
        return Err(Error::InsufficientHistory {
            ticker: ticker.to_string(),
            date: end,
            have: log_returns.len(),
            need: VOL_MIN_RETURNS,
        });
    }

    let month_start = end.with_day(1).expect("day 1 exists");
    let prior_close = cal
        .last_on_or_before(month_start - Duration::days(1))
        .and_then(|d| market.bar(ticker, d))
        .ok_or_else(|| Error::InsufficientHistory {
            ticker: ticker.to_string(),
            date: end,
            have: 0,
            need: 1,
        })?;
    let return_mtd = current.adj_close / prior_close.adj_close - 1.0;

    Ok((return_mtd, sample_sd(&log_returns) * 252f64.sqrt()))
}

pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Prior purchases per (issuer, insider), ordered by trade date.
#[derive(Debug, Clone, Default)]
pub struct PurchaseHistory {
    by_insider: HashMap<(String, String), Vec<PriorPurchase>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PriorPurchase {
    transaction_date: NaiveDate,
    disclosure_date: NaiveDate,
    value: f64,
}

impl PurchaseHistory {
    pub fn new(events: &[Event]) -> Self {
        let mut by_insider: HashMap<(String, String), Vec<PriorPurchase>> = HashMap::new();
        for e in events {
            by_insider
                .entry((e.key.issuer_id.clone(), e.key.insider_id.clone()))
                .or_default()
                .push(PriorPurchase {
                    transaction_date: e.transaction_date,
                    disclosure_date: e.disclosure_date(),
                    value: e.transaction_value,
                });
        }
        for v in by_insider.values_mut() {
            v.sort_by(|a, b| {
                (a.transaction_date, a.disclosure_date)
                    .cmp(&(b.transaction_date, b.disclosure_date))
                    .then(a.value.total_cmp(&b.value))
            });
        }
        Self { by_insider }
    }

    /// `(is_first_purchase_12m, value_vs_history_ratio)`.
    ///
    /// A prior purchase is one traded strictly before this event and already
    /// disclosed by this event's disclosure date.
    pub fn insider_history(&self, event: &Event) -> (u8, f64) {
        let key = (event.key.issuer_id.clone(), event.key.insider_id.clone());
        let prior: Vec<&PriorPurchase> = self
            .by_insider
            .get(&key)
            .map(|v| {
                v.iter()
                    .filter(|p| {
                        p.transaction_date < event.transaction_date && p.disclosure_date <= event.disclosure_date()
                    })
                    .collect()
            })
            .unwrap_or_default();
        if prior.is_empty() {
            return (1, 1.0);
        }
        let cutoff = event.transaction_date - Duration::days(FIRST_PURCHASE_LOOKBACK_DAYS);
        let recent = prior.iter().any(|p| p.transaction_date >= cutoff);
        let mean = prior.iter().map(|p| p.value).sum::<f64>() / prior.len() as f64;
        (u8::from(!recent), event.transaction_value / mean)
    }
}

/// Issuer id to biotech/pharma flag.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SectorMap {
    biotech: BTreeMap<String, bool>,
}

impl SectorMap {
    pub fn new(entries: impl IntoIterator<Item = (String, bool)>) -> Self {
        Self {
            biotech: entries.into_iter().collect(),
        }
    }

    /// Unlisted issuers are not biotech.
    pub fn is_biotech(&self, issuer_id: &str) -> u8 {
        u8::from(self.biotech.get(issuer_id).copied().unwrap_or(false))
    }

    /// CSV `issuer_id,is_biotech`; the flag accepts 0/1, true/false or yes/no.
    pub fn read(source: &str, input: impl std::io::Read) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["issuer_id", "is_biotech"] {
            return Err(Error::Format {
                path: source.to_string(),
                row: 1,
                message: format!(
                    "expected header `issuer_id,is_biotech`, got `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut map = BTreeMap::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let flag = match rec[1].to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" => true,
                "0" | "false" | "no" => false,
                other => {
                    return Err(Error::Format {
                        path: source.to_string(),
                        row: i + 2,
                        message: format!("is_biotech `{other}` is not a boolean"),
                    })
                }
            };
            map.insert(rec[0].to_string(), flag);
        }
        Ok(Self { biotech: map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&path.display().to_string(), file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["issuer_id", "is_biotech"])?;
        for (id, flag) in &self.biotech {
            w.write_record([id.as_str(), if *flag { "1" } else { "0" }])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// All twelve predictors for one event.
pub fn compute_features(
    event: &Event,
    market: &impl MarketView,
    history: &PurchaseHistory,
    sectors: &SectorMap,
) -> Result<FeatureVector> {
    let run = || -> Result<FeatureVector> {
        let anchor = disclosure_anchor(market, event.disclosure_date())?;
        let ticker = event.ticker.as_str();
        let price_deviation = price_deviation(event, market)?;
        let (pct_from_52w_high, pct_from_52w_low) = range_position(market, ticker, anchor)?;
        let (return_mtd, volatility_30d) = trailing_stats(market, ticker, anchor)?;
        let market_cap_at_filing = market.asof_market_cap(ticker, anchor)?;
        let avg_daily_vol_at_filing = market.asof_addv(ticker, anchor, ADDV_WINDOW_DAYS)?;
        let (is_first_purchase_12m, value_vs_history_ratio) = history.insider_history(event);
        let fv = FeatureVector {
            event_key: event.key.clone(),
            title_score: title_score(&event.insider_title_raw),
            transaction_value: event.transaction_value,
            is_first_purchase_12m,
            value_vs_history_ratio,
            price_deviation,
            pct_from_52w_high,
            pct_from_52w_low,
            return_mtd,
            volatility_30d,
            market_cap_at_filing,
            avg_daily_vol_at_filing,
            is_biotech: sectors.is_biotech(&event.key.issuer_id),
        };
        if fv.to_row().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        Ok(fv)
    };
    run().map_err(|e| e.for_event(&event.key))
}

#[cfg(test)]
mod tests;
