//! Per-event three-factor loadings, post-disclosure abnormal returns and the
//! binary outperformance label.
//!
//! For an event disclosed on `t`:
//!
//! * loadings come from an OLS of excess stock returns on
//!   `[1, MKT-RF, SMB, HML]` over the `estimation_window` trading days ending
//!   at the last trading day on or before `t`;
//! * abnormal returns run from trading day `t+1` through `t+horizon` and are
//!   residuals of that model: `AR = (R - RF) - alpha - b_mkt*MKT_RF - b_smb*SMB - b_hml*HML`;
//! * `car` is the arithmetic sum of the abnormal returns (or, with
//!   [`CarConvention::Compound`], compounded realised minus compounded
//!   expected return), and `label = car > car_threshold`.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filings::InsiderTransaction;
use crate::linalg::least_squares;
use crate::marketdata::MarketView;

/// One event per insider, issuer and disclosure date.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventKey {
    pub issuer_id: String,
    pub insider_id: String,
    pub disclosure_date: NaiveDate,
}

impl fmt::Display for EventKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.issuer_id, self.insider_id, self.disclosure_date)
    }
}

impl std::str::FromStr for EventKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.rsplitn(3, '|');
        let (Some(date), Some(insider), Some(issuer)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Validation(format!("malformed event key `{s}`")));
        };
        Ok(EventKey {
            issuer_id: issuer.to_string(),
            insider_id: insider.to_string(),
            disclosure_date: date
                .parse()
                .map_err(|_| Error::Validation(format!("malformed event key date `{date}`")))?,
        })
    }
}

/// Same-day purchases by one insider in one issuer, merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub key: EventKey,
    pub ticker: String,
    pub insider_title_raw: String,
    /// Earliest trade date among the merged records.
    pub transaction_date: NaiveDate,
    pub shares: f64,
    pub transaction_value: f64,
    /// Value-weighted price.
    pub price_per_share: f64,
    pub accession_ids: Vec<String>,
}

impl Event {
    pub fn disclosure_date(&self) -> NaiveDate {
        self.key.disclosure_date
    }
}

/// Merges records sharing (issuer, insider, disclosure date). Output is sorted by key.
pub fn aggregate_events(txs: &[InsiderTransaction]) -> Vec<Event> {
    let mut groups: BTreeMap<EventKey, Vec<&InsiderTransaction>> = BTreeMap::new();
    for tx in txs {
        let key = EventKey {
            issuer_id: tx.issuer_id.clone(),
            insider_id: tx.insider_id.clone(),
            disclosure_date: tx.disclosure_date,
        };
        groups.entry(key).or_default().push(tx);
    }
    groups
        .into_iter()
        .map(|(key, group)| {
            let first = group[0];
            let shares: f64 = group.iter().map(|t| t.shares).sum();
            let value: f64 = group.iter().map(|t| t.transaction_value).sum();
            let price = if shares > 0.0 {
                value / shares
            } else {
                first.price_per_share
            };
            let mut accession_ids: Vec<String> = group.iter().map(|t| t.accession_id.clone()).collect();
            accession_ids.dedup();
            Event {
                key,
                ticker: first.ticker.clone(),
                insider_title_raw: first.insider_title_raw.clone(),
                transaction_date: group.iter().map(|t| t.transaction_date).min().unwrap(),
                shares,
                transaction_value: value,
                price_per_share: price,
                accession_ids,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarConvention {
    #[default]
    Sum,
    Compound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub horizon: usize,
    pub car_threshold: f64,
    pub estimation_window: usize,
    pub min_obs: usize,
    pub convention: CarConvention,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            car_threshold: 0.10,
            estimation_window: 252,
            min_obs: 126,
            convention: CarConvention::Sum,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("label horizon must be at least 1".into()));
        }
        if !(self.car_threshold > 0.0 && self.car_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "car_threshold must be positive, got {}",
                self.car_threshold
            )));
        }
        if self.min_obs < 4 || self.min_obs > self.estimation_window {
            return Err(Error::Config(format!(
                "min_obs ({}) must be between 4 and estimation_window ({})",
                self.min_obs, self.estimation_window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorLoadings {
    pub alpha: f64,
    pub beta_mkt: f64,
    pub beta_smb: f64,
    pub beta_hml: f64,
    pub n_obs: usize,
    pub estimation_end: NaiveDate,
    /// Standard errors of `[alpha, beta_mkt, beta_smb, beta_hml]`.
    pub std_errors: [f64; 4],
    pub residual_sd: f64,
}

impl FactorLoadings {
    pub fn coefficients(&self) -> [f64; 4] {
        [self.alpha, self.beta_mkt, self.beta_smb, self.beta_hml]
    }

    /// Model-implied excess return for one day's factors.
    pub fn expected_excess(&self, mkt_rf: f64, smb: f64, hml: f64) -> f64 {
        self.alpha + self.beta_mkt * mkt_rf + self.beta_smb * smb + self.beta_hml * hml
    }
}

/// The regression sample behind a loadings fit.
#[derive(Debug, Clone, Default)]
pub struct EstimationSample {
    pub dates: Vec<NaiveDate>,
    /// Excess stock returns.
    pub y: Vec<f64>,
    /// Row-major `[1, mkt_rf, smb, hml]`.
    pub x: Vec<[f64; 4]>,
}

/// Collects the usable days among the `window` trading days ending at
/// `estimation_end`. Days without a stock return or factor row are skipped.
pub fn estimation_sample(
    market: &impl MarketView,
    ticker: &str,
    estimation_end: NaiveDate,
    window: usize,
) -> EstimationSample {
    let mut sample = EstimationSample::default();
    for &date in market.calendar().window_ending(estimation_end, window) {
        let Some(f) = market.factor_row(date).copied() else {
            continue;
        };
        let Ok(r) = market.simple_return(ticker, date) else {
            continue;
        };
        sample.dates.push(date);
        sample.y.push(r - f.rf);
        sample.x.push([1.0, f.mkt_rf, f.smb, f.hml]);
    }
    sample
}

/// OLS three-factor fit over the estimation window ending at `estimation_end`.
pub fn fit_ff3(
    market: &impl MarketView,
    ticker: &str,
    estimation_end: NaiveDate,
    window: usize,
    min_obs: usize,
) -> Result<FactorLoadings> {
    let sample = estimation_sample(market, ticker, estimation_end, window);
    let n = sample.y.len();
    if n < min_obs.max(5) {
        return Err(Error::InsufficientHistory {
            ticker: ticker.to_string(),
            date: estimation_end,
            have: n,
            need: min_obs.max(5),
        });
    }
    // A factor that is identically zero over the window carries no
    // information; its loading is reported as 0 rather than failing the fit.
    let active: Vec<usize> = (0..4)
        .filter(|&j| j == 0 || sample.x.iter().any(|row| row[j] != 0.0))
        .collect();
    let p = active.len();
    let x: Vec<f64> = sample.x.iter().flat_map(|row| active.iter().map(|&j| row[j])).collect();
    let ls = least_squares(&x, p, &sample.y)?;
    let mut coef = [0.0; 4];
    let mut std_errors = [0.0; 4];
    let sse: f64 = sample
        .x
        .iter()
        .zip(&sample.y)
        .map(|(row, y)| {
            let fit: f64 = active.iter().zip(&ls.coef).map(|(&j, b)| row[j] * b).sum();
            (y - fit).powi(2)
        })
        .sum();
    let sigma2 = sse / (n - p) as f64;
    for (k, &j) in active.iter().enumerate() {
        coef[j] = ls.coef[k];
        std_errors[j] = (sigma2 * ls.xtx_inv[k * p + k]).sqrt();
    }
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::SingularDesign);
    }
    Ok(FactorLoadings {
        alpha: coef[0],
        beta_mkt: coef[1],
        beta_smb: coef[2],
        beta_hml: coef[3],
        n_obs: n,
        estimation_end,
        std_errors,
        residual_sd: sigma2.sqrt(),
    })
}

/// Day-by-day decomposition of an event window.
#[derive(Debug, Clone, PartialEq)]
pub struct AbnormalPath {
    pub dates: Vec<NaiveDate>,
    /// Realised simple returns.
    pub returns: Vec<f64>,
    /// Model-implied total returns, `rf + expected excess`.
    pub expected: Vec<f64>,
    pub ar: Vec<f64>,
}

/// Abnormal returns for the `horizon` trading days starting at `window_start`.
pub fn abnormal_return_path(
    market: &impl MarketView,
    ticker: &str,
    loadings: &FactorLoadings,
    window_start: NaiveDate,
    horizon: usize,
) -> Result<AbnormalPath> {
    let cal = market.calendar();
    let start = cal.index_of(window_start).ok_or(Error::OutOfRange {
        date: window_start,
        offset: 0,
    })?;
    if start + horizon > cal.len() {
        return Err(Error::OutOfRange {
            date: window_start,
            offset: horizon as i64 - 1,
        });
    }
    let dates = &cal.dates()[start..start + horizon];
    let mut path = AbnormalPath {
        dates: dates.to_vec(),
        returns: Vec::with_capacity(horizon),
        expected: Vec::with_capacity(horizon),
        ar: Vec::with_capacity(horizon),
    };
    let mut missing = Vec::new();
    for &date in dates {
        let factors = market.factor_row(date).copied();
        let ret = market.simple_return(ticker, date);
        match (factors, ret) {
            (Some(f), Ok(r)) => {
                let excess_fit = loadings.expected_excess(f.mkt_rf, f.smb, f.hml);
                path.returns.push(r);
                path.expected.push(f.rf + excess_fit);
                path.ar.push((r - f.rf) - excess_fit);
            }
            _ => missing.push(date),
        }
    }
    if !missing.is_empty() {
        return Err(Error::DataGap {
            ticker: ticker.to_string(),
            dates: missing,
        });
    }
    Ok(path)
}

pub fn abnormal_returns(
    market: &impl MarketView,
    ticker: &str,
    loadings: &FactorLoadings,
    window_start: NaiveDate,
    horizon: usize,
) -> Result<Vec<f64>> {
    abnormal_return_path(market, ticker, loadings, window_start, horizon).map(|p| p.ar)
}

/// Strict inequality: a CAR exactly at the threshold is not an outperformer.
pub fn label_from_car(car: f64, threshold: f64) -> u8 {
    u8::from(car > threshold)
}

pub fn cumulative(path: &AbnormalPath, convention: CarConvention) -> f64 {
    match convention {
        CarConvention::Sum => path.ar.iter().sum(),
        CarConvention::Compound => {
            let realised: f64 = path.returns.iter().map(|r| 1.0 + r).product();
            let expected: f64 = path.expected.iter().map(|e| 1.0 + e).product();
            realised - expected
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOutcome {
    pub event_key: EventKey,
    pub loadings: FactorLoadings,
    pub ar_series: Vec<f64>,
    pub car: f64,
    pub label: u8,
    pub horizon: usize,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
}

/// Last trading day on or before disclosure: the estimation window ends here
/// and the outcome window starts on the next trading day.
pub fn disclosure_anchor(market: &impl MarketView, disclosure_date: NaiveDate) -> Result<NaiveDate> {
    market
        .calendar()
        .last_on_or_before(disclosure_date)
        .ok_or(Error::OutOfRange {
            date: disclosure_date,
            offset: 0,
        })
}

/// Labels one event. Estimation reads only `estimation_market`; the outcome
/// window reads only `outcome_market`. Pass the same store twice in normal use.
pub fn label_event_split(
    estimation_market: &impl MarketView,
    outcome_market: &impl MarketView,
    event: &Event,
    cfg: &LabelConfig,
) -> Result<EventOutcome> {
    let run = || -> Result<EventOutcome> {
        let anchor = disclosure_anchor(estimation_market, event.disclosure_date())?;
        let loadings = fit_ff3(
            estimation_market,
            &event.ticker,
            anchor,
            cfg.estimation_window,
            cfg.min_obs,
        )?;
        let window_start = outcome_market.calendar().shift(anchor, 1)?;
        let path = abnormal_return_path(outcome_market, &event.ticker, &loadings, window_start, cfg.horizon)?;
        let car = cumulative(&path, cfg.convention);
        Ok(EventOutcome {
            event_key: event.key.clone(),
            loadings,
            window_start,
            window_end: *path.dates.last().expect("horizon >= 1"),
            ar_series: path.ar,
            car,
            label: label_from_car(car, cfg.car_threshold),
            horizon: cfg.horizon,
        })
    };
    run().map_err(|e| e.for_event(&event.key))
}

pub fn label_event(market: &impl MarketView, event: &Event, cfg: &LabelConfig) -> Result<EventOutcome> {
    label_event_split(market, market, event, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEvent {
    pub event: Event,
    pub outcome: EventOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEvent {
    pub event_key: EventKey,
    pub reason: String,
    pub detail: String,
}

/// Labels events in parallel. Data gaps skip the event unless `strict`.
/// Output follows event-key order.
pub fn label_events(
    market: &impl MarketView,
    events: &[Event],
    cfg: &LabelConfig,
    strict: bool,
) -> Result<(Vec<LabeledEvent>, Vec<SkippedEvent>)> {
    cfg.validate()?;
    let mut sorted: Vec<&Event> = events.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let results: Vec<Result<EventOutcome>> = sorted.par_iter().map(|e| label_event(market, e, cfg)).collect();
    let mut labeled = Vec::new();
    let mut skipped = Vec::new();
    for (event, result) in sorted.into_iter().zip(results) {
        match result {
            Ok(outcome) => labeled.push(LabeledEvent {
                event: event.clone(),
                outcome,
            }),
            Err(e) if !strict && (e.is_data_gap() || matches!(e.root(), Error::SingularDesign)) => {
                skipped.push(SkippedEvent {
                    event_key: event.key.clone(),
                    reason: e.reason_code().to_string(),
                    detail: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok((labeled, skipped))
}

#[cfg(test)]
mod tests;
