use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::InsiderTransaction;
use crate::error::{Error, Result};
use crate::marketdata::MarketView;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Calendar days from trade to disclosure.
    pub max_lag_days: u32,
    pub min_value: f64,
    pub min_cap: f64,
    pub max_cap: f64,
    pub min_addv: f64,
    pub addv_window_days: u32,
    /// Abort on missing market data instead of rejecting the record.
    pub strict: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_lag_days: 90,
            min_value: 5_000.0,
            min_cap: 30e6,
            max_cap: 500e6,
            min_addv: 200_000.0,
            addv_window_days: 30,
            strict: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_lag_days", f64::from(self.max_lag_days)),
            ("min_value", self.min_value),
            ("min_cap", self.min_cap),
            ("max_cap", self.max_cap),
            ("min_addv", self.min_addv),
            ("addv_window_days", f64::from(self.addv_window_days)),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("filter `{name}` must be positive, got {v}")));
        }
        if self.min_cap >= self.max_cap {
            return Err(Error::Config(format!(
                "filter min_cap ({}) must be below max_cap ({})",
                self.min_cap, self.max_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TransactionCode,
    InvalidDates,
    MaxLag,
    MinValue,
    MinCap,
    MaxCap,
    MinAddv,
    NoMarketData,
    InsufficientVolumeHistory,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::TransactionCode => "transaction_code",
            RejectReason::InvalidDates => "invalid_dates",
            RejectReason::MaxLag => "max_lag",
            RejectReason::MinValue => "min_value",
            RejectReason::MinCap => "min_cap",
            RejectReason::MaxCap => "max_cap",
            RejectReason::MinAddv => "min_addv",
            RejectReason::NoMarketData => "no_market_data",
            RejectReason::InsufficientVolumeHistory => "insufficient_volume_history",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    #[serde(flatten)]
    pub tx: InsiderTransaction,
    pub reject_reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<InsiderTransaction>,
    pub rejected: Vec<Rejected>,
}

fn check(tx: &InsiderTransaction, cfg: &FilterConfig, market: &impl MarketView) -> Result<Option<RejectReason>> {
    if tx.transaction_code != 'P' {
        return Ok(Some(RejectReason::TransactionCode));
    }
    let lag = tx.lag_days();
    if lag < 0 {
        return Ok(Some(RejectReason::InvalidDates));
    }
    if lag > i64::from(cfg.max_lag_days) {
        return Ok(Some(RejectReason::MaxLag));
    }
    if tx.transaction_value < cfg.min_value {
        return Ok(Some(RejectReason::MinValue));
    }
    // universe checks use data as of the trade date only
    let date = tx.transaction_date;
    let cap = match market.asof_market_cap(&tx.ticker, date) {
        Ok(cap) => cap,
        Err(e) if !cfg.strict && e.is_data_gap() => return Ok(Some(RejectReason::NoMarketData)),
        Err(e) => return Err(e),
    };
    if cap < cfg.min_cap {
        return Ok(Some(RejectReason::MinCap));
    }
    if cap > cfg.max_cap {
        return Ok(Some(RejectReason::MaxCap));
    }
    let addv = match market.asof_addv(&tx.ticker, date, cfg.addv_window_days) {
        Ok(v) => v,
        Err(Error::InsufficientHistory { .. }) => return Ok(Some(RejectReason::InsufficientVolumeHistory)),
        Err(e) if !cfg.strict && e.is_data_gap() => return Ok(Some(RejectReason::NoMarketData)),
        Err(e) => return Err(e),
    };
    if addv < cfg.min_addv {
        return Ok(Some(RejectReason::MinAddv));
    }
    Ok(None)
}

/// Splits `txs` into kept and rejected records. Output order follows input order.
pub fn apply_filters(
    txs: &[InsiderTransaction],
    cfg: &FilterConfig,
    market: &impl MarketView,
) -> Result<FilterOutcome> {
    cfg.validate()?;
    let verdicts: Vec<Option<RejectReason>> = txs
        .par_iter()
        .map(|tx| check(tx, cfg, market).map_err(|e| e.for_event(&tx.accession_id)))
        .collect::<Result<_>>()?;
    let mut out = FilterOutcome::default();
    for (tx, verdict) in txs.iter().zip(verdicts) {
        match verdict {
            None => out.kept.push(tx.clone()),
            Some(reject_reason) => out.rejected.push(Rejected {
                tx: tx.clone(),
                reject_reason,
            }),
        }
    }
    Ok(out)
}
