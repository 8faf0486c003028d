use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use super::{compute_features, PurchaseHistory, SectorMap};
use crate::error::{Error, Result};
use crate::eventstudy::{EventKey, LabeledEvent, SkippedEvent};
use crate::marketdata::MarketView;

pub const N_FEATURES: usize = 12;

/// Column order of every feature matrix.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "pct_from_52w_high",
    "return_mtd",
    "volatility_30d",
    "market_cap_at_filing",
    "pct_from_52w_low",
    "avg_daily_vol_at_filing",
    "is_biotech",
    "price_deviation",
    "transaction_value",
    "is_first_purchase_12m",
    "title_score",
    "value_vs_history_ratio",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowMeta {
    pub event_key: EventKey,
    pub disclosure_date: NaiveDate,
}

/// Dense row-major design matrix with labels and row keys.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<String>,
    values: Vec<f64>,
    labels: Vec<u8>,
    meta: Vec<RowMeta>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, values: Vec<f64>, labels: Vec<u8>, meta: Vec<RowMeta>) -> Result<Self> {
        let p = columns.len();
        if p == 0 || values.len() != labels.len() * p || meta.len() != labels.len() {
            return Err(Error::Internal(format!(
                "matrix of {} rows x {p} columns got {} values and {} meta rows",
                labels.len(),
                values.len(),
                meta.len()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        Ok(Self {
            columns,
            values,
            labels,
            meta,
        })
    }

    pub fn empty() -> Self {
        Self {
            columns: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            values: Vec::new(),
            labels: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.values[i * self.n_cols() + j]).collect()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn meta(&self) -> &[RowMeta] {
        &self.meta
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            values: indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: indices.iter().map(|&i| self.meta[i].clone()).collect(),
        }
    }

    /// Applies `f` to every value of column `j`.
    pub fn map_column(&mut self, j: usize, f: impl Fn(f64) -> f64) {
        let p = self.n_cols();
        for i in 0..self.n_rows() {
            self.values[i * p + j] = f(self.values[i * p + j]);
        }
    }

    /// Feature columns, then `event_key,label,disclosure_date`. Floats use
    /// shortest round-trip formatting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        header.extend(["event_key", "label", "disclosure_date"]);
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.row(i).iter().map(f64::to_string).collect();
            rec.push(self.meta[i].event_key.to_string());
            rec.push(self.labels[i].to_string());
            rec.push(self.meta[i].disclosure_date.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let source = path.display().to_string();
        let fmt = |row: usize, message: String| Error::Format {
            path: source.clone(),
            row,
            message,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => fmt(1, format!("{other:?}")),
        })?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let p = header.len().saturating_sub(3);
        if p == 0 || header[p..] != ["event_key", "label", "disclosure_date"] {
            return Err(fmt(1, "header must end with event_key,label,disclosure_date".into()));
        }
        let columns = header[..p].to_vec();
        let (mut values, mut labels, mut meta) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            for j in 0..p {
                values.push(
                    rec[j]
                        .parse::<f64>()
                        .map_err(|e| fmt(row, format!("{}: {e}", columns[j])))?,
                );
            }
            meta.push(RowMeta {
                event_key: rec[p].parse()?,
                disclosure_date: rec[p + 2]
                    .parse()
                    .map_err(|e| fmt(row, format!("disclosure_date: {e}")))?,
            });
            labels.push(match &rec[p + 1] {
                "0" => 0,
                "1" => 1,
                other => return Err(fmt(row, format!("label `{other}` is not 0/1"))),
            });
        }
        Self::new(columns, values, labels, meta)
    }
}

/// Feature rows for labeled events, ordered by `(disclosure_date, event_key)`.
/// Events whose features cannot be computed are skipped unless `strict`.
pub fn build_matrix(
    events: &[LabeledEvent],
    market: &impl MarketView,
    history: &PurchaseHistory,
    sectors: &SectorMap,
    strict: bool,
) -> Result<(FeatureMatrix, Vec<SkippedEvent>)> {
    let mut order: Vec<&LabeledEvent> = events.iter().collect();
    order.sort_by(|a, b| (a.event.disclosure_date(), &a.event.key).cmp(&(b.event.disclosure_date(), &b.event.key)));
    let results: Vec<_> = order
        .par_iter()
        .map(|le| compute_features(&le.event, market, history, sectors))
        .collect();
    let mut matrix = FeatureMatrix::empty();
    let mut skipped = Vec::new();
    for (le, result) in order.into_iter().zip(results) {
        match result {
            Ok(fv) => {
                matrix.values.extend(fv.to_row());
                matrix.labels.push(le.outcome.label);
                matrix.meta.push(RowMeta {
                    event_key: le.event.key.clone(),
                    disclosure_date: le.event.disclosure_date(),
                });
            }
            Err(e) if !strict && e.is_data_gap() => skipped.push(SkippedEvent {
                event_key: le.event.key.clone(),
                reason: e.reason_code().to_string(),
                detail: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok((matrix, skipped))
}
