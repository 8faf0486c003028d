use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::InsiderTransaction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CusipEntry {
    pub permanent_id: String,
    pub ticker: String,
    pub effective_from: NaiveDate,
    /// Inclusive.
    pub effective_to: NaiveDate,
}

/// CUSIP to permanent identifier, with dated ticker ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CusipMap {
    entries: BTreeMap<String, Vec<CusipEntry>>,
}

impl CusipMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a range; ranges for one cusip may not overlap.
    pub fn insert(&mut self, cusip: &str, entry: CusipEntry) -> Result<()> {
        if entry.effective_to < entry.effective_from {
            return Err(Error::Validation(format!(
                "cusip {cusip}: range ends ({}) before it starts ({})",
                entry.effective_to, entry.effective_from
            )));
        }
        let ranges = self.entries.entry(cusip.to_string()).or_default();
        if let Some(clash) = ranges
            .iter()
            .find(|r| r.effective_from <= entry.effective_to && entry.effective_from <= r.effective_to)
        {
            return Err(Error::Validation(format!(
                "cusip {cusip}: range {}..{} overlaps {}..{}",
                entry.effective_from, entry.effective_to, clash.effective_from, clash.effective_to
            )));
        }
        ranges.push(entry);
        ranges.sort_by_key(|r| r.effective_from);
        Ok(())
    }

    pub fn lookup(&self, cusip: &str, date: NaiveDate) -> Option<&CusipEntry> {
        self.entries
            .get(cusip)?
            .iter()
            .find(|r| r.effective_from <= date && date <= r.effective_to)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads `cusip,permanent_id,ticker,effective_from,effective_to`; an empty
    /// `effective_to` means open-ended.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&path.display().to_string(), file)
    }

    pub fn read(source: &str, input: impl std::io::Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            cusip: String,
            permanent_id: String,
            ticker: String,
            effective_from: NaiveDate,
            effective_to: Option<NaiveDate>,
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut map = Self::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Format {
                path: source.to_string(),
                row: i + 2,
                message: e.to_string(),
            })?;
            map.insert(
                &row.cusip,
                CusipEntry {
                    permanent_id: row.permanent_id,
                    ticker: row.ticker,
                    effective_from: row.effective_from,
                    effective_to: row.effective_to.unwrap_or(NaiveDate::MAX),
                },
            )?;
        }
        Ok(map)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cusip", "permanent_id", "ticker", "effective_from", "effective_to"])?;
        for (cusip, ranges) in &self.entries {
            for r in ranges {
                let to = if r.effective_to == NaiveDate::MAX {
                    String::new()
                } else {
                    r.effective_to.to_string()
                };
                w.write_record([
                    cusip.as_str(),
                    &r.permanent_id,
                    &r.ticker,
                    &r.effective_from.to_string(),
                    &to,
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Replaces issuer id and ticker with the mapping in force on the trade date.
pub fn map_cusip(tx: &InsiderTransaction, map: &CusipMap) -> Result<InsiderTransaction> {
    let unmapped = || Error::UnmappedIdentifier {
        cusip: tx.cusip.clone(),
        date: tx.transaction_date,
    };
    if tx.cusip.is_empty() {
        return Err(unmapped());
    }
    let entry = map.lookup(&tx.cusip, tx.transaction_date).ok_or_else(unmapped)?;
    let mut out = tx.clone();
    out.issuer_id.clone_from(&entry.permanent_id);
    out.ticker.clone_from(&entry.ticker);
    Ok(out)
}
