//! Insider ownership filings: parsing, identifier mapping and the sample
//! filter chain.

mod cusip;
mod filter;
mod form4;
mod index;

use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use cusip::{map_cusip, CusipEntry, CusipMap};
pub use filter::{apply_filters, FilterConfig, FilterOutcome, RejectReason, Rejected};
pub use form4::{parse_form4, parse_form4_detailed, parse_form4_file, write_form4, ParsedDocument, VALUE_TOLERANCE};
pub use index::{fetch_filing_index, FilingSource};

use crate::error::{Error, Result};

/// One non-derivative transaction row from an ownership filing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsiderTransaction {
    pub accession_id: String,
    pub issuer_id: String,
    pub cusip: String,
    pub ticker: String,
    pub insider_id: String,
    pub insider_title_raw: String,
    pub transaction_date: NaiveDate,
    /// Filing acceptance date.
    pub disclosure_date: NaiveDate,
    pub transaction_code: char,
    pub shares: f64,
    pub price_per_share: f64,
    /// Always `shares * price_per_share`.
    pub transaction_value: f64,
}

impl InsiderTransaction {
    pub fn lag_days(&self) -> i64 {
        (self.disclosure_date - self.transaction_date).num_days()
    }
}

/// Parses every document from `paths` in parallel; results keep path order.
pub fn parse_documents(paths: &[std::path::PathBuf]) -> Result<Vec<ParsedDocument>> {
    use rayon::prelude::*;
    paths
        .par_iter()
        .map(|p| {
            parse_form4_file(p).map_err(|e| match e {
                Error::Io { .. } => e,
                other => other.for_event(p.display()),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.display().to_string(),
            row: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
