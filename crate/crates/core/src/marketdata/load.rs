use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{DailyBar, FactorReturns};
use crate::error::{Error, Result};

const BAR_HEADER: [&str; 6] = ["ticker", "date", "close", "adj_close", "volume", "shares_outstanding"];
const FACTOR_HEADER: [&str; 5] = ["date", "mkt_rf", "smb", "hml", "rf"];

/// Daily factor moves at or beyond this size are treated as a units error.
const FACTOR_SANITY_BOUND: f64 = 0.5;

struct Row<'a> {
    source: &'a str,
    line: usize,
    record: &'a csv::StringRecord,
}

impl Row<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.source.to_string(),
            row: self.line,
            message: message.into(),
        }
    }

    fn field(&self, i: usize, name: &str) -> Result<&str> {
        self.record
            .get(i)
            .map(str::trim)
            .ok_or_else(|| self.err(format!("missing column `{name}`")))
    }

    fn date(&self, i: usize, name: &str) -> Result<NaiveDate> {
        let raw = self.field(i, name)?;
        raw.parse()
            .map_err(|_| self.err(format!("unparseable date `{raw}` in `{name}`")))
    }

    fn number(&self, i: usize, name: &str) -> Result<f64> {
        let raw = self.field(i, name)?;
        let v: f64 = raw
            .parse()
            .map_err(|_| self.err(format!("unparseable number `{raw}` in `{name}`")))?;
        if !v.is_finite() {
            return Err(self.err(format!("non-finite `{name}`")));
        }
        Ok(v)
    }

    fn positive(&self, i: usize, name: &str) -> Result<f64> {
        let v = self.number(i, name)?;
        if v <= 0.0 {
            return Err(Error::Validation(format!(
                "{}, row {}: `{name}` must be positive, got {v}",
                self.source, self.line
            )));
        }
        Ok(v)
    }
}

fn check_header(source: &str, reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Format {
            path: source.to_string(),
            row: 1,
            message: format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

/// Parses a bars CSV. Returns the bars in file order and the row count.
pub fn read_bars(source: &str, input: impl Read) -> Result<(Vec<DailyBar>, usize)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(source, &mut reader, &BAR_HEADER)?;
    let mut bars = Vec::new();
    let mut seen = HashSet::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = Row {
            source,
            line,
            record: &record,
        };
        let ticker = row.field(0, "ticker")?.to_string();
        if ticker.is_empty() {
            return Err(row.err("empty ticker"));
        }
        let date = row.date(1, "date")?;
        let close = row.positive(2, "close")?;
        let adj_close = row.positive(3, "adj_close")?;
        let raw_volume = row.field(4, "volume")?;
        let volume: u64 = raw_volume
            .parse()
            .map_err(|_| row.err(format!("volume must be a non-negative integer, got `{raw_volume}`")))?;
        let shares_outstanding = row.positive(5, "shares_outstanding")?;
        if !seen.insert((ticker.clone(), date)) {
            return Err(Error::Format {
                path: source.to_string(),
                row: line,
                message: format!("duplicate key ({ticker}, {date})"),
            });
        }
        bars.push(DailyBar {
            ticker,
            date,
            close,
            adj_close,
            volume,
            shares_outstanding,
        });
    }
    let n = bars.len();
    Ok((bars, n))
}

pub fn load_bars(path: &Path) -> Result<(Vec<DailyBar>, usize)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_bars(&path.display().to_string(), std::io::BufReader::new(file))
}

/// Parses a factors CSV. With `percent` set, every factor column is divided by 100.
pub fn read_factors(source: &str, input: impl Read, percent: bool) -> Result<Vec<FactorReturns>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(source, &mut reader, &FACTOR_HEADER)?;
    let scale = if percent { 0.01 } else { 1.0 };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = Row {
            source,
            line,
            record: &record,
        };
        let date = row.date(0, "date")?;
        let mut vals = [0.0; 4];
        for (i, name) in FACTOR_HEADER[1..].iter().enumerate() {
            let v = row.number(i + 1, name)? * scale;
            if v.abs() >= FACTOR_SANITY_BOUND {
                return Err(Error::Validation(format!(
                    "{source}, row {line}: |{name}| = {} exceeds the daily sanity bound; \
                     percent-formatted files need the percent flag",
                    v.abs()
                )));
            }
            vals[i] = v;
        }
        if !seen.insert(date) {
            return Err(row.err(format!("duplicate factor date {date}")));
        }
        out.push(FactorReturns {
            date,
            mkt_rf: vals[0],
            smb: vals[1],
            hml: vals[2],
            rf: vals[3],
        });
    }
    Ok(out)
}

pub fn load_factors(path: &Path, percent: bool) -> Result<Vec<FactorReturns>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_factors(&path.display().to_string(), std::io::BufReader::new(file), percent)
}

pub fn write_bars<'a>(path: &Path, bars: impl IntoIterator<Item = &'a DailyBar>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", BAR_HEADER.join(",")).map_err(io)?;
    for b in bars {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            b.ticker, b.date, b.close, b.adj_close, b.volume, b.shares_outstanding
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_factors(path: &Path, factors: &[FactorReturns]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", FACTOR_HEADER.join(",")).map_err(io)?;
    for f in factors {
        writeln!(w, "{},{},{},{},{}", f.date, f.mkt_rf, f.smb, f.hml, f.rf).map_err(io)?;
    }
    w.flush().map_err(io)
}
