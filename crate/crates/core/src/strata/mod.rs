//! Abnormal returns stratified by price deviation at disclosure, with
//! significance tests, winsorisation and horizon/regime sweeps.

mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventstudy::{label_events, Event, EventKey, LabelConfig, LabeledEvent, SkippedEvent};
use crate::features::FeatureMatrix;
use crate::marketdata::MarketView;

pub use stats::{
    inc_beta, ln_gamma, median, quantile_sorted, student_t_cdf, two_sided_p, welch_t, winsorize, WelchTest,
};

pub const WINSOR_LOWER: f64 = 0.01;
pub const WINSOR_UPPER: f64 = 0.99;
pub const REGIME_CUTOFF: f64 = 20.0;
const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    edges: Vec<f64>,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self {
            edges: vec![0.0, 0.03, 0.05, 0.10],
        }
    }
}

fn pct(edge: f64) -> String {
    let v = (edge * 100.0 * 1e6).round() / 1e6;
    format!("{}", v + 0.0)
}

impl BucketSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.is_empty() || edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bucket edges must be finite and strictly increasing: {edges:?}"
            )));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_buckets(&self) -> usize {
        self.edges.len() + 1
    }

    /// Right-closed intervals; the first is `(-inf, e0]`, the last `(e_last, inf)`.
    pub fn bucket_of(&self, x: f64) -> usize {
        self.edges.partition_point(|&e| e < x)
    }

    pub fn label(&self, k: usize) -> String {
        let n = self.edges.len();
        match k {
            0 => format!("≤ {}%", pct(self.edges[0])),
            k if k == n => format!("> {}%", pct(self.edges[n - 1])),
            k => format!("{}%–{}%", pct(self.edges[k - 1]), pct(self.edges[k])),
        }
    }
}

/// One labelled event joined with its price deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataRow {
    pub event_key: EventKey,
    pub price_deviation: f64,
    pub car: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket: String,
    pub n: usize,
    pub n_tickers: usize,
    pub mean_car: Option<f64>,
    /// `1.96 * sd / sqrt(n)`; `None` below two observations.
    pub ci95_half_width: Option<f64>,
    pub prob_outperform: Option<f64>,
    pub median_car: Option<f64>,
    pub winsorized_mean_car: Option<f64>,
}

fn bucket_stats(label: String, rows: &[&StrataRow]) -> Result<BucketStats> {
    let n = rows.len();
    let tickers: BTreeSet<&str> = rows.iter().map(|r| r.event_key.issuer_id.as_str()).collect();
    if n == 0 {
        return Ok(BucketStats {
            bucket: label,
            n,
            n_tickers: 0,
            mean_car: None,
            ci95_half_width: None,
            prob_outperform: None,
            median_car: None,
            winsorized_mean_car: None,
        });
    }
    // sorted so sums do not depend on input order
    let mut cars: Vec<f64> = rows.iter().map(|r| r.car).collect();
    cars.sort_by(f64::total_cmp);
    let mean = stats::mean(&cars);
    let mut wins = winsorize(&cars, WINSOR_LOWER, WINSOR_UPPER)?;
    wins.sort_by(f64::total_cmp);
    let positives = rows.iter().filter(|r| r.label == 1).count();
    Ok(BucketStats {
        bucket: label,
        n,
        n_tickers: tickers.len(),
        mean_car: Some(mean),
        ci95_half_width: (n >= 2).then(|| Z95 * stats::sample_variance(&cars).sqrt() / (n as f64).sqrt()),
        prob_outperform: Some(positives as f64 / n as f64),
        median_car: Some(quantile_sorted(&cars, 0.5)),
        winsorized_mean_car: Some(stats::mean(&wins)),
    })
}

fn check_finite(rows: &[StrataRow]) -> Result<()> {
    match rows
        .iter()
        .find(|r| !r.price_deviation.is_finite() || !r.car.is_finite())
    {
        Some(r) => Err(Error::Validation(format!(
            "event {} has non-finite price deviation or CAR",
            r.event_key
        ))),
        None => Ok(()),
    }
}

fn partition<'a>(rows: &'a [StrataRow], spec: &BucketSpec) -> Vec<Vec<&'a StrataRow>> {
    let mut out = vec![Vec::new(); spec.n_buckets()];
    for r in rows {
        out[spec.bucket_of(r.price_deviation)].push(r);
    }
    out
}

/// Per-bucket statistics in edge order; empty buckets are kept.
pub fn bucketize(rows: &[StrataRow], spec: &BucketSpec) -> Result<Vec<BucketStats>> {
    check_finite(rows)?;
    partition(rows, spec)
        .iter()
        .enumerate()
        .map(|(k, members)| bucket_stats(spec.label(k), members))
        .collect()
}

/// Welch test of the lowest bucket against the highest. `None` when either
/// bucket is too small or degenerate.
pub fn extreme_bucket_test(rows: &[StrataRow], spec: &BucketSpec) -> Option<WelchTest> {
    let parts = partition(rows, spec);
    let cars = |k: usize| {
        let mut v: Vec<f64> = parts[k].iter().map(|r| r.car).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    match welch_t(&cars(0), &cars(spec.n_buckets() - 1)) {
        Ok(t) => Some(t),
        Err(e) => {
            tracing::warn!("extreme-bucket test unavailable: {e}");
            None
        }
    }
}

/// Price deviation per event, from the feature matrix.
pub fn deviations_from_matrix(matrix: &FeatureMatrix) -> Result<BTreeMap<EventKey, f64>> {
    let j = matrix
        .column_index("price_deviation")
        .ok_or_else(|| Error::Validation("feature matrix has no price_deviation column".into()))?;
    Ok(matrix
        .meta()
        .iter()
        .enumerate()
        .map(|(i, m)| (m.event_key.clone(), matrix.row(i)[j]))
        .collect())
}

/// Joins outcomes with deviations; events without a deviation are skipped.
pub fn strata_rows(
    labeled: &[LabeledEvent],
    deviations: &BTreeMap<EventKey, f64>,
) -> (Vec<StrataRow>, Vec<SkippedEvent>) {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for le in labeled {
        match deviations.get(&le.event.key) {
            Some(&d) => rows.push(StrataRow {
                event_key: le.event.key.clone(),
                price_deviation: d,
                car: le.outcome.car,
                label: le.outcome.label,
            }),
            None => skipped.push(SkippedEvent {
                event_key: le.event.key.clone(),
                reason: "no_price_deviation".into(),
                detail: "event has no feature row".into(),
            }),
        }
    }
    (rows, skipped)
}

pub const TABLE4_HEADER: [&str; 6] = ["Price Deviation", "N", "Tickers", "Mean CAR", "95% CI", "Pr(CAR>10%)"];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Fractions, not percentages; the CI column holds the half-width.
pub fn write_table4(path: &Path, buckets: &[BucketStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TABLE4_HEADER)?;
    for b in buckets {
        w.write_record([
            b.bucket.clone(),
            b.n.to_string(),
            b.n_tickers.to_string(),
            cell(b.mean_car),
            cell(b.ci95_half_width),
            cell(b.prob_outperform),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A dated series such as a volatility index; lookups take the last value on
/// or before the requested date.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegimeSeries {
    values: BTreeMap<NaiveDate, f64>,
}

impl RegimeSeries {
    pub fn new(values: impl IntoIterator<Item = (NaiveDate, f64)>) -> Self {
        Self {
            values: values.into_iter().collect(),
        }
    }

    pub fn value_at(&self, date: NaiveDate) -> Option<f64> {
        self.values.range(..=date).next_back().map(|(_, &v)| v)
    }

    /// CSV with header `date,value`.
    pub fn read(source: &str, input: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Rec {
            date: NaiveDate,
            value: f64,
        }
        let mut values = BTreeMap::new();
        for (i, rec) in csv::Reader::from_reader(input).deserialize::<Rec>().enumerate() {
            let rec = rec.map_err(|e| Error::Format {
                path: source.into(),
                row: i + 2,
                message: e.to_string(),
            })?;
            if !rec.value.is_finite() {
                return Err(Error::Format {
                    path: source.into(),
                    row: i + 2,
                    message: "non-finite value".into(),
                });
            }
            values.insert(rec.date, rec.value);
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&path.display().to_string(), f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonTable {
    pub horizon: usize,
    pub n_events: usize,
    pub buckets: Vec<BucketStats>,
    pub extreme_test: Option<WelchTest>,
    pub skipped: Vec<SkippedEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSplit {
    pub horizon: usize,
    pub cutoff: f64,
    /// Regime value at or below the cutoff.
    pub low: Vec<BucketStats>,
    pub high: Vec<BucketStats>,
    /// Events dated before the first regime observation.
    pub unassigned: Vec<EventKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub tables: Vec<HorizonTable>,
    pub regime: Option<RegimeSplit>,
}

fn horizon_rows(
    market: &impl MarketView,
    events: &[Event],
    deviations: &BTreeMap<EventKey, f64>,
    cfg: &LabelConfig,
) -> Result<(Vec<StrataRow>, Vec<SkippedEvent>)> {
    let (labeled, mut skipped) = label_events(market, events, cfg, false)?;
    let (rows, missing) = strata_rows(&labeled, deviations);
    skipped.extend(missing);
    skipped.sort_by(|a, b| a.event_key.cmp(&b.event_key));
    Ok((rows, skipped))
}

/// Re-labels at each horizon and re-buckets. With a regime series, the
/// `base.horizon` outcomes are also split at [`REGIME_CUTOFF`].
pub fn robustness_sweep(
    market: &impl MarketView,
    events: &[Event],
    deviations: &BTreeMap<EventKey, f64>,
    base: &LabelConfig,
    horizons: &[usize],
    regime: Option<&RegimeSeries>,
    spec: &BucketSpec,
) -> Result<SweepReport> {
    let mut cache: BTreeMap<usize, (Vec<StrataRow>, Vec<SkippedEvent>)> = BTreeMap::new();
    let mut wanted: Vec<usize> = horizons.to_vec();
    if regime.is_some() {
        wanted.push(base.horizon);
    }
    for &h in &wanted {
        if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(h) {
            let cfg = LabelConfig {
                horizon: h,
                ..base.clone()
            };
            slot.insert(horizon_rows(market, events, deviations, &cfg)?);
        }
    }
    let tables = horizons
        .iter()
        .map(|&h| {
            let (rows, skipped) = &cache[&h];
            Ok(HorizonTable {
                horizon: h,
                n_events: rows.len(),
                buckets: bucketize(rows, spec)?,
                extreme_test: extreme_bucket_test(rows, spec),
                skipped: skipped.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let regime = match regime {
        None => None,
        Some(series) => {
            let (rows, _) = &cache[&base.horizon];
            let (mut low, mut high, mut unassigned) = (Vec::new(), Vec::new(), Vec::new());
            for r in rows {
                match series.value_at(r.event_key.disclosure_date) {
                    Some(v) if v <= REGIME_CUTOFF => low.push(r.clone()),
                    Some(_) => high.push(r.clone()),
                    None => unassigned.push(r.event_key.clone()),
                }
            }
            Some(RegimeSplit {
                horizon: base.horizon,
                cutoff: REGIME_CUTOFF,
                low: bucketize(&low, spec)?,
                high: bucketize(&high, spec)?,
                unassigned,
            })
        }
    };
    Ok(SweepReport { tables, regime })
}

#[cfg(test)]
mod tests;
