//! Synthetic filings, bars and factors with planted effects.
//!
//! Every random draw comes from ChaCha8 streams derived from the config seed:
//! stream `i` drives issuer `i`'s price path and event shapes, a dedicated
//! stream drives factor returns and another the per-event labels. Output is
//! therefore identical for a given seed on every platform whose `exp`/`ln`
//! agree.

mod generate;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventstudy::EventKey;
use crate::features::SectorMap;
use crate::filings::{write_form4, write_jsonl, CusipMap, InsiderTransaction};
use crate::marketdata::{write_bars, write_factors, DailyBar, FactorReturns};
use crate::strata::{BucketSpec, RegimeSeries};

pub use generate::generate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSignal {
    pub w_52w_high: f64,
    pub w_price_dev: f64,
    pub base_rate: f64,
    /// Standard deviation of the unobserved logit noise.
    pub noise_sd: f64,
}

impl Default for PlantedSignal {
    fn default() -> Self {
        Self {
            w_52w_high: 1.2,
            w_price_dev: 0.5,
            base_rate: 0.27,
            noise_sd: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_issuers: usize,
    pub n_events: usize,
    pub seed: u64,
    /// Disclosure dates fall within `[start, end]`.
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub planted: PlantedSignal,
    /// Target mean CAR per price-deviation bucket.
    pub bucket_effect: Vec<f64>,
    /// Relative frequency of each price-deviation bucket.
    pub bucket_weights: Vec<f64>,
    /// Requires `bucket_effect` to be non-decreasing.
    pub momentum: bool,
    pub horizon: usize,
    pub estimation_window: usize,
    pub car_threshold: f64,
    /// Extra open-market sales per purchase, for the filter to reject.
    pub sale_fraction: f64,
    pub biotech_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_issuers: 500,
            n_events: 10_000,
            seed: 7,
            start: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2024, 12, 31).expect("valid date"),
            planted: PlantedSignal::default(),
            bucket_effect: vec![0.023, 0.047, 0.044, 0.048, 0.063],
            bucket_weights: vec![10_787.0, 1_820.0, 662.0, 793.0, 2_998.0],
            momentum: false,
            horizon: 30,
            estimation_window: 252,
            car_threshold: 0.10,
            sale_fraction: 0.05,
            biotech_share: 0.25,
        }
    }
}

/// Minimum trading days between consecutive purchases by one issuer, beyond
/// the outcome window.
pub(crate) const EVENT_GAP: usize = 15;
pub(crate) const MAX_LAG: usize = 5;

impl SynthConfig {
    pub fn null_model(mut self) -> Self {
        self.planted.w_52w_high = 0.0;
        self.planted.w_price_dev = 0.0;
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub(crate) fn event_spacing(&self) -> usize {
        self.horizon + MAX_LAG + EVENT_GAP
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = &self.planted;
        if !(p.base_rate > 0.0 && p.base_rate < 1.0) {
            return bad(format!("base_rate must lie in (0, 1), got {}", p.base_rate));
        }
        if ![p.w_52w_high, p.w_price_dev].iter().all(|w| w.is_finite()) || !(p.noise_sd >= 0.0) {
            return bad("planted weights must be finite and noise_sd non-negative".into());
        }
        if self.n_events == 0 || self.n_issuers == 0 {
            return bad("n_events and n_issuers must be at least 1".into());
        }
        if self.start >= self.end {
            return bad(format!("date range {}..{} is empty", self.start, self.end));
        }
        let buckets = BucketSpec::default().n_buckets();
        if self.bucket_effect.len() != buckets || self.bucket_weights.len() != buckets {
            return bad(format!("bucket_effect and bucket_weights need {buckets} entries"));
        }
        if self.bucket_weights.iter().any(|w| !(*w >= 0.0)) || self.bucket_weights.iter().sum::<f64>() <= 0.0 {
            return bad("bucket_weights must be non-negative with a positive sum".into());
        }
        if self.bucket_effect.iter().any(|e| !e.is_finite() || e.abs() >= 1.0) {
            return bad("bucket_effect entries must be finite and within (-1, 1)".into());
        }
        if self.momentum && self.bucket_effect.windows(2).any(|w| w[0] > w[1]) {
            return bad("momentum planting needs a non-decreasing bucket_effect".into());
        }
        if self.horizon == 0 || self.estimation_window < 30 {
            return bad("horizon must be positive and estimation_window at least 30".into());
        }
        if !(0.0..=1.0).contains(&self.sale_fraction) || !(0.0..=1.0).contains(&self.biotech_share) {
            return bad("sale_fraction and biotech_share must lie in [0, 1]".into());
        }
        let days = generate::trading_days(self.start, self.end).len();
        let per_issuer = if days > MAX_LAG {
            (days - MAX_LAG - 1) / self.event_spacing() + 1
        } else {
            0
        };
        let capacity = per_issuer * self.n_issuers;
        if self.n_events > capacity {
            return bad(format!(
                "{} events do not fit: {} issuers x {} slots of {} trading days",
                self.n_events,
                self.n_issuers,
                per_issuer,
                self.event_spacing()
            ));
        }
        Ok(())
    }
}

/// Generation-side record of one planted purchase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub event_key: EventKey,
    pub ticker: String,
    pub transaction_date: NaiveDate,
    pub price_per_share: f64,
    pub price_deviation: f64,
    pub bucket: usize,
    pub pct_from_52w_high: f64,
    pub z_52w_high: f64,
    pub z_price_dev: f64,
    /// Bernoulli parameter the label was drawn from.
    pub intended_prob: f64,
    pub label: u8,
    /// CAR the outcome window was built to produce.
    pub intended_car: f64,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub config: SynthConfig,
    /// Purchases and sales, grouped one filing per record.
    pub transactions: Vec<InsiderTransaction>,
    pub bars: Vec<DailyBar>,
    pub factors: Vec<FactorReturns>,
    pub cusip_map: CusipMap,
    pub sectors: SectorMap,
    pub regime: Vec<(NaiveDate, f64)>,
    pub truth: Vec<TruthRecord>,
    /// Logit intercept in force after the last event.
    pub intercept: f64,
}

impl SynthData {
    pub fn regime_series(&self) -> RegimeSeries {
        RegimeSeries::new(self.regime.iter().copied())
    }
}

/// File layout consumed by the pipeline, relative to the dataset root.
pub mod layout {
    pub const FILINGS: &str = "filings";
    pub const CUSIP_MAP: &str = "cusip_map.csv";
    pub const BARS: &str = "bars.csv";
    pub const FACTORS: &str = "factors.csv";
    pub const SECTORS: &str = "sectors.csv";
    pub const REGIME: &str = "regime.csv";
    pub const TRUTH: &str = "truth.jsonl";
    pub const SUMMARY: &str = "synth_summary.json";
    pub const CONFIG: &str = "synth.toml";
}

/// Writes the dataset; returns the written paths in a fixed order.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<Vec<PathBuf>> {
    let filings = dir.join(layout::FILINGS);
    std::fs::create_dir_all(&filings).map_err(|e| Error::io(&filings, e))?;
    let mut by_accession: BTreeMap<&str, Vec<InsiderTransaction>> = BTreeMap::new();
    for tx in &data.transactions {
        by_accession.entry(&tx.accession_id).or_default().push(tx.clone());
    }
    let docs: Vec<(&str, Vec<InsiderTransaction>)> = by_accession.into_iter().collect();
    docs.par_iter().try_for_each(|(acc, records)| {
        let path = filings.join(format!("{acc}.xml"));
        std::fs::write(&path, write_form4(records)?).map_err(|e| Error::io(&path, e))
    })?;

    let mut written = vec![filings];
    let mut out = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    data.cusip_map.write(&out(layout::CUSIP_MAP))?;
    write_bars(&out(layout::BARS), &data.bars)?;
    write_factors(&out(layout::FACTORS), &data.factors)?;
    data.sectors.write(&out(layout::SECTORS))?;

    let regime_path = out(layout::REGIME);
    let mut w = csv::Writer::from_path(&regime_path)?;
    w.write_record(["date", "value"])?;
    for (d, v) in &data.regime {
        w.write_record([d.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&regime_path, e))?;

    write_jsonl(&out(layout::TRUTH), &data.truth)?;
    let summary = describe(&data.config, &data.truth, data.intercept);
    let summary_path = out(layout::SUMMARY);
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    std::fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
    let config_path = out(layout::CONFIG);
    let text = toml::to_string(&data.config).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(&config_path, text).map_err(|e| Error::io(&config_path, e))?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTruth {
    pub bucket: String,
    pub target_mean_car: f64,
    pub n: usize,
    pub realized_mean_car: Option<f64>,
    pub label_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub seed: u64,
    pub n_events: usize,
    pub n_issuers_with_events: usize,
    pub planted: PlantedSignal,
    pub intercept: f64,
    pub label_rate: f64,
    pub mean_intended_prob: f64,
    pub corr_z: f64,
    pub buckets: Vec<BucketTruth>,
    /// Largest |realized - target| over non-empty buckets.
    pub max_abs_bucket_diff: f64,
}

/// Planted parameters and realised moments of a generated dataset.
pub fn describe(cfg: &SynthConfig, truth: &[TruthRecord], intercept: f64) -> SynthSummary {
    let spec = BucketSpec::default();
    let n = truth.len().max(1) as f64;
    let mut per: Vec<(usize, f64, usize)> = vec![(0, 0.0, 0); spec.n_buckets()];
    for t in truth {
        let b = &mut per[t.bucket];
        b.0 += 1;
        b.1 += t.intended_car;
        b.2 += usize::from(t.label);
    }
    let buckets: Vec<BucketTruth> = per
        .iter()
        .enumerate()
        .map(|(k, &(count, sum, pos))| BucketTruth {
            bucket: spec.label(k),
            target_mean_car: cfg.bucket_effect[k],
            n: count,
            realized_mean_car: (count > 0).then(|| sum / count as f64),
            label_rate: (count > 0).then(|| pos as f64 / count as f64),
        })
        .collect();
    let max_abs_bucket_diff = buckets
        .iter()
        .filter_map(|b| Some((b.realized_mean_car? - b.target_mean_car).abs()))
        .fold(0.0, f64::max);
    let issuers: std::collections::BTreeSet<&str> = truth.iter().map(|t| t.event_key.issuer_id.as_str()).collect();
    let (z1, z2): (Vec<f64>, Vec<f64>) = truth.iter().map(|t| (t.z_52w_high, t.z_price_dev)).unzip();
    SynthSummary {
        seed: cfg.seed,
        n_events: truth.len(),
        n_issuers_with_events: issuers.len(),
        planted: cfg.planted.clone(),
        intercept,
        label_rate: truth.iter().map(|t| f64::from(t.label)).sum::<f64>() / n,
        mean_intended_prob: truth.iter().map(|t| t.intended_prob).sum::<f64>() / n,
        corr_z: correlation(&z1, &z2),
        buckets,
        max_abs_bucket_diff,
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 {
        return 0.0;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
