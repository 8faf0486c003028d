//! Classification metrics, ROC and calibration data, and gain-based importance.

mod plots;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::ModelArtifact;

pub use plots::{write_plots, write_table2};

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() == labels.len() {
        Ok(())
    } else {
        Err(Error::Shape {
            expected: labels.len(),
            got: scores.len(),
        })
    }
}

/// Mann-Whitney AUC from midranks; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, kept integral
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2
        let positives = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += positives * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// ROC vertices from `(0, 0)` to `(1, 1)`, one per distinct score threshold.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    Ok(roc_counts(scores, labels)?
        .into_iter()
        .map(|(fp, tp, n, p)| (fp as f64 / n as f64, tp as f64 / p as f64))
        .collect())
}

/// `(fp, tp, negatives, positives)` at each distinct threshold, descending.
fn roc_counts(scores: &[f64], labels: &[u8]) -> Result<Vec<(u64, u64, u64, u64)>> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (p, n) = (pos as u64, neg as u64);
    let mut out = vec![(0, 0, n, p)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = k + 1 == order.len() || scores[order[k + 1]] != scores[i];
        if last_of_tie {
            out.push((fp, tp, n, p));
        }
    }
    Ok(out)
}

/// Trapezoidal area under the ROC polygon.
pub fn roc_area(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let pts = roc_counts(scores, labels)?;
    let (n, p) = (pts[0].2 as u128, pts[0].3 as u128);
    let twice: u128 = pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) as u128 * (w[0].1 + w[1].1) as u128)
        .sum();
    Ok(twice as f64 / (2 * n * p) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub threshold: f64,
    pub confusion: Confusion,
    pub precision: f64,
    /// False when nothing was predicted positive and precision was set to 0.
    pub precision_defined: bool,
    pub recall: f64,
    pub f1: f64,
}

/// Predicted positive iff `score >= tau`.
pub fn classify_and_count(scores: &[f64], labels: &[u8], tau: f64) -> Classification {
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= tau, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let predicted = c.tp + c.fp;
    let actual = c.tp + c.fn_;
    let precision = if predicted > 0 {
        c.tp as f64 / predicted as f64
    } else {
        0.0
    };
    let recall = if actual > 0 { c.tp as f64 / actual as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Classification {
        threshold: tau,
        confusion: c,
        precision,
        precision_defined: predicted > 0,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub mean_predicted: Option<f64>,
    pub actual_rate: Option<f64>,
    pub count: usize,
}

fn bin_index(score: f64, n_bins: usize) -> usize {
    ((score * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1)
}

/// Equal-width bins over [0, 1]; empty bins are kept with `None` rates.
pub fn calibration(scores: &[f64], labels: &[u8], n_bins: usize) -> Result<Vec<CalibrationBin>> {
    check_lengths(scores, labels)?;
    if n_bins < 2 {
        return Err(Error::Metric(format!(
            "calibration needs at least 2 bins, got {n_bins}"
        )));
    }
    let mut sums = vec![(0.0, 0usize, 0usize); n_bins];
    for (&s, &y) in scores.iter().zip(labels) {
        let b = &mut sums[bin_index(s, n_bins)];
        b.0 += s;
        b.1 += usize::from(y);
        b.2 += 1;
    }
    Ok(sums
        .iter()
        .enumerate()
        .map(|(k, &(total, pos, count))| CalibrationBin {
            bin_lo: k as f64 / n_bins as f64,
            bin_hi: (k + 1) as f64 / n_bins as f64,
            mean_predicted: (count > 0).then(|| total / count as f64),
            actual_rate: (count > 0).then(|| pos as f64 / count as f64),
            count,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

pub fn score_histogram(scores: &[f64], n_bins: usize) -> Vec<HistogramBin> {
    let mut counts = vec![0usize; n_bins];
    for &s in scores {
        counts[bin_index(s, n_bins)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            bin_lo: k as f64 / n_bins as f64,
            bin_hi: (k + 1) as f64 / n_bins as f64,
            count,
        })
        .collect()
}

pub const CALIBRATION_BINS: usize = 10;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub n: usize,
    pub positives: usize,
    pub auc: f64,
    pub threshold: f64,
    pub precision: f64,
    pub precision_defined: bool,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub roc_points: Vec<(f64, f64)>,
    pub calibration_bins: Vec<CalibrationBin>,
    pub score_histogram: Vec<HistogramBin>,
}

pub fn evaluate_scores(model: &str, scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvaluationReport> {
    let c = classify_and_count(scores, labels, threshold);
    Ok(EvaluationReport {
        model: model.to_string(),
        n: labels.len(),
        positives: class_counts(labels).0,
        auc: auc(scores, labels)?,
        threshold,
        precision: c.precision,
        precision_defined: c.precision_defined,
        recall: c.recall,
        f1: c.f1,
        confusion: c.confusion,
        roc_points: roc_points(scores, labels)?,
        calibration_bins: calibration(scores, labels, CALIBRATION_BINS)?,
        score_histogram: score_histogram(scores, HISTOGRAM_BINS),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    /// Sum of split gains per feature.
    #[default]
    TotalGain,
    /// Mean gain per split.
    AverageGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub rank: usize,
    pub feature: String,
    pub importance: f64,
}

/// Features by descending normalised gain, ties in column order. Empty for a
/// model without splits.
pub fn importance_report(model: &ModelArtifact, kind: ImportanceKind) -> Vec<ImportanceRow> {
    let shares = match kind {
        ImportanceKind::TotalGain => &model.feature_gain,
        ImportanceKind::AverageGain => &model.feature_avg_gain,
    };
    if shares.iter().all(|&g| g == 0.0) {
        tracing::warn!("model has no splits; importance ranking is empty");
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..shares.len()).collect();
    idx.sort_by(|&a, &b| shares[b].total_cmp(&shares[a]).then(a.cmp(&b)));
    idx.into_iter()
        .enumerate()
        .map(|(r, j)| ImportanceRow {
            rank: r + 1,
            feature: model.columns[j].clone(),
            importance: shares[j],
        })
        .collect()
}
