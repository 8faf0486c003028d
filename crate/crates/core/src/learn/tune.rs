use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbm::{train_gbm, GbmConfig};
use crate::error::{Error, Result};
use crate::evaluate::auc;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub train_rows: usize,
    pub valid_rows: usize,
    /// `None` when the fold was skipped for having a single class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: GbmConfig,
    pub best_index: usize,
    pub mean_auc: Vec<f64>,
    pub folds: Vec<Vec<FoldScore>>,
}

/// Expanding-window folds over date-ordered rows: fold `i` of `k` trains on the
/// first `i` slices of `n / (k + 1)` rows and validates on slice `i + 1` (the
/// last fold also takes the remainder).
pub fn tscv_folds(n: usize, k: usize) -> Result<Vec<(std::ops::Range<usize>, std::ops::Range<usize>)>> {
    if k < 2 {
        return Err(Error::Tuning(format!("need at least 2 folds, got {k}")));
    }
    let slice = n / (k + 1);
    if slice < 2 {
        return Err(Error::Tuning(format!(
            "{n} rows cannot form {k} expanding folds of at least 2 rows"
        )));
    }
    Ok((1..=k)
        .map(|i| {
            let end = if i == k { n } else { (i + 1) * slice };
            (0..i * slice, i * slice..end)
        })
        .collect())
}

/// Picks the grid entry with the highest mean validation AUC across folds.
/// Ties prefer fewer trees, then shallower trees, then earlier grid position.
pub fn tscv_tune(train: &FeatureMatrix, grid: &[GbmConfig], k: usize) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::Tuning("empty hyperparameter grid".into()));
    }
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    order.sort_by(|&a, &b| {
        (train.meta()[a].disclosure_date, &train.meta()[a].event_key)
            .cmp(&(train.meta()[b].disclosure_date, &train.meta()[b].event_key))
    });
    let data = train.select(&order);
    let folds = tscv_folds(data.n_rows(), k)?;
    let usable = |r: &std::ops::Range<usize>| {
        let ys = &data.labels()[r.clone()];
        ys.contains(&0) && ys.contains(&1)
    };
    let live: Vec<bool> = folds.iter().map(|(t, v)| usable(t) && usable(v)).collect();
    if !live.iter().any(|&l| l) {
        return Err(Error::Tuning("every fold has a single-class partition".into()));
    }

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let results: Vec<Result<FoldScore>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (tr, va) = &folds[f];
            let auc = if live[f] {
                let fit = data.select(&tr.clone().collect::<Vec<_>>());
                let valid = data.select(&va.clone().collect::<Vec<_>>());
                let model = train_gbm(&fit, &grid[c])?;
                Some(auc(&model.predict(&valid)?, valid.labels())?)
            } else {
                None
            };
            Ok(FoldScore {
                fold: f + 1,
                train_rows: tr.len(),
                valid_rows: va.len(),
                auc,
            })
        })
        .collect();
    let mut per_config: Vec<Vec<FoldScore>> = vec![Vec::new(); grid.len()];
    for (&(c, _), r) in jobs.iter().zip(results) {
        per_config[c].push(r?);
    }
    let mean_auc: Vec<f64> = per_config
        .iter()
        .map(|folds| {
            let scores: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
            scores.iter().sum::<f64>() / scores.len() as f64
        })
        .collect();
    let mut best = 0;
    for c in 1..grid.len() {
        let better = mean_auc[c] > mean_auc[best]
            || (mean_auc[c] == mean_auc[best]
                && (grid[c].n_trees, grid[c].max_depth) < (grid[best].n_trees, grid[best].max_depth));
        if better {
            best = c;
        }
    }
    Ok(TuneResult {
        best: grid[best].clone(),
        best_index: best,
        mean_auc,
        folds: per_config,
    })
}

/// Threshold grid `0.01, 0.02, ..., 0.99`.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (1..=99).map(|k| f64::from(k) / 100.0)
}

/// F1 as the exact fraction `2tp / (2tp + fp + fn)`.
fn f1_fraction(scores: &[f64], labels: &[u8], tau: f64) -> (u64, u64) {
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= tau, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    (2 * tp, 2 * tp + fp + fneg)
}

/// The grid threshold maximising F1 for `score >= tau`; ties go to the largest
/// threshold. F1 values are compared as exact fractions.
pub fn optimize_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if !labels.contains(&1) || !labels.contains(&0) {
        return Err(Error::Threshold);
    }
    let mut best = (0.0, (0u64, 1u64));
    for tau in threshold_grid() {
        let (num, den) = f1_fraction(scores, labels, tau);
        let (bn, bd) = best.1;
        // den > 0 because at least one label is positive
        if u128::from(num) * u128::from(bd) >= u128::from(bn) * u128::from(den) {
            best = (tau, (num, den));
        }
    }
    Ok(best.0)
}
