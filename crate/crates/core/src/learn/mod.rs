//! Temporal split, gradient-boosted trees, the logistic baseline, tuning and
//! the serialised model artifact.

mod gbm;
mod logistic;
mod tune;

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub use gbm::{bin_edges, log_loss, sigmoid, train_gbm, train_gbm_with, Gbm, GbmConfig, Node, Tree};
pub use logistic::{train_logistic, LogisticModel};
pub use tune::{optimize_threshold, threshold_grid, tscv_folds, tscv_tune, FoldScore, TuneResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_end: NaiveDate,
    pub valid_end: NaiveDate,
    pub test_end: NaiveDate,
}

impl Default for SplitSpec {
    fn default() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        Self {
            train_end: d(2022, 12, 31),
            valid_end: d(2023, 12, 31),
            test_end: d(2024, 12, 31),
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_end < self.valid_end && self.valid_end < self.test_end {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "split dates must increase: {} / {} / {}",
                self.train_end, self.valid_end, self.test_end
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partitions {
    pub train: FeatureMatrix,
    pub valid: FeatureMatrix,
    pub test: FeatureMatrix,
}

/// Splits by disclosure date with inclusive upper bounds. Rows after
/// `test_end` belong to no partition.
pub fn temporal_split(matrix: &FeatureMatrix, spec: &SplitSpec) -> Result<Partitions> {
    spec.validate()?;
    let mut idx: [Vec<usize>; 3] = Default::default();
    for (i, m) in matrix.meta().iter().enumerate() {
        let d = m.disclosure_date;
        if d <= spec.train_end {
            idx[0].push(i);
        } else if d <= spec.valid_end {
            idx[1].push(i);
        } else if d <= spec.test_end {
            idx[2].push(i);
        }
    }
    for (name, rows) in ["train", "validation", "test"].iter().zip(&idx) {
        if rows.is_empty() {
            return Err(Error::Config(format!("{name} partition is empty")));
        }
    }
    Ok(Partitions {
        train: matrix.select(&idx[0]),
        valid: matrix.select(&idx[1]),
        test: matrix.select(&idx[2]),
    })
}

pub const ARTIFACT_VERSION: u32 = 1;

/// Everything needed to score new rows and reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub columns: Vec<String>,
    pub split: SplitSpec,
    pub config: GbmConfig,
    pub gbm: Gbm,
    /// Total split gain per feature, normalised to sum to one.
    pub feature_gain: Vec<f64>,
    /// Mean gain per split per feature, normalised to sum to one.
    pub feature_avg_gain: Vec<f64>,
    pub threshold: f64,
    pub logistic: Option<LogisticModel>,
    /// Threshold tuned for the logistic baseline on the same validation rows.
    #[serde(default)]
    pub logistic_threshold: Option<f64>,
    pub tuning: Option<TuneResult>,
}

impl ModelArtifact {
    pub fn new(columns: Vec<String>, split: SplitSpec, config: GbmConfig, gbm: Gbm) -> Self {
        Self {
            format_version: ARTIFACT_VERSION,
            columns,
            split,
            feature_gain: gbm.gain_share(),
            feature_avg_gain: gbm.average_gain_share(),
            config,
            gbm,
            threshold: 0.5,
            logistic: None,
            logistic_threshold: None,
            tuning: None,
        }
    }

    fn check_columns(&self, matrix: &FeatureMatrix) -> Result<()> {
        if matrix.n_cols() != self.columns.len() {
            return Err(Error::Shape {
                expected: self.columns.len(),
                got: matrix.n_cols(),
            });
        }
        if matrix.columns() != self.columns.as_slice() {
            return Err(Error::Validation(format!(
                "feature columns {:?} do not match the model's {:?}",
                matrix.columns(),
                self.columns
            )));
        }
        Ok(())
    }

    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_columns(matrix)?;
        self.gbm.predict(matrix)
    }

    pub fn predict_logistic(&self, matrix: &FeatureMatrix) -> Result<Option<Vec<f64>>> {
        self.check_columns(matrix)?;
        self.logistic.as_ref().map(|m| m.predict(matrix)).transpose()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let artifact: Self = serde_json::from_str(&text)?;
        if artifact.format_version != ARTIFACT_VERSION {
            return Err(Error::Validation(format!(
                "model format version {} is not supported (expected {ARTIFACT_VERSION})",
                artifact.format_version
            )));
        }
        Ok(artifact)
    }
}
