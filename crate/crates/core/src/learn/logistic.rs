use serde::{Deserialize, Serialize};

use super::gbm::{check_labels, sigmoid};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::solve;

const MAX_ITER: usize = 500;
const GRAD_TOL: f64 = 1e-8;

/// L2-penalised logistic regression on standardised features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    /// One per input column; zero for dropped columns.
    pub coef: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Columns with zero training variance, excluded from the fit.
    pub dropped: Vec<usize>,
    pub l2: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogisticModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.coef)
                .zip(self.means.iter().zip(&self.scales))
                .map(|((x, b), (m, s))| if *b == 0.0 { 0.0 } else { b * (x - m) / s })
                .sum::<f64>()
    }

    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        if matrix.n_cols() != self.coef.len() {
            return Err(Error::Shape {
                expected: self.coef.len(),
                got: matrix.n_cols(),
            });
        }
        Ok((0..matrix.n_rows())
            .map(|i| sigmoid(self.margin(matrix.row(i))))
            .collect())
    }
}

fn objective(x: &[Vec<f64>], y: &[f64], w: &[f64], l2: f64) -> f64 {
    let nll: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let m: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            // log(1 + e^m) - y m, evaluated stably
            m.max(0.0) + (-m.abs()).exp().ln_1p() - yi * m
        })
        .sum();
    nll + 0.5 * l2 * w[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Newton's method with backtracking; the intercept is not penalised.
pub fn train_logistic(train: &FeatureMatrix, l2: f64) -> Result<LogisticModel> {
    if !(l2 >= 0.0) {
        return Err(Error::Config(format!("logistic l2 must be non-negative, got {l2}")));
    }
    check_labels(train.labels())?;
    let n = train.n_rows();
    let p = train.n_cols();
    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..p {
        let col = train.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        means[j] = mean;
        if var.sqrt() <= 1e-12 * mean.abs().max(1.0) {
            tracing::warn!(column = %train.columns()[j], "zero-variance column dropped from logistic fit");
            dropped.push(j);
        } else {
            scales[j] = var.sqrt();
            kept.push(j);
        }
    }
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row = train.row(i);
            std::iter::once(1.0)
                .chain(kept.iter().map(|&j| (row[j] - means[j]) / scales[j]))
                .collect()
        })
        .collect();
    let y: Vec<f64> = train.labels().iter().map(|&v| f64::from(v)).collect();
    let k = kept.len() + 1;
    let mut w = vec![0.0; k];
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        let mut grad = vec![0.0; k];
        let mut hess = vec![0.0; k * k];
        for (row, yi) in x.iter().zip(&y) {
            let m: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            let prob = 1.0 / (1.0 + (-m).exp());
            let r = prob - yi;
            let h = prob * (1.0 - prob);
            for a in 0..k {
                grad[a] += r * row[a];
                for b in 0..k {
                    hess[a * k + b] += h * row[a] * row[b];
                }
            }
        }
        for a in 1..k {
            grad[a] += l2 * w[a];
            hess[a * k + a] += l2;
        }
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < GRAD_TOL {
            break;
        }
        // tiny ridge keeps the Newton system solvable when l2 = 0 and data separate
        for a in 0..k {
            hess[a * k + a] += 1e-12;
        }
        let step = solve(&hess, &grad)?;
        let current = objective(&x, &y, &w, l2);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            if objective(&x, &y, &trial, l2) <= current || t < 1e-10 {
                w = trial;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
    }

    let mut coef = vec![0.0; p];
    for (slot, &j) in kept.iter().enumerate() {
        coef[j] = w[slot + 1];
    }
    Ok(LogisticModel {
        intercept: w[0],
        coef,
        means,
        scales,
        dropped,
        l2,
        iterations,
        grad_norm,
    })
}
