//! Dense least squares by Householder QR, sized for small designs (a handful
//! of columns, a few thousand rows).

use crate::error::{Error, Result};

/// Columns whose QR pivot falls below this fraction of the largest column
/// norm are treated as linearly dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coef: Vec<f64>,
    /// `(X'X)^-1`, row-major `p x p`.
    pub xtx_inv: Vec<f64>,
}

/// Solves `min ||X b - y||` for row-major `x` with `p` columns.
pub fn least_squares(x: &[f64], p: usize, y: &[f64]) -> Result<LeastSquares> {
    let n = y.len();
    if p == 0 || x.len() != n * p {
        return Err(Error::Internal(format!(
            "design is {} values for {n} rows x {p} cols",
            x.len()
        )));
    }
    if n < p {
        return Err(Error::SingularDesign);
    }
    // column-major working copy
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| (0..n).map(|i| x[i * p + j]).collect()).collect();
    let mut rhs = y.to_vec();
    let scale = a
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::SingularDesign);
    }

    for k in 0..p {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= RANK_TOL * scale {
            return Err(Error::SingularDesign);
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        };
        for col in a.iter_mut().skip(k + 1) {
            reflect(&mut col[k..]);
        }
        reflect(&mut rhs[k..]);
        a[k][k] = alpha;
        for val in a[k][k + 1..].iter_mut() {
            *val = 0.0;
        }
    }

    // R is upper triangular: r(i, j) = a[j][i] for i <= j
    let r = |i: usize, j: usize| a[j][i];
    let mut coef = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| r(i, j) * coef[j]).sum();
        coef[i] = (rhs[i] - s) / r(i, i);
    }

    // R^-1 by back substitution, then (X'X)^-1 = R^-1 R^-T
    let mut rinv = vec![0.0; p * p];
    for j in 0..p {
        rinv[j * p + j] = 1.0 / r(j, j);
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|k| r(i, k) * rinv[k * p + j]).sum();
            rinv[i * p + j] = -s / r(i, i);
        }
    }
    let mut xtx_inv = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            xtx_inv[i * p + j] = (i.max(j)..p).map(|k| rinv[i * p + k] * rinv[j * p + k]).sum();
        }
    }
    Ok(LeastSquares { coef, xtx_inv })
}

/// Solves the square system `a x = b` (row-major `a`).
pub fn solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    least_squares(a, b.len(), b).map(|ls| ls.coef)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_recovers_coefficients() {
        let rows: Vec<[f64; 3]> = (0..20)
            .map(|i| {
                let t = i as f64;
                [1.0, t.sin(), (0.3 * t).cos()]
            })
            .collect();
        let x: Vec<f64> = rows.iter().flatten().copied().collect();
        let y: Vec<f64> = rows.iter().map(|r| 0.5 * r[0] - 2.0 * r[1] + 3.0 * r[2]).collect();
        let ls = least_squares(&x, 3, &y).unwrap();
        for (got, want) in ls.coef.iter().zip([0.5, -2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_column_is_singular() {
        let x: Vec<f64> = (0..10).flat_map(|i| [1.0, i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(least_squares(&x, 3, &y), Err(Error::SingularDesign)));
    }

    #[test]
    fn inverse_gram_matches_direct_inverse() {
        let x = [1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 4.0];
        let ls = least_squares(&x, 2, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        // X'X = [[4, 7], [7, 21]], det = 35
        let want = [21.0 / 35.0, -7.0 / 35.0, -7.0 / 35.0, 4.0 / 35.0];
        for (g, w) in ls.xtx_inv.iter().zip(want) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn square_solve() {
        let got = solve(&[2.0, 1.0, 1.0, 3.0], &[3.0, 5.0]).unwrap();
        assert!((got[0] - 0.8).abs() < 1e-14 && (got[1] - 1.4).abs() < 1e-14);
    }
}
