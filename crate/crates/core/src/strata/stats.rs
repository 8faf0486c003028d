use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta, modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularised incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student t CDF with `dof` degrees of freedom (non-integer allowed).
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * inc_beta(dof / 2.0, 0.5, dof / (dof + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `P(|T| >= |t|)`.
pub fn two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(dof / 2.0, 0.5, dof / (dof + t * t))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t_stat: f64,
    pub p_value: f64,
    pub dof: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Unequal-variance two-sample t test with Welch-Satterthwaite degrees of
/// freedom and a two-sided p-value.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Test(format!(
            "Welch test needs at least 2 observations per sample (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mean(a), mean(b));
    let va = sample_variance(a) / a.len() as f64;
    let vb = sample_variance(b) / b.len() as f64;
    if va == 0.0 && vb == 0.0 {
        return Err(Error::Test("both samples have zero variance".into()));
    }
    let se2 = va + vb;
    let t_stat = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    Ok(WelchTest {
        t_stat,
        p_value: two_sided_p(t_stat, dof),
        dof,
        n_a: a.len(),
        n_b: b.len(),
        mean_a: ma,
        mean_b: mb,
    })
}

/// Linear interpolation between order statistics of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let mut lo = h.floor() as usize;
    // snap so that e.g. 60 * 0.09 interpolates at exactly 0.4
    let mut num = ((h - lo as f64) * FRAC_DEN as f64).round() as u64;
    if num >= FRAC_DEN {
        lo += 1;
        num = 0;
    }
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let (a, b) = (sorted[lo], sorted[lo + 1]);
    if num == 0 || a == b {
        return a;
    }
    // one rounding at the end keeps integer data exact
    let g = gcd(num, FRAC_DEN);
    let (p, q) = ((num / g) as f64, (FRAC_DEN / g) as f64);
    (a * q + p * (b - a)) / q
}

const FRAC_DEN: u64 = 1_000_000_000_000;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

/// Clips values to the `[lower_q, upper_q]` empirical quantiles.
pub fn winsorize(values: &[f64], lower_q: f64, upper_q: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Validation("cannot winsorize an empty sample".into()));
    }
    if !(0.0 <= lower_q && lower_q < upper_q && upper_q <= 1.0) {
        return Err(Error::Validation(format!(
            "winsorize quantiles must satisfy 0 <= lower < upper <= 1, got ({lower_q}, {upper_q})"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&sorted, lower_q);
    let hi = quantile_sorted(&sorted, upper_q);
    Ok(values.iter().map(|v| v.clamp(lo, hi)).collect())
}
