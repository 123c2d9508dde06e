//! Summary statistics for Monte-Carlo trials.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Root-mean-square error with a 95% normal-approximation interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseSummary {
    pub rmse: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: usize,
}

/// RMSE from squared errors. The interval is the delta-method transform of
/// the normal interval for the mean squared error.
pub fn rmse(squared_errors: &[f64]) -> RmseSummary {
    let n = squared_errors.len();
    if n == 0 {
        return RmseSummary { rmse: f64::NAN, ci_low: f64::NAN, ci_high: f64::NAN, trials: 0 };
    }
    let mean = squared_errors.iter().sum::<f64>() / n as f64;
    let value = mean.sqrt();
    if n < 2 || value == 0.0 {
        return RmseSummary { rmse: value, ci_low: value, ci_high: value, trials: n };
    }
    let var = squared_errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = 1.959_963_984_540_054 * (var / n as f64).sqrt() / (2.0 * value);
    RmseSummary { rmse: value, ci_low: (value - half).max(0.0), ci_high: value + half, trials: n }
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation and its two-sided p-value from the
/// t approximation with `n − 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len(), "spearman needs equal lengths");
    let n = x.len();
    if n < 3 {
        return (f64::NAN, f64::NAN);
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (a, b) = (rx[k] - mean, ry[k] - mean);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let rho = sxy / (sxx * syy).sqrt();
    let df = (n - 2) as f64;
    if rho.abs() >= 1.0 {
        return (rho.clamp(-1.0, 1.0), 0.0);
    }
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom");
    (rho, 2.0 * (1.0 - dist.cdf(t.abs())))
}
