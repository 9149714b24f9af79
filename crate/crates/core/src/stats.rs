//! Order-independent aggregation, standard errors and exponential rate fits.

use log::warn;

use crate::error::{Error, Result};

/// Pairwise (cascade) summation in a fixed order.
///
/// The split points depend only on the length, so the result is a pure
/// function of the input sequence regardless of how it was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean (unbiased variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanStderr {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n == 1 {
            return Self { mean, stderr: f64::INFINITY, n };
        }
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Self { mean, stderr: (var / n as f64).sqrt(), n }
    }

    pub fn upper(&self, k: f64) -> f64 {
        self.mean + k * self.stderr
    }

    pub fn lower(&self, k: f64) -> f64 {
        self.mean - k * self.stderr
    }
}

/// Mean and standard error of a Monte Carlo observable on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSeries {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_effective: usize,
}

impl EstimateSeries {
    /// Aggregates `samples[path][grid_point]`; paths are taken in the given
    /// order.
    pub fn from_samples(times: &[f64], samples: &[Vec<f64>]) -> Self {
        let mut mean = Vec::with_capacity(times.len());
        let mut stderr = Vec::with_capacity(times.len());
        let mut column = Vec::with_capacity(samples.len());
        for g in 0..times.len() {
            column.clear();
            column.extend(samples.iter().map(|s| s[g]));
            let m = MeanStderr::of(&column);
            mean.push(m.mean);
            stderr.push(m.stderr);
        }
        Self { times: times.to_vec(), mean, stderr, n_effective: samples.len() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Least-squares fit of `log y = log C - r t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    pub constant: f64,
    pub r_squared: f64,
    /// Standard error of the fitted rate.
    pub rate_stderr: f64,
    /// Standard error of `log C`.
    pub log_constant_stderr: f64,
    /// Number of points actually used.
    pub points: usize,
}

/// Fits `y ~ C exp(-r t)` on the positive entries of `ys`.
///
/// Nonpositive values are dropped with a warning; fewer than three usable
/// points is an error. A series that is exactly exponential (including a
/// constant one) has `r_squared = 1`.
pub fn fit_exponential_rate(ts: &[f64], ys: &[f64]) -> Result<RateFit> {
    if ts.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: ts.len(), got: ys.len() });
    }
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(ys)
        .filter(|(_, y)| **y > 0.0 && y.is_finite())
        .map(|(t, y)| (*t, y.ln()))
        .collect();
    if pts.len() < ys.len() {
        warn!("rate fit: dropped {} nonpositive values", ys.len() - pts.len());
    }
    let n = pts.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    let nf = n as f64;
    let tbar = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let lbar = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let stt: f64 = pts.iter().map(|p| (p.0 - tbar).powi(2)).sum();
    if stt == 0.0 {
        return Err(Error::InvalidParameter("rate fit needs distinct times".into()));
    }
    let stl: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.1 - lbar)).sum();
    let slope = stl / stt;
    let intercept = lbar - slope * tbar;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let sll: f64 = pts.iter().map(|p| (p.1 - lbar).powi(2)).sum();
    let scale = pts.iter().map(|p| p.1 * p.1).sum::<f64>().max(1.0);
    let r_squared = if sll <= 1e-24 * scale { 1.0 } else { (1.0 - sse / sll).max(0.0) };
    let s2 = sse / (nf - 2.0);
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    Ok(RateFit {
        rate: -slope,
        constant: intercept.exp(),
        r_squared,
        rate_stderr: (s2 / stt).sqrt(),
        log_constant_stderr: (s2 * sxx / (nf * stt)).sqrt(),
        points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn mean_and_stderr() {
        let m = MeanStderr::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // var = 5/3, se = sqrt(5/12)
        assert!((m.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStderr::of(&[7.0; 10]).stderr, 0.0);
    }

    #[test]
    fn exact_exponential_is_recovered() {
        let ts: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * (-1.7 * t).exp()).collect();
        let f = fit_exponential_rate(&ts, &ys).unwrap();
        assert!((f.rate - 1.7).abs() < 1e-12);
        assert!((f.constant - 3.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(f.rate_stderr < 1e-10);
    }

    #[test]
    fn constant_series_has_zero_rate_and_unit_r2() {
        let f = fit_exponential_rate(&[0.0, 1.0, 2.0, 3.0], &[2.0; 4]).unwrap();
        assert_eq!(f.rate.abs(), 0.0);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn too_few_points() {
        assert_eq!(fit_exponential_rate(&[0.0, 1.0], &[1.0, 0.5]), Err(Error::TooFewPoints(2)));
        assert_eq!(
            fit_exponential_rate(&[0.0, 1.0, 2.0, 3.0], &[1.0, 0.0, -1.0, 0.5]),
            Err(Error::TooFewPoints(2))
        );
    }
}
