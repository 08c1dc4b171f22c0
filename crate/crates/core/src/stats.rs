//! Monte Carlo reductions shared by the studies.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of contiguous blocks used by the jackknife.
pub const JACKKNIFE_BLOCKS: usize = 32;

/// Runs `f` over consecutive index blocks of `0..n` in parallel and returns
/// the results in block order.
pub fn par_chunks<T: Send>(n: usize, chunk: usize, f: impl Fn(Range<usize>) -> T + Sync + Send) -> Vec<T> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk)).into_par_iter().map(|c| f(c * chunk..((c + 1) * chunk).min(n))).collect()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

/// Mean of `samples` with a delete-one-block jackknife standard error over
/// `min(32, n)` contiguous blocks. NaN samples are skipped.
pub fn jackknife_mean(samples: &[f64]) -> MeanEstimate {
    let kept: Vec<f64> = samples.iter().copied().filter(|v| !v.is_nan()).collect();
    let n = kept.len();
    if n == 0 {
        return MeanEstimate { mean: f64::NAN, se: f64::NAN, count: 0 };
    }
    let total: f64 = kept.iter().sum();
    let mean = total / n as f64;
    if n == 1 {
        return MeanEstimate { mean, se: 0.0, count: 1 };
    }
    let g = JACKKNIFE_BLOCKS.min(n);
    let leave_out: Vec<f64> = (0..g)
        .map(|b| {
            let (lo, hi) = (b * n / g, (b + 1) * n / g);
            let block: f64 = kept[lo..hi].iter().sum();
            (total - block) / (n - (hi - lo)) as f64
        })
        .collect();
    let centre = leave_out.iter().sum::<f64>() / g as f64;
    let var = leave_out.iter().map(|v| (v - centre).powi(2)).sum::<f64>() * (g - 1) as f64 / g as f64;
    MeanEstimate { mean, se: var.sqrt(), count: n }
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input(format!("line fit needs >= 2 paired points, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Input("line fit needs distinct abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    Ok(LineFit { slope, intercept, residual: (rss / n).sqrt() })
}
