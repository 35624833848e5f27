//! Nonparametric bootstrap over arbitrary estimator pipelines.

use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub const DEFAULT_REPLICATES: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Pipeline output on the original sample.
    pub point: Vec<f64>,
    pub se: Vec<f64>,
    /// Percentile interval at level `alpha`.
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub b_effective: usize,
    pub b_requested: usize,
    /// Replicates whose output length differed from `point`.
    pub shape_mismatches: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Quantile with linear interpolation between order statistics of a
/// sorted sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample standard deviation with `n − 1` denominator (zero for `n < 2`).
pub fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Row indices of bootstrap replicate `index`.
pub fn resample_indices(n: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut rng = stream(seed, index, Purpose::Resample);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Runs `pipeline` on `b` row-resamples of `data`.
///
/// Replicates failing with an identification error are dropped and
/// counted; any other error aborts. Replicate `r` always sees the same
/// resample for a given seed, however the work is scheduled.
pub fn bootstrap<F>(data: &Dataset, pipeline: F, b: usize, alpha: f64, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    if b < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 replicates, got {b}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let point = pipeline(data)?;
    let n = data.n();

    let outcomes: Vec<Result<Vec<f64>>> = (0..b as u64)
        .into_par_iter()
        .map(|r| data.resample(&resample_indices(n, seed, r)).and_then(|s| pipeline(&s)))
        .collect();

    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(b);
    let mut shape_mismatches = 0;
    for out in outcomes {
        match out {
            Ok(v) if v.len() == point.len() => kept.push(v),
            Ok(_) => shape_mismatches += 1,
            Err(e) if e.is_identification_failure() => {}
            Err(e) => return Err(e),
        }
    }
    let b_effective = kept.len();
    if 2 * b_effective < b {
        return Err(Error::TooManyFailures {
            effective: b_effective,
            requested: b,
        });
    }

    let dim = point.len();
    let mut se = Vec::with_capacity(dim);
    let mut ci_lower = Vec::with_capacity(dim);
    let mut ci_upper = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut col: Vec<f64> = kept.iter().map(|v| v[j]).collect();
        se.push(sample_sd(&col));
        col.sort_by(f64::total_cmp);
        ci_lower.push(quantile_sorted(&col, alpha / 2.0));
        ci_upper.push(quantile_sorted(&col, 1.0 - alpha / 2.0));
    }
    Ok(BootstrapResult {
        point,
        se,
        ci_lower,
        ci_upper,
        b_effective,
        b_requested: b,
        shape_mismatches,
        alpha,
        seed,
    })
}
