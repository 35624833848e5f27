//! Propensity-score stratification of the interacted 2SLS.
//!
//! The estimated instrument propensity is cut into `k` equal-count bins.
//! Using the bin dummies as covariates makes them categorical, where the
//! interacted 2SLS is exact: with a constant plus `k − 1` dummies the
//! centered estimator targets the LATE, and with all `k` dummies (no
//! constant) each coefficient is the LATE of one bin. Read against the
//! bin intervals, the latter is a regressogram of the conditional LATE
//! as a function of the propensity score.

use nalgebra::DVector;

use crate::complier::{centered_interacted_2sls, fit_propensity, PropensityFit, PropensitySpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{dummy_coding, dummy_coding_with_constant, interacted_2sls};

#[derive(Debug, Clone, PartialEq)]
pub struct StratumPartition {
    /// Number of strata after merging.
    pub k: usize,
    /// Sorted upper edges of strata `1..k-1`; stratum `j` is
    /// `(boundaries[j-2], boundaries[j-1]]`.
    pub boundaries: Vec<f64>,
    /// Stratum of each unit, in `1..=k`.
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
    /// The stratum count originally requested.
    pub merged_from: usize,
}

impl StratumPartition {
    fn from_boundaries(ehat: &DVector<f64>, boundaries: Vec<f64>, merged_from: usize) -> Self {
        let k = boundaries.len() + 1;
        let labels: Vec<usize> = ehat
            .iter()
            .map(|&e| 1 + boundaries.iter().filter(|&&b| e > b).count())
            .collect();
        let mut counts = vec![0; k];
        for &l in &labels {
            counts[l - 1] += 1;
        }
        Self {
            k,
            boundaries,
            labels,
            counts,
            merged_from,
        }
    }

    /// Propensity interval covered by stratum `j` (1-based).
    pub fn interval(&self, j: usize) -> (f64, f64) {
        let lo = if j == 1 { 0.0 } else { self.boundaries[j - 2] };
        let hi = if j == self.k { 1.0 } else { self.boundaries[j - 1] };
        (lo, hi)
    }

    pub fn was_merged(&self) -> bool {
        self.k < self.merged_from
    }
}

/// Upper edges of `k` equal-count bins: the empirical quantiles
/// `sorted[ceil(j·n/k) − 1]` for `j = 1..k-1`.
///
/// With tied scores a quantile can coincide with the previous edge or
/// with the maximum, leaving a bin empty. Such an edge is moved to the
/// distinct score strictly between the previous edge and the maximum whose
/// cumulative count is nearest `j·n/k`, when one exists.
pub fn quantile_boundaries(ehat: &DVector<f64>, k: usize) -> Vec<f64> {
    let n = ehat.len();
    let mut sorted: Vec<f64> = ehat.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let Some(&max) = sorted.last() else {
        return Vec::new();
    };
    // (value, number of scores ≤ value) for each distinct score
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        match distinct.last_mut() {
            Some(last) if last.0 == v => last.1 = i + 1,
            _ => distinct.push((v, i + 1)),
        }
    }
    let mut edges: Vec<f64> = Vec::with_capacity(k.saturating_sub(1));
    for j in 1..k {
        let raw = sorted[(j * n).div_ceil(k) - 1];
        let prev = edges.last().copied().unwrap_or(f64::NEG_INFINITY);
        if raw > prev && raw < max {
            edges.push(raw);
            continue;
        }
        let target = (j * n) as f64 / k as f64;
        let best = distinct
            .iter()
            .filter(|(v, _)| *v > prev && *v < max)
            .min_by(|a, b| (a.1 as f64 - target).abs().total_cmp(&(b.1 as f64 - target).abs()));
        edges.push(best.map_or(raw, |b| b.0));
    }
    edges
}

fn stratum_problem(data: &Dataset, rows: &[usize]) -> Option<&'static str> {
    if rows.is_empty() {
        return Some("empty");
    }
    let (mut n1, mut d1, mut n0, mut d0) = (0.0, 0.0, 0.0, 0.0);
    for &i in rows {
        if data.z()[i] == 1.0 {
            n1 += 1.0;
            d1 += data.d()[i];
        } else {
            n0 += 1.0;
            d0 += data.d()[i];
        }
    }
    if n1 == 0.0 || n0 == 0.0 {
        Some("single instrument arm")
    } else if (d1 / n1 - d0 / n0).abs() < 1e-12 {
        Some("no first-stage variation")
    } else {
        None
    }
}

/// Equal-count propensity strata, merged until every stratum holds both
/// instrument arms with a nonzero first-stage difference.
///
/// An invalid stratum is merged into its lower neighbour (the first one
/// into its upper neighbour), re-checking from the bottom after each merge.
pub fn partition_by_propensity(data: &Dataset, ehat: &DVector<f64>, k: usize) -> Result<StratumPartition> {
    let n = ehat.len();
    if n != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "{n} propensity scores for {} rows",
            data.n()
        )));
    }
    if k == 0 || n < 2 * k {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} strata from {n} units"
        )));
    }
    let mut boundaries = quantile_boundaries(ehat, k);
    loop {
        let part = StratumPartition::from_boundaries(ehat, boundaries.clone(), k);
        let mut rows = vec![Vec::new(); part.k];
        for (i, &l) in part.labels.iter().enumerate() {
            rows[l - 1].push(i);
        }
        let bad = rows
            .iter()
            .enumerate()
            .find_map(|(j, r)| stratum_problem(data, r).map(|why| (j, why)));
        match bad {
            None => return Ok(part),
            Some((_, why)) if part.k == 1 => return Err(Error::Unpartitionable(why.into())),
            Some((0, _)) => {
                boundaries.remove(0);
            }
            Some((j, _)) => {
                boundaries.remove(j - 1);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct StratifiedResult {
    /// Centered interacted 2SLS on the stratum coding, an estimate of the LATE.
    pub tau_star: f64,
    /// Per-stratum LATE estimates.
    pub beta_star: DVector<f64>,
    pub partition: StratumPartition,
}

/// Stratified LATE and per-stratum effects for a given propensity fit.
pub fn stratified_late(data: &Dataset, prop: &PropensityFit, k: usize) -> Result<StratifiedResult> {
    let partition = partition_by_propensity(data, &prop.ehat, k)?;
    let labels = &partition.labels;

    let (with_const, _) = dummy_coding_with_constant(labels);
    let coded = data.with_covariates(with_const, true)?;
    let cell_prop = fit_propensity(&coded, &PropensitySpec::SaturatedOn(labels.clone()))?;
    let tau_star = centered_interacted_2sls(&coded, &cell_prop)?.value;

    let (dummies, _) = dummy_coding(labels);
    let beta_star = interacted_2sls(&data.with_covariates(dummies, false)?)?.beta;

    Ok(StratifiedResult {
        tau_star,
        beta_star,
        partition,
    })
}

/// Stratified LATE with the propensity model refitted on `data`.
pub fn stratified_late_refit(data: &Dataset, spec: &PropensitySpec, k: usize) -> Result<StratifiedResult> {
    let prop = fit_propensity(data, spec)?;
    stratified_late(data, &prop, k)
}

/// One bin of the piecewise-constant approximation of the conditional LATE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressogramBin {
    pub lower: f64,
    pub upper: f64,
    pub estimate: f64,
    pub count: usize,
}

pub fn regressogram(data: &Dataset, prop: &PropensityFit, k: usize) -> Result<Vec<RegressogramBin>> {
    let res = stratified_late(data, prop, k)?;
    Ok(bins_of(&res))
}

pub(crate) fn bins_of(res: &StratifiedResult) -> Vec<RegressogramBin> {
    (1..=res.partition.k)
        .map(|j| {
            let (lower, upper) = res.partition.interval(j);
            RegressogramBin {
                lower,
                upper,
                estimate: res.beta_star[j - 1],
                count: res.partition.counts[j - 1],
            }
        })
        .collect()
}
