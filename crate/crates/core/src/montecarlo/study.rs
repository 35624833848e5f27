//! Replication engine: bias and spread of estimators over simulated samples.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::complier::{abadie_beta, centered_interacted_2sls, fit_propensity, PropensityFit, PropensitySpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{additive_2sls, interacted_2sls, interacted_additive_2sls};
use crate::inference::sample_sd;
use crate::montecarlo::dgp::{generate_replicate, DgpSpec};
use crate::montecarlo::oracle::oracle_estimands;
use crate::stratify::stratified_late;

/// Estimators the replication engine knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StudyEstimator {
    Additive,
    InteractedAdditive,
    /// Centered interacted 2SLS with complier means from kappa weights.
    Centered,
    /// Propensity-score stratification with the given number of strata.
    Stratified(usize),
    /// Full coefficient vector of interacted 2SLS.
    InteractedBeta,
    /// Kappa-weighted complier projection coefficients.
    AbadieBeta,
}

impl StudyEstimator {
    /// The estimator columns of the standard bias table.
    pub const TABLE: [StudyEstimator; 6] = [
        StudyEstimator::Additive,
        StudyEstimator::InteractedAdditive,
        StudyEstimator::Centered,
        StudyEstimator::Stratified(5),
        StudyEstimator::Stratified(10),
        StudyEstimator::Stratified(15),
    ];

    /// Whether the estimand is the coefficient vector rather than the LATE.
    pub fn is_vector(self) -> bool {
        matches!(self, StudyEstimator::InteractedBeta | StudyEstimator::AbadieBeta)
    }
}

impl fmt::Display for StudyEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StudyEstimator::Additive => f.write_str("++"),
            StudyEstimator::InteractedAdditive => f.write_str("x+"),
            StudyEstimator::Centered => f.write_str("xx"),
            StudyEstimator::Stratified(k) => write!(f, "strat-{k}"),
            StudyEstimator::InteractedBeta => f.write_str("beta"),
            StudyEstimator::AbadieBeta => f.write_str("kappa-beta"),
        }
    }
}

impl FromStr for StudyEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let parsed = match t.as_str() {
            "++" | "additive" => StudyEstimator::Additive,
            "x+" | "×+" | "interacted-additive" => StudyEstimator::InteractedAdditive,
            "xx" | "××" | "centered" => StudyEstimator::Centered,
            "beta" | "interacted" => StudyEstimator::InteractedBeta,
            "kappa-beta" | "abadie" => StudyEstimator::AbadieBeta,
            other => {
                let k = other
                    .strip_prefix("strat-")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator {s:?}")))?;
                StudyEstimator::Stratified(k)
            }
        };
        Ok(parsed)
    }
}

/// Population targets used to compute bias.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyTruth {
    pub tau_c: f64,
    pub beta_c: Vec<f64>,
    /// `"oracle"` for exact enumeration, `"closed-form"` for registered constants.
    pub source: &'static str,
}

/// Closed-form truth when registered, otherwise the finite-support oracle.
pub fn resolve_truth(spec: &DgpSpec) -> Result<StudyTruth> {
    if let Some(t) = &spec.truth {
        return Ok(StudyTruth {
            tau_c: t.tau_c,
            beta_c: t.beta_c.clone(),
            source: "closed-form",
        });
    }
    let o = oracle_estimands(spec)?;
    Ok(StudyTruth {
        tau_c: o.tau_c,
        beta_c: o.beta_c.iter().copied().collect(),
        source: "oracle",
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    /// `mean − truth`, coordinate-wise.
    pub bias: Vec<f64>,
    pub sd: Vec<f64>,
    /// Monte Carlo standard error of the mean, `sd / √successes`.
    pub mc_se: Vec<f64>,
    pub successes: usize,
    pub failures: usize,
    /// Per-replicate output, `None` where the estimator failed.
    #[serde(skip)]
    pub estimates: Vec<Option<Vec<f64>>>,
}

impl EstimatorSummary {
    /// Replicate values of coordinate `j` over successful replicates.
    pub fn values(&self, j: usize) -> Vec<f64> {
        self.estimates.iter().flatten().map(|v| v[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub dgp: String,
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    pub truth: StudyTruth,
    pub estimators: Vec<EstimatorSummary>,
}

impl McSummary {
    pub fn get(&self, est: StudyEstimator) -> Option<&EstimatorSummary> {
        let tag = est.to_string();
        self.estimators.iter().find(|e| e.estimator == tag)
    }

    /// Long-format CSV: `replicate,estimator,coordinate,estimate`, with an
    /// empty estimate for failed replicates.
    pub fn to_replicate_csv(&self) -> String {
        let mut out = String::from("replicate,estimator,coordinate,estimate\n");
        for r in 0..self.reps {
            for e in &self.estimators {
                match &e.estimates[r] {
                    Some(v) => {
                        for (j, x) in v.iter().enumerate() {
                            let _ = writeln!(out, "{r},{},{j},{x:?}", e.estimator);
                        }
                    }
                    None => {
                        let _ = writeln!(out, "{r},{},0,", e.estimator);
                    }
                }
            }
        }
        out
    }
}

/// Propensity model used by the kappa-based estimators: cell means when
/// the covariate law is discrete, logistic regression otherwise.
fn propensity_spec_for(spec: &DgpSpec) -> PropensitySpec {
    if spec.covariates.is_finite() {
        PropensitySpec::Saturated
    } else {
        PropensitySpec::Logistic
    }
}

fn run_one(data: &Dataset, est: StudyEstimator, prop: Option<&Result<PropensityFit>>) -> Result<Vec<f64>> {
    let prop = || prop.expect("propensity fitted").as_ref().map_err(Clone::clone);
    match est {
        StudyEstimator::Additive => Ok(vec![additive_2sls(data)?.value]),
        StudyEstimator::InteractedAdditive => Ok(vec![interacted_additive_2sls(data)?.value]),
        StudyEstimator::Centered => Ok(vec![centered_interacted_2sls(data, prop()?)?.value]),
        StudyEstimator::Stratified(k) => Ok(vec![stratified_late(data, prop()?, k)?.tau_star]),
        StudyEstimator::InteractedBeta => Ok(interacted_2sls(data)?.beta.iter().copied().collect()),
        StudyEstimator::AbadieBeta => Ok(abadie_beta(data, prop()?)?.iter().copied().collect()),
    }
}

fn summarize(est: StudyEstimator, truth: &StudyTruth, estimates: Vec<Option<Vec<f64>>>) -> EstimatorSummary {
    let target: Vec<f64> = if est.is_vector() {
        truth.beta_c.clone()
    } else {
        vec![truth.tau_c]
    };
    let ok: Vec<&Vec<f64>> = estimates.iter().flatten().collect();
    let successes = ok.len();
    let dim = target.len();
    let mut mean = vec![f64::NAN; dim];
    let mut sd = vec![f64::NAN; dim];
    if successes > 0 {
        for j in 0..dim {
            let col: Vec<f64> = ok.iter().map(|v| v[j]).collect();
            mean[j] = col.iter().sum::<f64>() / successes as f64;
            sd[j] = sample_sd(&col);
        }
    }
    let bias = mean.iter().zip(&target).map(|(m, t)| m - t).collect();
    let mc_se = sd.iter().map(|s| s / (successes as f64).sqrt()).collect();
    EstimatorSummary {
        estimator: est.to_string(),
        truth: target,
        mean,
        bias,
        sd,
        mc_se,
        successes,
        failures: estimates.len() - successes,
        estimates,
    }
}

/// Runs every estimator on `reps` independent samples of size `n`.
///
/// Replicate `r` uses the random streams keyed by `(seed, r)`, so the
/// summary does not depend on thread count or scheduling. Estimator
/// errors are counted as failures; generation errors abort the study.
/// Stratified estimators refit the logistic propensity on each sample.
pub fn run_study(spec: &DgpSpec, estimators: &[StudyEstimator], reps: usize, n: usize, seed: u64) -> Result<McSummary> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators requested".into()));
    }
    let truth = resolve_truth(spec)?;
    if estimators.iter().any(|e| e.is_vector()) && truth.beta_c.len() != spec.covariates.dim() + 1 {
        return Err(Error::InvalidSpec("closed-form beta_c has the wrong length".into()));
    }
    let kappa_spec = propensity_spec_for(spec);
    let needs_kappa = estimators
        .iter()
        .any(|e| matches!(e, StudyEstimator::Centered | StudyEstimator::AbadieBeta));
    let needs_logistic = estimators.iter().any(|e| matches!(e, StudyEstimator::Stratified(_)));

    let per_rep: Vec<Vec<Option<Vec<f64>>>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<Vec<f64>>>> {
            let (data, _) = generate_replicate(spec, n, seed, r)?;
            let kappa_prop = needs_kappa.then(|| fit_propensity(&data, &kappa_spec));
            let logistic_prop = match &kappa_prop {
                Some(p) if needs_logistic && kappa_spec == PropensitySpec::Logistic => Some(p.clone()),
                _ => needs_logistic.then(|| fit_propensity(&data, &PropensitySpec::Logistic)),
            };
            Ok(estimators
                .iter()
                .map(|&est| {
                    let prop = match est {
                        StudyEstimator::Stratified(_) => logistic_prop.as_ref(),
                        _ => kappa_prop.as_ref(),
                    };
                    run_one(&data, est, prop).ok()
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(i, &est)| summarize(est, &truth, per_rep.iter().map(|row| row[i].clone()).collect()))
        .collect();
    Ok(McSummary {
        dgp: spec.name.clone(),
        reps,
        n,
        seed,
        truth,
        estimators: summaries,
    })
}

/// Regressogram accuracy for one number of strata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressogramStudy {
    pub k: usize,
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    /// Replicates that produced exactly `k` strata.
    pub successes: usize,
    /// Monte Carlo mean of each stratum estimate, by stratum rank.
    pub mean_estimate: Vec<f64>,
    /// Monte Carlo mean of the stratum-averaged true `τ_c(e)` target.
    pub mean_target: Vec<f64>,
    /// Mean over strata of `|mean_estimate − mean_target|`.
    pub mean_abs_bias: f64,
    /// Mean over replicates of the within-replicate mean absolute deviation.
    pub mean_abs_deviation: f64,
}

/// Stratified regressogram of `τ_c(e)` against the stratum average of
/// `target(e)` evaluated at the true propensity, over `reps` samples.
pub fn run_regressogram_study<F>(
    spec: &DgpSpec,
    k: usize,
    reps: usize,
    n: usize,
    seed: u64,
    target: F,
) -> Result<RegressogramStudy>
where
    F: Fn(f64) -> f64 + Sync,
{
    if reps == 0 || k == 0 {
        return Err(Error::InvalidArgument("reps and k must be at least 1".into()));
    }
    let per_rep: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| -> Result<Option<(Vec<f64>, Vec<f64>)>> {
            let (data, latent) = generate_replicate(spec, n, seed, r)?;
            let Ok(prop) = fit_propensity(&data, &PropensitySpec::Logistic) else {
                return Ok(None);
            };
            let Ok(res) = stratified_late(&data, &prop, k) else {
                return Ok(None);
            };
            if res.partition.k != k {
                return Ok(None);
            }
            let mut sums = vec![0.0; k];
            for (i, &label) in res.partition.labels.iter().enumerate() {
                sums[label - 1] += target(latent.e[i]);
            }
            let targets = sums
                .iter()
                .zip(&res.partition.counts)
                .map(|(s, &c)| s / c as f64)
                .collect();
            Ok(Some((res.beta_star.iter().copied().collect(), targets)))
        })
        .collect::<Result<_>>()?;

    let ok: Vec<&(Vec<f64>, Vec<f64>)> = per_rep.iter().flatten().collect();
    let successes = ok.len();
    if successes == 0 {
        return Err(Error::TooManyFailures {
            effective: 0,
            requested: reps,
        });
    }
    let m = successes as f64;
    let mut mean_estimate = vec![0.0; k];
    let mut mean_target = vec![0.0; k];
    let mut mad = 0.0;
    for (est, tgt) in &ok {
        for j in 0..k {
            mean_estimate[j] += est[j] / m;
            mean_target[j] += tgt[j] / m;
        }
        mad += est.iter().zip(tgt).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64 / m;
    }
    let mean_abs_bias = mean_estimate
        .iter()
        .zip(&mean_target)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / k as f64;
    Ok(RegressogramStudy {
        k,
        reps,
        n,
        seed,
        successes,
        mean_estimate,
        mean_target,
        mean_abs_bias,
        mean_abs_deviation: mad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_tags_round_trip() {
        for est in StudyEstimator::TABLE
            .iter()
            .copied()
            .chain([StudyEstimator::InteractedBeta, StudyEstimator::AbadieBeta])
        {
            assert_eq!(est.to_string().parse::<StudyEstimator>().unwrap(), est);
        }
        assert_eq!("××".parse::<StudyEstimator>().unwrap(), StudyEstimator::Centered);
        assert!("strat-0".parse::<StudyEstimator>().is_err());
        assert!("bogus".parse::<StudyEstimator>().is_err());
    }

    #[test]
    fn truth_sources() {
        let a = resolve_truth(&DgpSpec::dgp_a()).unwrap();
        assert_eq!(a.source, "oracle");
        assert!((a.tau_c - 1.0 / 9.0).abs() < 1e-12);
        let c = resolve_truth(&DgpSpec::dgp_c()).unwrap();
        assert_eq!(c.source, "closed-form");
        assert_eq!(c.beta_c, vec![-1.0 / 6.0, 1.0]);
    }

    #[test]
    fn single_replicate_is_reproducible() {
        let spec = DgpSpec::dgp_b();
        let run = || run_study(&spec, &StudyEstimator::TABLE, 1, 400, 11).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.to_replicate_csv(), b.to_replicate_csv());
        assert_eq!(a.estimators.len(), 6);
    }

    #[test]
    fn bias_is_mean_minus_truth() {
        let s = run_study(&DgpSpec::dgp_a(), &[StudyEstimator::Centered], 20, 500, 3).unwrap();
        let e = &s.estimators[0];
        let vals = e.values(0);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((e.bias[0] - (mean - 1.0 / 9.0)).abs() < 1e-12);
        assert_eq!(e.successes + e.failures, 20);
    }

    #[test]
    fn vector_estimators_report_every_coordinate() {
        let s = run_study(&DgpSpec::dgp_c(), &[StudyEstimator::InteractedBeta, StudyEstimator::AbadieBeta], 5, 500, 8).unwrap();
        for e in &s.estimators {
            assert_eq!(e.mean.len(), 2);
        }
        let csv = s.to_replicate_csv();
        assert_eq!(csv.lines().count(), 1 + 5 * 2 * 2);
    }

    #[test]
    fn regressogram_study_shapes() {
        let r = run_regressogram_study(&DgpSpec::dgp_c(), 4, 5, 600, 2, |e| e * e).unwrap();
        assert_eq!(r.mean_estimate.len(), 4);
        assert!(r.mean_target.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_reps_rejected() {
        assert!(run_study(&DgpSpec::dgp_a(), &[StudyEstimator::Additive], 0, 100, 1).is_err());
    }
}
