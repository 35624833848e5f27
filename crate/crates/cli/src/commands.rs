//! The three subcommands, each producing a [`Report`].

use ivlate::complier::{abadie_beta, centered_interacted_2sls, fit_propensity, PropensitySpec};
use ivlate::estimators::{additive_2sls, interacted_2sls, interacted_additive_2sls};
use ivlate::inference::bootstrap;
use ivlate::montecarlo::{run_study, StudyEstimator};
use ivlate::stratify::{stratified_late, stratified_late_refit};
use ivlate::Dataset;

use crate::config::{PropensityChoice, RunConfig};
use crate::ingest::ingest_csv;
use crate::report::{Failure, Report, ResultRow, StratumRow};
use crate::{CliError, CliResult};

fn propensity_spec(cfg: &RunConfig) -> PropensitySpec {
    match cfg.propensity.unwrap_or(PropensityChoice::Logistic) {
        PropensityChoice::Logistic => PropensitySpec::Logistic,
        PropensityChoice::Saturated => PropensitySpec::Saturated,
    }
}

fn load(cfg: &RunConfig) -> CliResult<(Dataset, crate::ingest::DataSummary)> {
    let path = cfg.input.as_ref().ok_or_else(|| CliError::Config("an input CSV is required".into()))?;
    ingest_csv(path, cfg.no_constant)
}

/// Full estimation pipeline, propensity fit included, for one estimator.
fn pipeline(est: StudyEstimator, spec: &PropensitySpec, data: &Dataset) -> ivlate::Result<Vec<f64>> {
    Ok(match est {
        StudyEstimator::Additive => vec![additive_2sls(data)?.value],
        StudyEstimator::InteractedAdditive => vec![interacted_additive_2sls(data)?.value],
        StudyEstimator::Centered => vec![centered_interacted_2sls(data, &fit_propensity(data, spec)?)?.value],
        StudyEstimator::Stratified(k) => vec![stratified_late_refit(data, spec, k)?.tau_star],
        StudyEstimator::InteractedBeta => interacted_2sls(data)?.beta.iter().copied().collect(),
        StudyEstimator::AbadieBeta => abadie_beta(data, &fit_propensity(data, spec)?)?.iter().copied().collect(),
    })
}

fn coordinate_name(est: StudyEstimator, j: usize, dim: usize) -> String {
    if est.is_vector() || dim > 1 {
        format!("{est}[{j}]")
    } else {
        est.to_string()
    }
}

fn base_report(cfg: &RunConfig) -> Report {
    Report {
        command: cfg.command,
        config: cfg.clone(),
        data: None,
        truth: None,
        results: Vec::new(),
        strata: None,
        warnings: Vec::new(),
        failures: Vec::new(),
        replicate_csv: None,
    }
}

/// Point estimates with bootstrap standard deviations and percentile
/// intervals. Estimators that fail are listed under `failures`.
pub fn cmd_estimate(cfg: &RunConfig) -> CliResult<Report> {
    cfg.validate()?;
    let (data, summary) = load(cfg)?;
    let spec = propensity_spec(cfg);
    let estimators = cfg.parsed_estimators()?;
    let (b, alpha) = (cfg.b.unwrap_or(0), cfg.alpha.unwrap_or(f64::NAN));
    let mut report = base_report(cfg);
    report.data = Some(summary);

    if estimators
        .iter()
        .any(|e| matches!(e, StudyEstimator::Centered | StudyEstimator::AbadieBeta | StudyEstimator::Stratified(_)))
    {
        if let Ok(p) = fit_propensity(&data, &spec) {
            report.warnings.extend(p.warnings());
        }
    }
    for est in estimators {
        match bootstrap(&data, |d| pipeline(est, &spec, d), b, alpha, cfg.seed) {
            Ok(res) => {
                let dim = res.point.len();
                for j in 0..dim {
                    let mut row = ResultRow::new(coordinate_name(est, j, dim), res.point[j], res.se[j]);
                    row.ci = Some([res.ci_lower[j], res.ci_upper[j]]);
                    row.b_effective = Some(res.b_effective);
                    report.results.push(row);
                }
                if res.b_effective < b {
                    report.warnings.push(format!(
                        "{est}: {} of {b} bootstrap replicates dropped",
                        b - res.b_effective
                    ));
                }
            }
            Err(e) => report.failures.push(Failure {
                estimator: est.to_string(),
                error: e.to_string(),
            }),
        }
    }
    Ok(report)
}

/// Monte Carlo bias and spread of each estimator on a simulation design.
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Report> {
    cfg.validate()?;
    let spec = cfg.resolve_dgp()?;
    let estimators = cfg.parsed_estimators()?;
    let summary = run_study(&spec, &estimators, cfg.reps.unwrap_or(0), cfg.n.unwrap_or(0), cfg.seed)?;

    let mut report = base_report(cfg);
    for (est, s) in estimators.iter().zip(&summary.estimators) {
        let dim = s.mean.len();
        for j in 0..dim {
            let mut row = ResultRow::new(coordinate_name(*est, j, dim), s.mean[j], s.sd[j]);
            row.truth = Some(s.truth[j]);
            row.bias = Some(s.bias[j]);
            row.mc_se = Some(s.mc_se[j]);
            row.successes = Some(s.successes);
            row.failures = Some(s.failures);
            report.results.push(row);
        }
        if s.failures > 0 {
            report
                .warnings
                .push(format!("{est}: {} of {} replicates failed", s.failures, summary.reps));
        }
        if s.successes == 0 {
            report.failures.push(Failure {
                estimator: est.to_string(),
                error: "every replicate failed".into(),
            });
        }
    }
    report.replicate_csv = Some(summary.to_replicate_csv());
    report.truth = Some(summary.truth);
    Ok(report)
}

/// Propensity-score strata with per-stratum effects and bootstrap bands.
pub fn cmd_stratify(cfg: &RunConfig) -> CliResult<Report> {
    cfg.validate()?;
    let (data, summary) = load(cfg)?;
    let spec = propensity_spec(cfg);
    let k = cfg.k.unwrap_or(0);
    let (b, alpha) = (cfg.b.unwrap_or(0), cfg.alpha.unwrap_or(f64::NAN));

    let prop = fit_propensity(&data, &spec)?;
    let requested = stratified_late(&data, &prop, k)?;

    let mut report = base_report(cfg);
    report.data = Some(summary);
    report.warnings.extend(prop.warnings());
    if requested.partition.was_merged() {
        report.warnings.push(format!(
            "requested {k} strata, merged to {}",
            requested.partition.k
        ));
    }

    // Resamples use the delivered stratum count so their shapes line up;
    // the reported partition is the one that count yields on the sample.
    let delivered = requested.partition.k;
    let fit = if delivered == k {
        requested
    } else {
        stratified_late(&data, &prop, delivered)?
    };
    let partition = &fit.partition;
    let res = bootstrap(
        &data,
        |d| {
            let r = stratified_late_refit(d, &spec, delivered)?;
            Ok(std::iter::once(r.tau_star).chain(r.beta_star.iter().copied()).collect())
        },
        b,
        alpha,
        cfg.seed,
    )?;
    if res.shape_mismatches > 0 {
        report.warnings.push(format!(
            "{} bootstrap replicates produced a different number of strata and were dropped",
            res.shape_mismatches
        ));
    }

    let mut strata: Vec<StratumRow> = (1..=partition.k)
        .map(|j| {
            let (lo, hi) = partition.interval(j);
            StratumRow {
                label: j.to_string(),
                interval_low: lo,
                interval_high: hi,
                estimate: fit.beta_star[j - 1],
                ci_low: res.ci_lower[j],
                ci_high: res.ci_upper[j],
                count: partition.counts[j - 1],
            }
        })
        .collect();
    strata.push(StratumRow {
        label: "late".into(),
        interval_low: 0.0,
        interval_high: 1.0,
        estimate: fit.tau_star,
        ci_low: res.ci_lower[0],
        ci_high: res.ci_upper[0],
        count: data.n(),
    });
    let mut row = ResultRow::new(format!("strat-{}", partition.k), fit.tau_star, res.se[0]);
    row.ci = Some([res.ci_lower[0], res.ci_upper[0]]);
    row.b_effective = Some(res.b_effective);
    report.results.push(row);
    report.strata = Some(strata);
    Ok(report)
}
