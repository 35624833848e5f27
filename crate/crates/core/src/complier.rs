//! Instrument propensity scores, kappa weights and complier moments.
//!
//! With `ê = P̂(Z = 1 | X)` the weights are
//!
//! ```text
//! κ  = 1 − D(1 − Z)/(1 − ê) − (1 − D)Z/ê
//! Δκ = (Z − ê) / (ê(1 − ê))
//! ```
//!
//! `κ` averages to the complier share and reweights any function of `X`
//! to its complier mean; `Δκ` recovers complier contrasts of the outcome.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{interacted_2sls, EstimatorLabel, ScalarEstimate};
use crate::linalg::{least_squares, scale_rows, solve_square};

/// Estimated propensities are clipped to `[CLIP, 1 − CLIP]`.
pub const CLIP: f64 = 1e-6;
/// Below this estimated complier share the LATE is treated as unidentified.
pub const COMPLIER_FLOOR: f64 = 0.01;

const IRLS_MAX_ITER: usize = 100;
const IRLS_TOL: f64 = 1e-8;

/// How to estimate `P(Z = 1 | X)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensitySpec {
    /// Logistic regression of `Z` on the covariate block, fitted by IRLS.
    Logistic,
    /// Cell means of `Z` within each distinct covariate row.
    Saturated,
    /// Cell means of `Z` within each of the given cell labels.
    SaturatedOn(Vec<usize>),
    /// Externally supplied scores.
    Supplied(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropensityModel {
    Logistic,
    Saturated,
    Supplied,
}

#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub ehat: DVector<f64>,
    pub model: PropensityModel,
    /// Logistic coefficients on the covariate block (empty otherwise).
    pub coefficients: DVector<f64>,
    /// False when IRLS hit its iteration cap; the last iterate is kept.
    pub converged: bool,
    pub iterations: usize,
    /// Number of scores moved by clipping.
    pub clipped: usize,
}

impl PropensityFit {
    /// Human-readable notes about clipping or non-convergence.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.clipped > 0 {
            w.push(format!(
                "{} propensity scores clipped to [{CLIP:e}, 1-{CLIP:e}]",
                self.clipped
            ));
        }
        if !self.converged {
            w.push(format!(
                "logistic propensity did not converge in {} iterations",
                self.iterations
            ));
        }
        w
    }
}

fn clip(ehat: &mut DVector<f64>) -> usize {
    let mut n = 0;
    for e in ehat.iter_mut() {
        let c = e.clamp(CLIP, 1.0 - CLIP);
        if c != *e {
            n += 1;
            *e = c;
        }
    }
    n
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn bernoulli_deviance(z: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    -2.0 * z
        .iter()
        .zip(mu.iter())
        .map(|(&zi, &m)| {
            let m = m.clamp(1e-300, 1.0 - 1e-16);
            if zi == 1.0 {
                m.ln()
            } else {
                (1.0 - m).ln()
            }
        })
        .sum::<f64>()
}

/// Maximum-likelihood logistic regression of a 0/1 response by iteratively
/// reweighted least squares.
pub fn fit_logistic(response: &DVector<f64>, design: &DMatrix<f64>) -> Result<(DVector<f64>, bool, usize)> {
    let (n, q) = design.shape();
    let mut beta = DVector::zeros(q);
    let mut mu = DVector::from_element(n, 0.5);
    let mut dev = bernoulli_deviance(response, &mu);
    for iter in 1..=IRLS_MAX_ITER {
        let eta = design * &beta;
        let mut sw = DVector::zeros(n);
        let mut work = DVector::zeros(n);
        for i in 0..n {
            let m = mu[i].clamp(1e-10, 1.0 - 1e-10);
            let w = m * (1.0 - m);
            sw[i] = w.sqrt();
            work[i] = sw[i] * (eta[i] + (response[i] - m) / w);
        }
        let wx = scale_rows(design, &sw);
        let fit = least_squares(&DMatrix::from_column_slice(n, 1, work.as_slice()), &wx)?;
        beta = fit.coef.column(0).into_owned();
        mu = (design * &beta).map(sigmoid);
        let new_dev = bernoulli_deviance(response, &mu);
        let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        if change < IRLS_TOL {
            return Ok((beta, true, iter));
        }
    }
    Ok((beta, false, IRLS_MAX_ITER))
}

fn saturated_on(z: &DVector<f64>, cells: &[usize]) -> Result<DVector<f64>> {
    let mut sums: HashMap<usize, (f64, usize)> = HashMap::new();
    for (i, &c) in cells.iter().enumerate() {
        let e = sums.entry(c).or_insert((0.0, 0));
        e.0 += z[i];
        e.1 += 1;
    }
    let mut means = HashMap::with_capacity(sums.len());
    for (&c, &(s, m)) in &sums {
        if s == 0.0 || s == m as f64 {
            return Err(Error::NoOverlapCell { cell: c });
        }
        means.insert(c, s / m as f64);
    }
    Ok(DVector::from_iterator(cells.len(), cells.iter().map(|c| means[c])))
}

/// Labels each row by its distinct covariate pattern, in order of first
/// appearance.
pub fn covariate_cells(x: &DMatrix<f64>) -> Vec<usize> {
    let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
    (0..x.nrows())
        .map(|i| {
            let key: Vec<u64> = x.row(i).iter().map(|v| v.to_bits()).collect();
            let next = ids.len();
            *ids.entry(key).or_insert(next)
        })
        .collect()
}

pub fn fit_propensity(data: &Dataset, spec: &PropensitySpec) -> Result<PropensityFit> {
    let n = data.n();
    let (mut ehat, model, coefficients, converged, iterations) = match spec {
        PropensitySpec::Logistic => {
            let (beta, converged, iters) = fit_logistic(data.z(), data.x())?;
            let e = (data.x() * &beta).map(sigmoid);
            (e, PropensityModel::Logistic, beta, converged, iters)
        }
        PropensitySpec::Saturated => {
            let cells = covariate_cells(data.x());
            let e = saturated_on(data.z(), &cells)?;
            (e, PropensityModel::Saturated, DVector::zeros(0), true, 0)
        }
        PropensitySpec::SaturatedOn(cells) => {
            if cells.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} cell labels for {n} rows",
                    cells.len()
                )));
            }
            let e = saturated_on(data.z(), cells)?;
            (e, PropensityModel::Saturated, DVector::zeros(0), true, 0)
        }
        PropensitySpec::Supplied(v) => {
            if v.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} supplied scores for {n} rows",
                    v.len()
                )));
            }
            if v.iter().any(|e| !e.is_finite() || *e < 0.0 || *e > 1.0) {
                return Err(Error::InvalidArgument(
                    "supplied propensity scores must lie in [0, 1]".into(),
                ));
            }
            (
                DVector::from_column_slice(v),
                PropensityModel::Supplied,
                DVector::zeros(0),
                true,
                0,
            )
        }
    };
    let clipped = clip(&mut ehat);
    Ok(PropensityFit {
        ehat,
        model,
        coefficients,
        converged,
        iterations,
        clipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaWeights {
    pub kappa: DVector<f64>,
    pub dkappa: DVector<f64>,
}

pub fn kappa_weights(data: &Dataset, prop: &PropensityFit) -> Result<KappaWeights> {
    let n = data.n();
    if prop.ehat.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} propensity scores for {n} rows",
            prop.ehat.len()
        )));
    }
    if prop.ehat.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidArgument("propensity scores must lie in (0, 1)".into()));
    }
    let mut kappa = DVector::zeros(n);
    let mut dkappa = DVector::zeros(n);
    for i in 0..n {
        let (d, z, e) = (data.d()[i], data.z()[i], prop.ehat[i]);
        kappa[i] = 1.0 - d * (1.0 - z) / (1.0 - e) - (1.0 - d) * z / e;
        dkappa[i] = (z - e) / (e * (1.0 - e));
    }
    Ok(KappaWeights { kappa, dkappa })
}

/// Kappa-weighted complier means of selected covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplierMeans {
    pub mu: Vec<f64>,
    /// Estimated complier share, `mean(κ)`.
    pub pc_hat: f64,
}

pub fn complier_mean(data: &Dataset, prop: &PropensityFit, cols: &[usize]) -> Result<ComplierMeans> {
    let w = kappa_weights(data, prop)?;
    let total: f64 = w.kappa.sum();
    let pc_hat = total / data.n() as f64;
    if pc_hat.is_nan() || pc_hat < COMPLIER_FLOOR {
        return Err(Error::NoCompliers {
            pc_hat,
            floor: COMPLIER_FLOOR,
        });
    }
    let mut mu = Vec::with_capacity(cols.len());
    for &c in cols {
        if c >= data.k() {
            return Err(Error::InvalidArgument(format!("column {c} out of range")));
        }
        let col = data.x().column(c);
        let s: f64 = w.kappa.iter().zip(col.iter()).map(|(k, x)| k * x).sum();
        mu.push(s / total);
    }
    Ok(ComplierMeans { mu, pc_hat })
}

/// Covariates recentered at their estimated complier means, constant kept.
pub fn centered_covariates(data: &Dataset, prop: &PropensityFit) -> Result<DMatrix<f64>> {
    if !data.has_constant() {
        return Err(Error::InvalidArgument(
            "centering requires a constant as the first covariate".into(),
        ));
    }
    let cols: Vec<usize> = (1..data.k()).collect();
    let means = complier_mean(data, prop, &cols)?;
    let mut x0 = data.x().clone();
    for (j, m) in cols.iter().zip(&means.mu) {
        x0.column_mut(*j).add_scalar_mut(-m);
    }
    Ok(x0)
}

/// `τ̂××`: first coefficient of the interacted 2SLS on complier-centered
/// covariates.
pub fn centered_interacted_2sls(data: &Dataset, prop: &PropensityFit) -> Result<ScalarEstimate> {
    let x0 = centered_covariates(data, prop)?;
    let fit = interacted_2sls(&data.with_covariates(x0, true)?)?;
    Ok(ScalarEstimate {
        value: fit.beta[0],
        label: EstimatorLabel::Centered,
    })
}

/// Weighting estimator of the complier projection coefficients:
/// `(Σ κ X Xᵀ)⁻¹ Σ Δκ X Y`.
pub fn abadie_beta(data: &Dataset, prop: &PropensityFit) -> Result<DVector<f64>> {
    let w = kappa_weights(data, prop)?;
    let pc_hat = w.kappa.mean();
    if pc_hat.is_nan() || pc_hat < COMPLIER_FLOOR {
        return Err(Error::NoCompliers {
            pc_hat,
            floor: COMPLIER_FLOOR,
        });
    }
    let x = data.x();
    let gram = x.transpose() * scale_rows(x, &w.kappa);
    let moment = x.transpose() * w.dkappa.component_mul(data.y());
    let k = data.k();
    let beta = solve_square(&gram, &DMatrix::from_column_slice(k, 1, moment.as_slice()))?;
    Ok(beta.column(0).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dataset(y: &[f64], d: &[f64], z: &[f64], x1: &[f64]) -> Dataset {
        Dataset::with_intercept(
            DVector::from_column_slice(y),
            DVector::from_column_slice(d),
            DVector::from_column_slice(z),
            &DMatrix::from_column_slice(x1.len(), 1, x1),
        )
        .unwrap()
    }

    fn supplied(e: &[f64]) -> PropensityFit {
        PropensityFit {
            ehat: DVector::from_column_slice(e),
            model: PropensityModel::Supplied,
            coefficients: DVector::zeros(0),
            converged: true,
            iterations: 0,
            clipped: 0,
        }
    }

    fn log_lik(a: f64, b: f64, x: &[f64], z: &[f64]) -> f64 {
        x.iter()
            .zip(z)
            .map(|(&xi, &zi)| {
                let p = 1.0 / (1.0 + (-(a + b * xi)).exp());
                if zi == 1.0 {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            })
            .sum()
    }

    #[test]
    fn logistic_matches_grid_search_maximizer() {
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
        let z = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        // coarse grid, then a fine grid around the coarse optimum
        let mut best = (0.0, 0.0, f64::NEG_INFINITY);
        for i in 0..=600 {
            for j in 0..=600 {
                let (a, b) = (-3.0 + 0.01 * i as f64, -3.0 + 0.01 * j as f64);
                let l = log_lik(a, b, &x, &z);
                if l > best.2 {
                    best = (a, b, l);
                }
            }
        }
        let (a0, b0) = (best.0, best.1);
        for i in 0..=400 {
            for j in 0..=400 {
                let (a, b) = (a0 - 0.01 + 5e-5 * i as f64, b0 - 0.01 + 5e-5 * j as f64);
                let l = log_lik(a, b, &x, &z);
                if l > best.2 {
                    best = (a, b, l);
                }
            }
        }
        let design = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let (beta, converged, _) = fit_logistic(&DVector::from_column_slice(&z), &design).unwrap();
        assert!(converged);
        assert!((beta[0] - best.0).abs() < 1e-3, "{} vs {}", beta[0], best.0);
        assert!((beta[1] - best.1).abs() < 1e-3, "{} vs {}", beta[1], best.1);
    }

    #[test]
    fn logistic_on_independent_instrument_has_flat_slope() {
        // z balanced within each x value, so the MLE slope is exactly zero
        let x1 = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let z = [0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let ds = dataset(&[0.0; 8], &z, &z, &x1);
        let fit = fit_propensity(&ds, &PropensitySpec::Logistic).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[1].abs() < 1e-10);
        assert!(fit.coefficients[0].abs() < 1e-10);
        assert_relative_eq!(fit.ehat[3], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn separated_logistic_is_flagged_not_fatal() {
        let x1 = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let z = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let ds = dataset(&[0.0; 6], &z, &z, &x1);
        let fit = fit_propensity(&ds, &PropensitySpec::Logistic).unwrap();
        assert!(fit.ehat.iter().all(|&e| (CLIP..=1.0 - CLIP).contains(&e)));
        assert!(!fit.warnings().is_empty());
    }

    #[test]
    fn saturated_reproduces_cell_means() {
        let x1 = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0];
        let z = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
        let ds = dataset(&[0.0; 8], &z, &z, &x1);
        let fit = fit_propensity(&ds, &PropensitySpec::Saturated).unwrap();
        assert_relative_eq!(fit.ehat[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(fit.ehat[3], 0.75, epsilon = 1e-15);
        for cell in [0.0, 1.0] {
            let s: f64 = (0..8).filter(|&i| x1[i] == cell).map(|i| z[i] - fit.ehat[i]).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_single_arm_cell_fails() {
        let x1 = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let z = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let ds = dataset(&[0.0; 6], &z, &z, &x1);
        assert!(matches!(
            fit_propensity(&ds, &PropensitySpec::Saturated),
            Err(Error::NoOverlapCell { .. })
        ));
    }

    #[test]
    fn kappa_single_unit_formulas() {
        let ds = dataset(
            &[0.0; 6],
            &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
            &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0],
            &[0.0; 6],
        );
        let w = kappa_weights(&ds, &supplied(&[0.5, 0.8, 0.5, 0.5, 0.5, 0.5])).unwrap();
        // z=1, d=0, e=0.5: 1 - 0 - 1/0.5
        assert_relative_eq!(w.kappa[0], -1.0, epsilon = 1e-15);
        // z=1, d=1, e=0.8: (1-0.8)/(0.8*0.2)
        assert_relative_eq!(w.dkappa[1], 1.25, epsilon = 1e-14);
    }

    #[test]
    fn perfect_compliance_means_every_unit_complies() {
        let z = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let x1 = [0.3, 1.0, 2.0, -1.0, 0.5, 0.7, 1.5, 0.0];
        let ds = dataset(&z, &z, &z, &x1);
        let prop = fit_propensity(&ds, &PropensitySpec::Logistic).unwrap();
        let w = kappa_weights(&ds, &prop).unwrap();
        assert!(w.kappa.iter().all(|&k| k == 1.0));
        let m = complier_mean(&ds, &prop, &[0, 1]).unwrap();
        assert_relative_eq!(m.pc_hat, 1.0);
        assert_relative_eq!(m.mu[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(m.mu[1], x1.iter().sum::<f64>() / 8.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_effect_perfect_compliance_centered_is_exact() {
        let z = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let x1 = [0.3, 1.0, 2.0, -1.0, 0.5, 0.7, 1.5, 0.0, -0.4, 0.9];
        let y: Vec<f64> = (0..10).map(|i| 2.5 * z[i] + x1[i]).collect();
        let ds = dataset(&y, &z, &z, &x1);
        let prop = fit_propensity(&ds, &PropensitySpec::Logistic).unwrap();
        let est = centered_interacted_2sls(&ds, &prop).unwrap();
        assert_relative_eq!(est.value, 2.5, epsilon = 1e-10);
    }

    #[test]
    fn no_compliers_is_detected() {
        // d independent of z within the sample: kappa averages to zero
        let z = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let d = [1.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let ds = dataset(&[0.0; 6], &d, &z, &[0.0; 6]);
        let prop = supplied(&[0.5; 6]);
        assert!(matches!(
            complier_mean(&ds, &prop, &[0]),
            Err(Error::NoCompliers { .. })
        ));
    }

    #[test]
    fn abadie_beta_of_zero_outcome_is_zero() {
        let z = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let x1 = [0.3, 1.0, 2.0, -1.0, 0.5, 0.7, 1.5, 0.0];
        let ds = dataset(&[0.0; 8], &z, &z, &x1);
        let prop = fit_propensity(&ds, &PropensitySpec::Logistic).unwrap();
        let b = abadie_beta(&ds, &prop).unwrap();
        assert!(b.amax() < 1e-14);
    }
}
