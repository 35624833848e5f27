//! The two-stage least squares family.
//!
//! | estimator | first stage | second stage |
//! |---|---|---|
//! | [`additive_2sls`] (`++`) | `lm(D ~ Z + X)` | `lm(Y ~ D̂ + X)` |
//! | [`interacted_additive_2sls`] (`×+`) | `lm(D ~ ZX + X)` | `lm(Y ~ D̂ + X)` |
//! | [`interacted_2sls`] | `lm(DX ~ ZX + X)` | `lm(Y ~ DX̂ + X)` |
//! | [`partially_interacted_2sls`] | `lm(DV ~ ZV + X)` | `lm(Y ~ DV̂ + X)` |
//! | [`generalized_additive_2sls`] (`*+`) | `lm(D ~ R)` | `lm(Y ~ D̂ + X)` |
//!
//! Second stages always regress on the stored first-stage fitted values.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, hstack, least_squares, scale_rows};

/// Which member of the family produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorLabel {
    /// Additive first and second stage.
    Additive,
    /// Interacted first stage, additive second stage.
    InteractedAdditive,
    /// Interacted 2SLS on covariates centered at complier means.
    Centered,
    /// Arbitrary first stage, additive second stage.
    GeneralizedAdditive,
    Ols,
    Wald,
}

impl EstimatorLabel {
    pub fn tag(self) -> &'static str {
        match self {
            EstimatorLabel::Additive => "++",
            EstimatorLabel::InteractedAdditive => "x+",
            EstimatorLabel::Centered => "xx",
            EstimatorLabel::GeneralizedAdditive => "*+",
            EstimatorLabel::Ols => "ols",
            EstimatorLabel::Wald => "wald",
        }
    }
}

impl fmt::Display for EstimatorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarEstimate {
    pub value: f64,
    pub label: EstimatorLabel,
}

/// Output of the interacted 2SLS (and of interacted OLS).
#[derive(Debug, Clone)]
pub struct TwoSlsFit {
    /// Coefficients of the fitted interaction block.
    pub beta: DVector<f64>,
    /// Coefficients of the covariates in the second stage.
    pub gamma: DVector<f64>,
    /// First-stage coefficient matrix on `ZX`: `DX̂ = C1·ZX + C0·X` row-wise.
    pub c1: DMatrix<f64>,
    pub c0: DMatrix<f64>,
    /// Fitted interaction block residualized on `X`.
    pub fwl_design: DMatrix<f64>,
    /// First-stage fitted values `DX̂`.
    pub first_stage_fitted: DMatrix<f64>,
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn require_constant(data: &Dataset, what: &str) -> Result<()> {
    if data.has_constant() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} requires a constant as the first covariate"
        )))
    }
}

struct TwoStage {
    first_coef: DMatrix<f64>,
    fitted: DMatrix<f64>,
    second_coef: DVector<f64>,
}

/// `lm(endog ~ first_regressors)` then `lm(Y ~ fitted + X)`.
fn two_stage(data: &Dataset, endog: &DMatrix<f64>, first_regressors: &DMatrix<f64>) -> Result<TwoStage> {
    let first = least_squares(endog, first_regressors)?;
    let second_design = hstack(&[&first.fitted, data.x()]);
    let second = least_squares(&column(data.y()), &second_design)?;
    Ok(TwoStage {
        first_coef: first.coef,
        fitted: first.fitted,
        second_coef: second.coef.column(0).into_owned(),
    })
}

/// Additive 2SLS `τ̂₊₊`.
pub fn additive_2sls(data: &Dataset) -> Result<ScalarEstimate> {
    require_constant(data, "additive 2SLS")?;
    let first = hstack(&[&column(data.z()), data.x()]);
    let fit = two_stage(data, &column(data.d()), &first)?;
    Ok(ScalarEstimate {
        value: fit.second_coef[0],
        label: EstimatorLabel::Additive,
    })
}

/// Interacted-additive 2SLS `τ̂×₊`.
pub fn interacted_additive_2sls(data: &Dataset) -> Result<ScalarEstimate> {
    require_constant(data, "interacted-additive 2SLS")?;
    let zx = scale_rows(data.x(), data.z());
    let first = hstack(&[&zx, data.x()]);
    let fit = two_stage(data, &column(data.d()), &first)?;
    Ok(ScalarEstimate {
        value: fit.second_coef[0],
        label: EstimatorLabel::InteractedAdditive,
    })
}

/// Interacted 2SLS: `DX` instrumented by `ZX`, component-wise.
pub fn interacted_2sls(data: &Dataset) -> Result<TwoSlsFit> {
    let k = data.k();
    let x = data.x();
    let zx = scale_rows(x, data.z());
    let dx = scale_rows(x, data.d());
    let first = hstack(&[&zx, x]);
    let fit = two_stage(data, &dx, &first)?;
    let fwl_design = linalg::residualize(&fit.fitted, x)?;
    Ok(TwoSlsFit {
        beta: fit.second_coef.rows(0, k).into_owned(),
        gamma: fit.second_coef.rows(k, k).into_owned(),
        c1: fit.first_coef.rows(0, k).transpose(),
        c0: fit.first_coef.rows(k, k).transpose(),
        fwl_design,
        first_stage_fitted: fit.fitted,
    })
}

/// Partially interacted 2SLS: interactions with the covariate subset
/// `v_cols` only, all of `X` as controls. Returns the coefficients of the
/// fitted `DV` block.
pub fn partially_interacted_2sls(data: &Dataset, v_cols: &[usize]) -> Result<DVector<f64>> {
    if v_cols.is_empty() {
        return Err(Error::InvalidArgument("interaction subset is empty".into()));
    }
    if let Some(&c) = v_cols.iter().find(|&&c| c >= data.k()) {
        return Err(Error::InvalidArgument(format!(
            "column {c} out of range for {} covariates",
            data.k()
        )));
    }
    let v = linalg::select_columns(data.x(), v_cols);
    let zv = scale_rows(&v, data.z());
    let dv = scale_rows(&v, data.d());
    let first = hstack(&[&zv, data.x()]);
    let fit = two_stage(data, &dv, &first)?;
    Ok(fit.second_coef.rows(0, v_cols.len()).into_owned())
}

/// Generalized additive 2SLS `τ̂*₊` with first-stage regressors
/// `R = builder(z, x_row)`.
pub fn generalized_additive_2sls<F>(data: &Dataset, builder: F) -> Result<ScalarEstimate>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let n = data.n();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut xrow = vec![0.0; data.k()];
    for i in 0..n {
        for (j, v) in xrow.iter_mut().enumerate() {
            *v = data.x()[(i, j)];
        }
        rows.push(builder(data.z()[i], &xrow));
    }
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidArgument(
            "first-stage builder must return rows of one fixed, nonzero width".into(),
        ));
    }
    let r = DMatrix::from_fn(n, width, |i, j| rows[i][j]);
    let fit = two_stage(data, &column(data.d()), &r)?;
    Ok(ScalarEstimate {
        value: fit.second_coef[0],
        label: EstimatorLabel::GeneralizedAdditive,
    })
}

/// Interacted OLS: the interacted 2SLS with the instrument replaced by the
/// treatment itself.
pub fn interacted_ols(data: &Dataset) -> Result<TwoSlsFit> {
    let treated = data.d().iter().filter(|&&v| v == 1.0).count();
    if treated == 0 || treated == data.n() {
        // D constant makes D·X collinear with X
        return Err(Error::RankDeficient {
            rank: data.k(),
            cols: 2 * data.k(),
        });
    }
    interacted_2sls(&data.with_instrument_as_treatment()?)
}

/// Wald ratio `(Ȳ₁ − Ȳ₀)/(D̄₁ − D̄₀)` across instrument arms of the rows in
/// `rows`. `stratum` only labels errors.
fn wald_on(data: &Dataset, rows: &[usize], stratum: usize) -> Result<f64> {
    let (mut n1, mut n0) = (0usize, 0usize);
    let (mut y1, mut y0, mut d1, mut d0) = (0.0, 0.0, 0.0, 0.0);
    for &i in rows {
        if data.z()[i] == 1.0 {
            n1 += 1;
            y1 += data.y()[i];
            d1 += data.d()[i];
        } else {
            n0 += 1;
            y0 += data.y()[i];
            d0 += data.d()[i];
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::DegenerateStratum {
            stratum,
            reason: "only one instrument arm present".into(),
        });
    }
    let (n1, n0) = (n1 as f64, n0 as f64);
    let first_stage = d1 / n1 - d0 / n0;
    if first_stage.abs() < 1e-12 {
        return Err(Error::DegenerateStratum {
            stratum,
            reason: "no first-stage difference in treatment means".into(),
        });
    }
    Ok((y1 / n1 - y0 / n0) / first_stage)
}

/// Unconditional Wald estimator.
pub fn wald(data: &Dataset) -> Result<ScalarEstimate> {
    let rows: Vec<usize> = (0..data.n()).collect();
    Ok(ScalarEstimate {
        value: wald_on(data, &rows, 0)?,
        label: EstimatorLabel::Wald,
    })
}

/// Per-stratum Wald estimators, one per distinct label in ascending order.
pub fn stratum_wald(data: &Dataset, labels: &[usize]) -> Result<Vec<ScalarEstimate>> {
    if labels.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} stratum labels for {} rows",
            labels.len(),
            data.n()
        )));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
        .iter()
        .map(|(&label, rows)| {
            Ok(ScalarEstimate {
                value: wald_on(data, rows, label)?,
                label: EstimatorLabel::Wald,
            })
        })
        .collect()
}

/// Dummy coding of category labels: one column per distinct label in
/// ascending order, no constant. Returns the matrix and the level order.
pub fn dummy_coding(labels: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
    let mut levels: Vec<usize> = labels.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let m = DMatrix::from_fn(labels.len(), levels.len(), |i, j| {
        if labels[i] == levels[j] {
            1.0
        } else {
            0.0
        }
    });
    (m, levels)
}

/// Constant plus dummies for every level except the first.
pub fn dummy_coding_with_constant(labels: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
    let (mut m, levels) = dummy_coding(labels);
    m.column_mut(0).fill(1.0);
    (m, levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Eight rows, constant plus one covariate.
    fn toy() -> Dataset {
        let y = [1.0, 2.5, 0.3, 4.0, 2.2, 3.1, 0.7, 5.0];
        let d = [0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
        let z = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let x1 = [0.5, 1.0, -0.3, 2.0, 1.5, 0.2, -1.0, 0.9];
        Dataset::with_intercept(
            DVector::from_column_slice(&y),
            DVector::from_column_slice(&d),
            DVector::from_column_slice(&z),
            &DMatrix::from_column_slice(8, 1, &x1),
        )
        .unwrap()
    }

    /// Two-stage normal equations solved with an explicit inverse.
    fn normal_equations_2sls(y: &DVector<f64>, endog: &DMatrix<f64>, first: &DMatrix<f64>, x: &DMatrix<f64>) -> DVector<f64> {
        let b1 = (first.transpose() * first).try_inverse().unwrap() * first.transpose() * endog;
        let fitted = first * b1;
        let s = hstack(&[&fitted, x]);
        (s.transpose() * &s).try_inverse().unwrap() * s.transpose() * y
    }

    #[test]
    fn additive_matches_normal_equations() {
        let ds = toy();
        let first = hstack(&[&column(ds.z()), ds.x()]);
        let oracle = normal_equations_2sls(ds.y(), &column(ds.d()), &first, ds.x());
        let est = additive_2sls(&ds).unwrap();
        assert_relative_eq!(est.value, oracle[0], epsilon = 1e-10);
        assert_eq!(est.label, EstimatorLabel::Additive);
    }

    #[test]
    fn perfect_compliance_unit_effect_is_one() {
        let z = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let x1 = [0.1, 0.4, -0.2, 0.9, 1.3, 0.0, 0.5, -0.7];
        let ds = Dataset::with_intercept(
            DVector::from_column_slice(&z),
            DVector::from_column_slice(&z),
            DVector::from_column_slice(&z),
            &DMatrix::from_column_slice(8, 1, &x1),
        )
        .unwrap();
        assert_relative_eq!(additive_2sls(&ds).unwrap().value, 1.0, epsilon = 1e-12);
        assert_relative_eq!(interacted_additive_2sls(&ds).unwrap().value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_only_interacted_is_wald() {
        let ds = toy();
        let ones = ds.with_covariates(DMatrix::from_element(8, 1, 1.0), true).unwrap();
        let fit = interacted_2sls(&ones).unwrap();
        let w = wald(&ones).unwrap().value;
        assert_relative_eq!(fit.beta[0], w, epsilon = 1e-12);
        assert_relative_eq!(additive_2sls(&ones).unwrap().value, w, epsilon = 1e-12);
        assert_relative_eq!(interacted_additive_2sls(&ones).unwrap().value, w, epsilon = 1e-12);
    }

    #[test]
    fn interacted_beta_matches_fwl_route() {
        let ds = toy();
        let fit = interacted_2sls(&ds).unwrap();
        let fwl = least_squares(&column(ds.y()), &fit.fwl_design).unwrap();
        assert_relative_eq!(fwl.coef.column(0).into_owned(), fit.beta, epsilon = 1e-9);
    }

    #[test]
    fn first_stage_blocks_reconstruct_fitted_values() {
        let ds = toy();
        let fit = interacted_2sls(&ds).unwrap();
        let zx = scale_rows(ds.x(), ds.z());
        let rebuilt = &zx * fit.c1.transpose() + ds.x() * fit.c0.transpose();
        assert_relative_eq!(rebuilt, fit.first_stage_fitted, epsilon = 1e-10);
    }

    #[test]
    fn partial_interaction_nests_other_estimators() {
        let ds = toy();
        let all = partially_interacted_2sls(&ds, &[0, 1]).unwrap();
        assert_relative_eq!(all, interacted_2sls(&ds).unwrap().beta, epsilon = 1e-12);
        let only_const = partially_interacted_2sls(&ds, &[0]).unwrap();
        assert_relative_eq!(only_const[0], additive_2sls(&ds).unwrap().value, epsilon = 1e-12);
        assert!(partially_interacted_2sls(&ds, &[]).is_err());
        assert!(partially_interacted_2sls(&ds, &[2]).is_err());
    }

    #[test]
    fn generalized_additive_nests_additive_forms() {
        let ds = toy();
        let zx = |z: f64, x: &[f64]| {
            let mut r: Vec<f64> = x.iter().map(|v| z * v).collect();
            r.extend_from_slice(x);
            r
        };
        let zplain = |z: f64, x: &[f64]| {
            let mut r = vec![z];
            r.extend_from_slice(x);
            r
        };
        assert_relative_eq!(
            generalized_additive_2sls(&ds, zplain).unwrap().value,
            additive_2sls(&ds).unwrap().value,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            generalized_additive_2sls(&ds, zx).unwrap().value,
            interacted_additive_2sls(&ds).unwrap().value,
            epsilon = 1e-12
        );
        let ragged = |z: f64, x: &[f64]| if x[1] > 0.0 { vec![z] } else { vec![z, 1.0] };
        assert!(generalized_additive_2sls(&ds, ragged).is_err());
    }

    #[test]
    fn interacted_ols_is_interacted_2sls_with_z_replaced() {
        let ds = toy();
        let a = interacted_ols(&ds).unwrap();
        let b = interacted_2sls(&ds.with_instrument_as_treatment().unwrap()).unwrap();
        assert_eq!(a.beta, b.beta);
        assert_eq!(a.gamma, b.gamma);
    }

    #[test]
    fn interacted_ols_with_constant_treatment_fails() {
        let ds = toy();
        let flat = Dataset::new(
            ds.y().clone(),
            DVector::from_element(8, 1.0),
            ds.z().clone(),
            ds.x().clone(),
            true,
        )
        .unwrap();
        assert!(matches!(interacted_ols(&flat), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn stratum_wald_hand_computed() {
        // stratum 0: z=1 rows (y 4, 6; d 1, 1), z=0 rows (y 1, 3; d 0, 1)
        //   (5 - 2) / (1 - 0.5) = 6
        // stratum 1: z=1 rows (y 2; d 1), z=0 rows (y 0, 1; d 0, 0)
        //   (2 - 0.5) / (1 - 0) = 1.5
        let y = [4.0, 6.0, 1.0, 3.0, 2.0, 0.0, 1.0];
        let d = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let z = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let labels = [0, 0, 0, 0, 1, 1, 1];
        let ds = Dataset::new(
            DVector::from_column_slice(&y),
            DVector::from_column_slice(&d),
            DVector::from_column_slice(&z),
            DMatrix::from_element(7, 1, 1.0),
            true,
        )
        .unwrap();
        let est = stratum_wald(&ds, &labels).unwrap();
        assert_relative_eq!(est[0].value, 6.0, epsilon = 1e-14);
        assert_relative_eq!(est[1].value, 1.5, epsilon = 1e-14);
    }

    #[test]
    fn stratum_wald_scaled_outcome() {
        let z = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let ds = Dataset::new(
            DVector::from_iterator(6, z.iter().map(|v| 3.0 * v)),
            DVector::from_column_slice(&z),
            DVector::from_column_slice(&z),
            DMatrix::from_element(6, 1, 1.0),
            true,
        )
        .unwrap();
        let est = stratum_wald(&ds, &[7; 6]).unwrap();
        assert_eq!(est.len(), 1);
        assert_relative_eq!(est[0].value, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn stratum_wald_single_arm_is_degenerate() {
        let ds = toy();
        // rows 0 and 2 both have z = 0
        let labels = [1, 0, 1, 0, 0, 0, 0, 0];
        assert!(matches!(
            stratum_wald(&ds, &labels),
            Err(Error::DegenerateStratum { stratum: 1, .. })
        ));
    }

    #[test]
    fn dummy_coding_orders_levels() {
        let (m, levels) = dummy_coding(&[3, 1, 3, 2]);
        assert_eq!(levels, vec![1, 2, 3]);
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
        let (c, _) = dummy_coding_with_constant(&[3, 1, 3, 2]);
        assert_eq!(c.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0; 4]);
    }
}
