//! The observed sample `(Y, D, Z, X)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// An observed sample with a binary treatment and a binary instrument.
///
/// The covariate block `x` is used exactly as given: when `has_constant`
/// is set its first column must be all ones, otherwise no intercept is
/// injected anywhere (dummy codings of a categorical covariate rely on this).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    d: DVector<f64>,
    z: DVector<f64>,
    x: DMatrix<f64>,
    has_constant: bool,
}

fn check_binary(v: &DVector<f64>, name: &str) -> Result<()> {
    match v.iter().position(|&t| t != 0.0 && t != 1.0) {
        Some(i) => Err(Error::InvalidData(format!(
            "{name} must be 0/1, found {} at row {i}",
            v[i]
        ))),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        d: DVector<f64>,
        z: DVector<f64>,
        x: DMatrix<f64>,
        has_constant: bool,
    ) -> Result<Self> {
        let n = y.len();
        if d.len() != n || z.len() != n || x.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {n} rows, d {}, z {}, x {}",
                d.len(),
                z.len(),
                x.nrows()
            )));
        }
        let k = x.ncols();
        if k == 0 {
            return Err(Error::InvalidData("covariate block has no columns".into()));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("y"));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("x"));
        }
        check_binary(&d, "d")?;
        check_binary(&z, "z")?;
        if has_constant && x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidData(
                "has_constant is set but the first covariate column is not all ones".into(),
            ));
        }
        if n < 2 * k + 2 {
            return Err(Error::InvalidData(format!(
                "need at least {} rows for {k} covariates, got {n}",
                2 * k + 2
            )));
        }
        let treated = z.iter().filter(|&&v| v == 1.0).count();
        if treated == 0 || treated == n {
            return Err(Error::InvalidData("one instrument arm is empty".into()));
        }
        Ok(Self {
            y,
            d,
            z,
            x,
            has_constant,
        })
    }

    /// Builds a dataset with an intercept column prepended to `covariates`.
    pub fn with_intercept(
        y: DVector<f64>,
        d: DVector<f64>,
        z: DVector<f64>,
        covariates: &DMatrix<f64>,
    ) -> Result<Self> {
        let ones = DMatrix::from_element(covariates.nrows(), 1, 1.0);
        let x = linalg::hstack(&[&ones, covariates]);
        Self::new(y, d, z, x, true)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of covariate columns, including the constant if present.
    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn has_constant(&self) -> bool {
        self.has_constant
    }

    /// Same sample with a different covariate block.
    pub fn with_covariates(&self, x: DMatrix<f64>, has_constant: bool) -> Result<Self> {
        Self::new(self.y.clone(), self.d.clone(), self.z.clone(), x, has_constant)
    }

    /// Same sample with the instrument replaced by the treatment, which
    /// turns every two-stage estimator into its OLS analog.
    pub fn with_instrument_as_treatment(&self) -> Result<Self> {
        Self::new(
            self.y.clone(),
            self.d.clone(),
            self.d.clone(),
            self.x.clone(),
            self.has_constant,
        )
    }

    /// Row resample; indices may repeat.
    pub fn resample(&self, rows: &[usize]) -> Result<Self> {
        let pick = |v: &DVector<f64>| DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]));
        Self::new(
            pick(&self.y),
            pick(&self.d),
            pick(&self.z),
            linalg::select_rows(&self.x, rows),
            self.has_constant,
        )
    }
}
