//! Multi-response least squares on a column-pivoted Householder QR.
//!
//! Every estimator in the crate is a chain of `lm(u ~ v1 + ... + vL)` fits.
//! They all go through [`least_squares`], which never forms normal
//! equations: interaction designs are moderately ill-conditioned and the
//! exact algebraic identities tested elsewhere need the extra accuracy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A pivot is numerically zero when `|r_jj| < RANK_TOL * |r_00|`.
pub const RANK_TOL: f64 = 1e-10;

/// Result of regressing each response column on a common regressor block.
#[derive(Debug, Clone)]
pub struct LsFit {
    /// Coefficients, `q` regressors by `p` responses.
    pub coef: DMatrix<f64>,
    pub fitted: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    /// False when the effective rank of the regressors is below `q`.
    pub rank_ok: bool,
    /// Ratio of the largest to the smallest retained pivot of `R`.
    pub condition_estimate: f64,
}

/// Householder QR with column pivoting, stored in compact LAPACK form.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    rows: usize,
    cols: usize,
    // column-major; R on and above the diagonal, reflectors below
    packed: Vec<f64>,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        check_finite(a, "regressors")?;
        let (n, q) = a.shape();
        let mut packed = a.as_slice().to_vec();
        let mut perm: Vec<usize> = (0..q).collect();
        let steps = n.min(q);
        let mut tau = vec![0.0; steps];

        for j in 0..steps {
            // pick the remaining column with the largest trailing norm
            let mut best = j;
            let mut best_norm = -1.0;
            for k in j..q {
                let col = &packed[k * n + j..(k + 1) * n];
                let s: f64 = col.iter().map(|v| v * v).sum();
                if s > best_norm {
                    best_norm = s;
                    best = k;
                }
            }
            if best != j {
                for i in 0..n {
                    packed.swap(j * n + i, best * n + i);
                }
                perm.swap(j, best);
            }

            let norm = best_norm.sqrt();
            let alpha = packed[j * n + j];
            if norm == 0.0 {
                tau[j] = 0.0;
                continue;
            }
            let beta = if alpha >= 0.0 { -norm } else { norm };
            let t = (beta - alpha) / beta;
            let scale = 1.0 / (alpha - beta);
            for i in j + 1..n {
                packed[j * n + i] *= scale;
            }
            packed[j * n + j] = beta;
            tau[j] = t;

            let (head, tail) = packed.split_at_mut((j + 1) * n);
            let v = &head[j * n + j + 1..(j + 1) * n];
            for k in 0..q - j - 1 {
                let col = &mut tail[k * n + j..(k + 1) * n];
                let mut s = col[0];
                for (ci, vi) in col[1..].iter().zip(v) {
                    s += ci * vi;
                }
                s *= t;
                col[0] -= s;
                for (ci, vi) in col[1..].iter_mut().zip(v) {
                    *ci -= s * vi;
                }
            }
        }

        let lead = if steps > 0 { packed[0].abs() } else { 0.0 };
        let mut rank = 0;
        while rank < steps {
            let r = packed[rank * n + rank].abs();
            if lead == 0.0 || r < RANK_TOL * lead {
                break;
            }
            rank += 1;
        }

        Ok(Self {
            rows: n,
            cols: q,
            packed,
            tau,
            perm,
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.cols
    }

    /// Column permutation: position `j` of `R` holds original column `perm[j]`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn condition_estimate(&self) -> f64 {
        if self.rank == 0 {
            return f64::INFINITY;
        }
        let n = self.rows;
        let first = self.packed[0].abs();
        let last = self.packed[(self.rank - 1) * n + self.rank - 1].abs();
        first / last
    }

    fn apply_qt(&self, b: &mut [f64]) {
        let n = self.rows;
        for (j, &t) in self.tau.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let v = &self.packed[j * n + j + 1..(j + 1) * n];
            let mut s = b[j];
            for (bi, vi) in b[j + 1..].iter().zip(v) {
                s += bi * vi;
            }
            s *= t;
            b[j] -= s;
            for (bi, vi) in b[j + 1..].iter_mut().zip(v) {
                *bi -= s * vi;
            }
        }
    }

    fn apply_q(&self, b: &mut [f64]) {
        let n = self.rows;
        for (j, &t) in self.tau.iter().enumerate().rev() {
            if t == 0.0 {
                continue;
            }
            let v = &self.packed[j * n + j + 1..(j + 1) * n];
            let mut s = b[j];
            for (bi, vi) in b[j + 1..].iter().zip(v) {
                s += bi * vi;
            }
            s *= t;
            b[j] -= s;
            for (bi, vi) in b[j + 1..].iter_mut().zip(v) {
                *bi -= s * vi;
            }
        }
    }

    /// Basic least-squares solution: coefficients of columns beyond the
    /// effective rank are set to zero.
    pub fn fit(&self, responses: &DMatrix<f64>) -> Result<LsFit> {
        let (n, p) = responses.shape();
        if n != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "responses have {n} rows, regressors have {}",
                self.rows
            )));
        }
        check_finite(responses, "responses")?;
        let q = self.cols;
        let r = self.rank;
        let mut coef = DMatrix::zeros(q, p);
        let mut residuals = DMatrix::zeros(n, p);

        for c in 0..p {
            let mut b = responses.column(c).iter().copied().collect::<Vec<_>>();
            self.apply_qt(&mut b);
            // back substitution on the leading r x r block of R
            let mut x = vec![0.0; r];
            for i in (0..r).rev() {
                let mut s = b[i];
                for (k, xk) in x.iter().enumerate().skip(i + 1) {
                    s -= self.packed[k * n + i] * xk;
                }
                x[i] = s / self.packed[i * n + i];
            }
            for (j, xj) in x.iter().enumerate() {
                coef[(self.perm[j], c)] = *xj;
            }
            for bi in b.iter_mut().take(r) {
                *bi = 0.0;
            }
            self.apply_q(&mut b);
            residuals.column_mut(c).copy_from_slice(&b);
        }

        let fitted = responses - &residuals;
        Ok(LsFit {
            coef,
            fitted,
            residuals,
            rank_ok: self.is_full_rank(),
            condition_estimate: self.condition_estimate(),
        })
    }
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Fits every column of `responses` on `regressors`, reporting rank
/// deficiency through `rank_ok` instead of failing.
pub fn least_squares_report(
    responses: &DMatrix<f64>,
    regressors: &DMatrix<f64>,
) -> Result<LsFit> {
    PivotedQr::new(regressors)?.fit(responses)
}

/// Component-wise least squares `lm(responses ~ regressors)`.
///
/// Fails with [`Error::RankDeficient`] when the regressors have effective
/// rank below their column count; such designs are never resolved by a
/// pseudo-inverse.
pub fn least_squares(responses: &DMatrix<f64>, regressors: &DMatrix<f64>) -> Result<LsFit> {
    let qr = PivotedQr::new(regressors)?;
    if !qr.is_full_rank() {
        return Err(Error::RankDeficient {
            rank: qr.rank(),
            cols: regressors.ncols(),
        });
    }
    qr.fit(responses)
}

/// `targets` minus their least-squares projection on `controls`.
pub fn residualize(targets: &DMatrix<f64>, controls: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(least_squares(targets, controls)?.residuals)
}

/// Solves the square system `a x = b` through the same pivoted QR.
pub fn solve_square(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square system, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(least_squares(b, a)?.coef)
}

/// Horizontal concatenation of blocks sharing a row count.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), rows);
        out.columns_mut(at, b.ncols()).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Multiplies each row of `m` by the matching entry of `s`.
pub fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col.component_mul_assign(s);
    }
    out
}

/// Selects the listed columns of `m`, in order.
pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    m.select_columns(cols.iter())
}

/// Selects the listed rows of `m`, in order (duplicates allowed).
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows.iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn self_regression_is_identity() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 1.0, -1.0, 1.0, 2.0, 1.0, 3.5]);
        let fit = least_squares(&x, &x).unwrap();
        assert_relative_eq!(fit.coef, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert!(fit.residuals.amax() < 1e-12);
    }

    #[test]
    fn intercept_only_gives_mean() {
        let fit = least_squares(&col(&[1.0, 2.0, 3.0]), &DMatrix::from_element(3, 1, 1.0)).unwrap();
        assert_relative_eq!(fit.coef[(0, 0)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn hand_solved_two_regressor_fit() {
        // normal equations [[3,3],[3,5]] b = [5,6]  =>  b = (7/6, 1/2)
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = col(&[1.0, 2.0, 2.0]);
        let fit = least_squares(&y, &x).unwrap();
        assert_relative_eq!(fit.coef[(0, 0)], 7.0 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(fit.coef[(1, 0)], 0.5, epsilon = 1e-14);
        let r = residualize(&y, &x).unwrap();
        assert_relative_eq!(r, col(&[-1.0 / 6.0, 1.0 / 3.0, -1.0 / 6.0]), epsilon = 1e-14);
    }

    #[test]
    fn residualize_on_itself_vanishes_and_on_ones_demeans() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        assert!(residualize(&x, &x).unwrap().amax() < 1e-14);
        let r = residualize(&col(&[1.0, 5.0, 9.0]), &DMatrix::from_element(3, 1, 1.0)).unwrap();
        assert_relative_eq!(r, col(&[-4.0, 0.0, 4.0]), epsilon = 1e-13);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let err = least_squares(&col(&[1.0, 2.0, 3.0]), &x).unwrap_err();
        assert_eq!(err, Error::RankDeficient { rank: 1, cols: 2 });
        let report = least_squares_report(&col(&[1.0, 2.0, 3.0]), &x).unwrap();
        assert!(!report.rank_ok);
        assert!(report.residuals.amax() < 1e-12);
    }

    #[test]
    fn dummy_plus_constant_is_rank_deficient() {
        // constant column equals the sum of two exhaustive dummies
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        );
        assert!(matches!(
            least_squares(&col(&[1.0, 2.0, 3.0, 4.0]), &x),
            Err(Error::RankDeficient { rank: 2, cols: 3 })
        ));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let y = col(&[1.0, f64::NAN]);
        assert_eq!(least_squares(&y, &x).unwrap_err(), Error::NonFinite("responses"));
    }

    #[test]
    fn wide_system_is_rank_deficient() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(
            least_squares(&col(&[1.0]), &x),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn square_solve_matches_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[3.0, 5.0]);
        let x = solve_square(&a, &b).unwrap();
        assert_relative_eq!(x, DMatrix::from_row_slice(2, 1, &[0.8, 1.4]), epsilon = 1e-14);
    }
}
