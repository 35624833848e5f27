//! Exact population quantities for finite-support specs.
//!
//! The population is enumerated as atoms `(cell, z, type)` with
//! probability `P(x)·P(z|x)·P(u|x)`. Causal estimands come from the
//! complier cell law; the probability limits of the 2SLS variants come
//! from exact population projections over the atoms, independently of the
//! weighted-average formulas they are checked against.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::solve_square;
use crate::montecarlo::dgp::{ComplianceType, CovariateLaw, DgpSpec};

/// Population quantities attached to one support point.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCell {
    /// Non-constant covariate values.
    pub point: Vec<f64>,
    pub prob: f64,
    /// `P(Z = 1 | x)`.
    pub e: f64,
    /// `P(U = c | x)`.
    pub pi: f64,
    /// Conditional LATE `τ_c(x)`.
    pub tau_c: f64,
    /// `var(Z|x)`-weighted linear projection of `pi` on `(1, x)`.
    pub pi_tilde: f64,
    pub w_plus: f64,
    pub w_times: f64,
    /// Normalized `var{E(D | Z, x) | x}`.
    pub w: f64,
}

#[derive(Debug, Clone)]
pub struct OracleEstimands {
    pub tau_c: f64,
    pub p_complier: f64,
    pub cells: Vec<OracleCell>,
    /// Complier projection of the effect on `(1, x)`.
    pub beta_c: DVector<f64>,
    pub pi_tilde_coeffs: DVector<f64>,
    /// `E{w₊(X)·τ_c(X)}`.
    pub plim_taa: f64,
    /// `E{w×(X)·τ_c(X)}`.
    pub plim_tia: f64,
    /// Population additive 2SLS coefficient, by direct projection.
    pub pop_taa: f64,
    /// Population interacted-additive 2SLS coefficient, by direct projection.
    pub pop_tia: f64,
    /// Population interacted 2SLS coefficient vector.
    pub beta_2sls: DVector<f64>,
    pub c1: DMatrix<f64>,
    pub c0: DMatrix<f64>,
    /// Coefficient matrix of `X` in `proj(ZX | X)`.
    pub c2: DMatrix<f64>,
    /// `E(D̃X D̃Xᵀ)` for the residualized population first stage.
    pub dx_gram: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub b2: DVector<f64>,
}

impl OracleEstimands {
    /// `β_c + E(D̃X D̃Xᵀ)⁻¹(B₁ + B₂)`, which must equal `beta_2sls`.
    pub fn decomposed_beta_2sls(&self) -> Result<DVector<f64>> {
        let k = self.beta_c.len();
        let rhs = DMatrix::from_column_slice(k, 1, (&self.b1 + &self.b2).as_slice());
        let shift = solve_square(&self.dx_gram, &rhs)?;
        Ok(&self.beta_c + shift.column(0))
    }
}

struct Atom {
    prob: f64,
    x: DVector<f64>,
    z: f64,
    d: f64,
    y: f64,
}

fn with_constant(point: &[f64]) -> DVector<f64> {
    DVector::from_iterator(point.len() + 1, std::iter::once(1.0).chain(point.iter().copied()))
}

/// Solves `E(f fᵀ) B = E(f gᵀ)` and returns `B` (dim f × dim g).
fn projection<F>(atoms: &[Atom], feature: F, target: impl Fn(&Atom, &DVector<f64>) -> DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&Atom) -> DVector<f64>,
{
    let mut ff: Option<DMatrix<f64>> = None;
    let mut fg: Option<DMatrix<f64>> = None;
    for a in atoms {
        let f = feature(a);
        let g = target(a, &f);
        let ffa = &f * f.transpose() * a.prob;
        let fga = &f * g.transpose() * a.prob;
        ff = Some(ff.map_or(ffa.clone(), |m| m + ffa));
        fg = Some(fg.map_or(fga.clone(), |m| m + fga));
    }
    let (ff, fg) = (ff.expect("atoms"), fg.expect("atoms"));
    solve_square(&ff, &fg)
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// Enumerates a finite-support spec into exact population estimands.
pub fn oracle_estimands(spec: &DgpSpec) -> Result<OracleEstimands> {
    spec.validate()?;
    let (points, probs) = match &spec.covariates {
        CovariateLaw::Discrete { points, probs } => (points, probs),
        _ => return Err(Error::InfiniteSupport),
    };
    let k = spec.covariates.dim() + 1;
    let mut atoms = Vec::new();
    let mut cells = Vec::with_capacity(points.len());
    let mut xs = Vec::with_capacity(points.len());
    let mut type_probs = Vec::with_capacity(points.len());

    for (point, &p) in points.iter().zip(probs) {
        let x = with_constant(point);
        let e = spec.propensity.eval(point);
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::InvalidSpec(format!("propensity {e} violates overlap at {point:?}")));
        }
        let tp = spec.compliance.probabilities(point)?;
        let tau_c = spec.outcomes.y1.eval(point, ComplianceType::Complier) - spec.outcomes.y0.eval(point, ComplianceType::Complier);
        for (u, &pu) in ComplianceType::ALL.iter().zip(&tp) {
            for (z, pz) in [(1.0, e), (0.0, 1.0 - e)] {
                let d = u.treatment(z);
                let y = if d == 1.0 {
                    spec.outcomes.y1.eval(point, *u)
                } else {
                    spec.outcomes.y0.eval(point, *u)
                };
                if p * pz * pu > 0.0 {
                    atoms.push(Atom { prob: p * pz * pu, x: x.clone(), z, d, y });
                }
            }
        }
        cells.push(OracleCell {
            point: point.clone(),
            prob: p,
            e,
            pi: tp[1],
            tau_c,
            pi_tilde: 0.0,
            w_plus: 0.0,
            w_times: 0.0,
            w: 0.0,
        });
        xs.push(x);
        type_probs.push(tp);
    }

    // complier cell law
    let p_complier: f64 = cells.iter().map(|c| c.prob * c.pi).sum();
    if p_complier.is_nan() || p_complier <= 0.0 {
        return Err(Error::InvalidSpec("spec has no compliers".into()));
    }
    let tau_c = cells.iter().map(|c| c.prob * c.pi * c.tau_c).sum::<f64>() / p_complier;

    let weighted_ls = |weight: &dyn Fn(&OracleCell) -> f64, value: &dyn Fn(&OracleCell) -> f64| -> Result<DVector<f64>> {
        let mut g = DMatrix::zeros(k, k);
        let mut m = DMatrix::zeros(k, 1);
        for (c, x) in cells.iter().zip(&xs) {
            let w = c.prob * weight(c);
            g += x * x.transpose() * w;
            m += x * (w * value(c));
        }
        Ok(solve_square(&g, &m)?.column(0).into_owned())
    };
    let beta_c = weighted_ls(&|c| c.pi, &|c| c.tau_c)?;
    let var_z = |c: &OracleCell| c.e * (1.0 - c.e);
    let pi_tilde_coeffs = weighted_ls(&var_z, &|c| c.pi)?;

    for (c, x) in cells.iter_mut().zip(&xs) {
        c.pi_tilde = pi_tilde_coeffs.dot(x);
    }
    let norm_plus: f64 = cells.iter().map(|c| c.prob * var_z(c) * c.pi).sum();
    let norm_times: f64 = cells.iter().map(|c| c.prob * var_z(c) * c.pi_tilde.powi(2)).sum();
    let norm_w: f64 = cells.iter().map(|c| c.prob * var_z(c) * c.pi.powi(2)).sum();
    for c in cells.iter_mut() {
        let v = var_z(c);
        c.w_plus = v * c.pi / norm_plus;
        c.w_times = v * c.pi_tilde * c.pi / norm_times;
        c.w = v * c.pi.powi(2) / norm_w;
    }
    let plim_taa = cells.iter().map(|c| c.prob * c.w_plus * c.tau_c).sum();
    let plim_tia = cells.iter().map(|c| c.prob * c.w_times * c.tau_c).sum();

    // population additive and interacted-additive 2SLS
    let additive_like = |first: &dyn Fn(&Atom) -> DVector<f64>| -> Result<f64> {
        let pi = projection(&atoms, first, |a, _| scalar(a.d))?;
        let second = projection(
            &atoms,
            |a| stack(&scalar((pi.transpose() * first(a))[0]), &a.x),
            |a, _| scalar(a.y),
        )?;
        Ok(second[(0, 0)])
    };
    let pop_taa = additive_like(&|a| stack(&scalar(a.z), &a.x))?;
    let pop_tia = additive_like(&|a| stack(&(&a.x * a.z), &a.x))?;

    // population interacted 2SLS
    let first_feat = |a: &Atom| stack(&(&a.x * a.z), &a.x);
    let pi = projection(&atoms, first_feat, |a, _| &a.x * a.d)?;
    let c1 = pi.rows(0, k).transpose();
    let c0 = pi.rows(k, k).transpose();
    let second = projection(
        &atoms,
        |a| stack(&(pi.transpose() * first_feat(a)), &a.x),
        |a, _| scalar(a.y),
    )?;
    let beta_2sls = second.column(0).rows(0, k).into_owned();

    // proj(ZX | X) = C2 X
    let c2 = projection(&atoms, |a| a.x.clone(), |a, _| &a.x * a.z)?.transpose();
    let mut zx_res_gram = DMatrix::zeros(k, k);
    for a in &atoms {
        let r = &a.x * a.z - &c2 * &a.x;
        zx_res_gram += &r * r.transpose() * a.prob;
    }
    let dx_gram = &c1 * zx_res_gram * c1.transpose();

    // Δ = Y(0) for compliers and never-takers, Y(1) − xᵀβ_c for always-takers
    let delta_mean: Vec<f64> = cells
        .iter()
        .zip(&xs)
        .zip(&type_probs)
        .map(|((c, x), tp)| {
            let pt = &c.point;
            tp[0] * (spec.outcomes.y1.eval(pt, ComplianceType::Always) - x.dot(&beta_c))
                + tp[1] * spec.outcomes.y0.eval(pt, ComplianceType::Complier)
                + tp[2] * spec.outcomes.y0.eval(pt, ComplianceType::Never)
        })
        .collect();
    let delta_coef = {
        let mut g = DMatrix::zeros(k, k);
        let mut m = DMatrix::zeros(k, 1);
        for ((c, x), dm) in cells.iter().zip(&xs).zip(&delta_mean) {
            g += x * x.transpose() * c.prob;
            m += x * (c.prob * dm);
        }
        solve_square(&g, &m)?.column(0).into_owned()
    };

    let mut b1_inner = DVector::zeros(k);
    let mut b2_inner = DVector::zeros(k);
    for ((c, x), dm) in cells.iter().zip(&xs).zip(&delta_mean) {
        let ezx = x * c.e;
        b1_inner += (&ezx - &c2 * x) * (c.prob * (dm - x.dot(&delta_coef)));
        // E{E(ZX|X) ε | c}·P(c), with E(ε | x, c) = τ_c(x) − xᵀβ_c
        b2_inner += ezx * (c.prob * c.pi * (c.tau_c - x.dot(&beta_c)));
    }
    let b1 = &c1 * b1_inner;
    let b2 = &c1 * (DMatrix::identity(k, k) - &c2) * b2_inner;

    Ok(OracleEstimands {
        tau_c,
        p_complier,
        cells,
        beta_c,
        pi_tilde_coeffs,
        plim_taa,
        plim_tia,
        pop_taa,
        pop_tia,
        beta_2sls,
        c1,
        c0,
        c2,
        dx_gram,
        b1,
        b2,
    })
}
