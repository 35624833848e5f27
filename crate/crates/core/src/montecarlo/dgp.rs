//! Serializable data-generating processes and sample generation.
//!
//! A spec describes, as functions of the non-constant covariates `x`:
//! the covariate law, the instrument propensity `e(x)`, the compliance
//! type probabilities and the mean potential outcomes per type. Functions
//! are sparse polynomials so a spec round-trips through JSON unchanged.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// `coef · Π x_j^{powers[j]}`; missing powers are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    #[serde(default)]
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(pub Vec<Term>);

impl Polynomial {
    pub fn constant(c: f64) -> Self {
        Polynomial(vec![Term { coef: c, powers: vec![] }])
    }

    /// `c0 + Σ coefs[j]·x_j`.
    pub fn affine(c0: f64, coefs: &[f64]) -> Self {
        let mut terms = vec![Term { coef: c0, powers: vec![] }];
        for (j, &c) in coefs.iter().enumerate() {
            let mut powers = vec![0; j + 1];
            powers[j] = 1;
            terms.push(Term { coef: c, powers });
        }
        Polynomial(terms)
    }

    /// `Σ_j x_j²` over the first `dim` covariates.
    pub fn sum_of_squares(dim: usize) -> Self {
        Polynomial(
            (0..dim)
                .map(|j| {
                    let mut powers = vec![0; j + 1];
                    powers[j] = 2;
                    Term { coef: 1.0, powers }
                })
                .collect(),
        )
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .map(|t| {
                t.powers
                    .iter()
                    .enumerate()
                    .fold(t.coef, |acc, (j, &p)| acc * x.get(j).copied().unwrap_or(0.0).powi(p as i32))
            })
            .sum()
    }

    fn max_var(&self) -> usize {
        self.0.iter().map(|t| t.powers.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    /// Finite support: `points[i]` with probability `probs[i]`.
    Discrete { points: Vec<Vec<f64>>, probs: Vec<f64> },
    /// Independent standard normals.
    Normal { dim: usize },
    /// Independent `Uniform(low, high)` draws.
    Uniform { dim: usize, low: f64, high: f64 },
}

impl CovariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::Discrete { points, .. } => points.first().map_or(0, Vec::len),
            CovariateLaw::Normal { dim } | CovariateLaw::Uniform { dim, .. } => *dim,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, CovariateLaw::Discrete { .. })
    }

    fn draw<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            CovariateLaw::Discrete { points, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = points.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                out.copy_from_slice(&points[pick]);
            }
            CovariateLaw::Normal { .. } => {
                for v in out.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            CovariateLaw::Uniform { low, high, .. } => {
                for v in out.iter_mut() {
                    *v = rng.gen_range(*low..*high);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logistic,
}

/// `P(Z = 1 | x) = link(index(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propensity {
    pub link: Link,
    pub index: Polynomial,
}

impl Propensity {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let t = self.index.eval(x);
        match self.link {
            Link::Identity => t,
            Link::Logistic => 1.0 / (1.0 + (-t).exp()),
        }
    }
}

/// Always-taker and complier probabilities; never-takers take the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compliance {
    pub always: Polynomial,
    pub complier: Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplianceType {
    Always,
    Complier,
    Never,
}

impl ComplianceType {
    pub const ALL: [ComplianceType; 3] = [ComplianceType::Always, ComplianceType::Complier, ComplianceType::Never];

    /// Treatment status implied by the type and the instrument.
    pub fn treatment(self, z: f64) -> f64 {
        match self {
            ComplianceType::Always => 1.0,
            ComplianceType::Complier => z,
            ComplianceType::Never => 0.0,
        }
    }
}

impl Compliance {
    /// `(P(a|x), P(c|x), P(n|x))`.
    pub fn probabilities(&self, x: &[f64]) -> Result<[f64; 3]> {
        let a = self.always.eval(x);
        let c = self.complier.eval(x);
        let n = 1.0 - a - c;
        if a < 0.0 || c < 0.0 || n < -1e-12 {
            return Err(Error::InvalidSpec(format!(
                "compliance probabilities ({a}, {c}, {n}) invalid at x = {x:?}"
            )));
        }
        Ok([a, c, n.max(0.0)])
    }
}

/// Mean potential outcome, optionally overridden per compliance type.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TypedPolynomial {
    pub base: Polynomial,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub always: Option<Polynomial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complier: Option<Polynomial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub never: Option<Polynomial>,
}

impl TypedPolynomial {
    pub fn uniform(base: Polynomial) -> Self {
        Self {
            base,
            ..Default::default()
        }
    }

    pub fn eval(&self, x: &[f64], u: ComplianceType) -> f64 {
        let over = match u {
            ComplianceType::Always => &self.always,
            ComplianceType::Complier => &self.complier,
            ComplianceType::Never => &self.never,
        };
        over.as_ref().unwrap_or(&self.base).eval(x)
    }

    fn max_var(&self) -> usize {
        [&self.always, &self.complier, &self.never]
            .iter()
            .filter_map(|p| p.as_ref().map(Polynomial::max_var))
            .fold(self.base.max_var(), usize::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcomes {
    pub y0: TypedPolynomial,
    pub y1: TypedPolynomial,
    /// Standard deviation of independent Gaussian noise on each potential
    /// outcome.
    #[serde(default)]
    pub noise_sd: f64,
}

/// Closed-form targets for specs without finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub tau_c: f64,
    /// Complier projection of the effect on `(1, x)`.
    pub beta_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: String,
    pub covariates: CovariateLaw,
    pub propensity: Propensity,
    pub compliance: Compliance,
    pub outcomes: Outcomes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Truth>,
}

/// Per-unit quantities a real study never observes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTruth {
    pub u: Vec<ComplianceType>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub tau: Vec<f64>,
    /// True instrument propensity.
    pub e: Vec<f64>,
}

impl DgpSpec {
    /// Binary covariate, propensity `0.5 + 0.4x`, complier share
    /// `0.7 − 0.5x`, effect `−1 + 5x` for every unit.
    pub fn dgp_a() -> Self {
        DgpSpec {
            name: "A".into(),
            covariates: CovariateLaw::Discrete {
                points: vec![vec![0.0], vec![1.0]],
                probs: vec![0.5, 0.5],
            },
            propensity: Propensity {
                link: Link::Identity,
                index: Polynomial::affine(0.5, &[0.4]),
            },
            compliance: Compliance {
                always: Polynomial::constant(0.1),
                complier: Polynomial::affine(0.7, &[-0.5]),
            },
            outcomes: Outcomes {
                y0: TypedPolynomial::uniform(Polynomial::constant(0.0)),
                y1: TypedPolynomial::uniform(Polynomial::affine(-1.0, &[5.0])),
                noise_sd: 0.0,
            },
            truth: None,
        }
    }

    /// Two standard normal covariates, propensity `1/(1 + exp(x1 + x2))`,
    /// effect `x1² + x2²`, compliance independent of covariates.
    pub fn dgp_b() -> Self {
        DgpSpec {
            name: "B".into(),
            covariates: CovariateLaw::Normal { dim: 2 },
            propensity: Propensity {
                link: Link::Logistic,
                index: Polynomial::affine(0.0, &[-1.0, -1.0]),
            },
            compliance: Compliance {
                always: Polynomial::constant(0.2),
                complier: Polynomial::constant(0.7),
            },
            outcomes: Outcomes {
                y0: TypedPolynomial::uniform(Polynomial::constant(0.0)),
                y1: TypedPolynomial::uniform(Polynomial::sum_of_squares(2)),
                noise_sd: 0.0,
            },
            // E(x1² + x2²) = 2; x³ moments vanish, so the projection is flat
            truth: Some(Truth {
                tau_c: 2.0,
                beta_c: vec![2.0, 0.0, 0.0],
            }),
        }
    }

    /// Uniform covariate equal to the propensity, effect `x²`.
    pub fn dgp_c() -> Self {
        DgpSpec {
            name: "C".into(),
            covariates: CovariateLaw::Uniform {
                dim: 1,
                low: 0.0,
                high: 1.0,
            },
            propensity: Propensity {
                link: Link::Identity,
                index: Polynomial::affine(0.0, &[1.0]),
            },
            compliance: Compliance {
                always: Polynomial::constant(0.2),
                complier: Polynomial::constant(0.7),
            },
            outcomes: Outcomes {
                y0: TypedPolynomial::uniform(Polynomial::constant(0.0)),
                y1: TypedPolynomial::uniform(Polynomial::sum_of_squares(1)),
                noise_sd: 0.0,
            },
            // E x² = 1/3; projection of x² on (1, x) under Uniform(0, 1)
            truth: Some(Truth {
                tau_c: 1.0 / 3.0,
                beta_c: vec![-1.0 / 6.0, 1.0],
            }),
        }
    }

    /// Looks up a built-in study by name. `D` is the regressogram study,
    /// which shares its model with `C`.
    pub fn named(name: &str) -> Option<Self> {
        let key = name.trim().to_ascii_uppercase();
        let key = key.strip_prefix("DGP-").unwrap_or(&key);
        match key {
            "A" => Some(Self::dgp_a()),
            "B" => Some(Self::dgp_b()),
            "C" => Some(Self::dgp_c()),
            "D" => Some(DgpSpec {
                name: "D".into(),
                ..Self::dgp_c()
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.covariates.dim();
        if dim == 0 {
            return Err(Error::InvalidSpec("covariate law has dimension zero".into()));
        }
        if let CovariateLaw::Discrete { points, probs } = &self.covariates {
            if points.len() != probs.len() || points.is_empty() {
                return Err(Error::InvalidSpec("points and probs must be nonempty and aligned".into()));
            }
            if points.iter().any(|p| p.len() != dim) {
                return Err(Error::InvalidSpec("support points differ in dimension".into()));
            }
            if probs.iter().any(|&p| p.is_nan() || p < 0.0) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidSpec("support probabilities must be nonnegative and sum to 1".into()));
            }
        }
        if let CovariateLaw::Uniform { low, high, .. } = self.covariates {
            if low.is_nan() || high.is_nan() || low >= high {
                return Err(Error::InvalidSpec("uniform law needs low < high".into()));
            }
        }
        let used = [
            self.propensity.index.max_var(),
            self.compliance.always.max_var(),
            self.compliance.complier.max_var(),
            self.outcomes.y0.max_var(),
            self.outcomes.y1.max_var(),
        ];
        if used.iter().any(|&m| m > dim) {
            return Err(Error::InvalidSpec(format!(
                "a polynomial references more than the {dim} covariates"
            )));
        }
        if self.outcomes.noise_sd.is_nan() || self.outcomes.noise_sd < 0.0 {
            return Err(Error::InvalidSpec("noise_sd must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Draws one sample of size `n`; equivalent to replicate 0 of `seed`.
pub fn generate(spec: &DgpSpec, n: usize, seed: u64) -> Result<(Dataset, LatentTruth)> {
    generate_replicate(spec, n, seed, 0)
}

/// Draws replicate `replicate` of a study seeded by `seed`.
pub fn generate_replicate(spec: &DgpSpec, n: usize, seed: u64, replicate: u64) -> Result<(Dataset, LatentTruth)> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be positive".into()));
    }
    let dim = spec.covariates.dim();
    let mut cov_rng = stream(seed, replicate, Purpose::Covariates);
    let mut z_rng = stream(seed, replicate, Purpose::Instrument);
    let mut u_rng = stream(seed, replicate, Purpose::Compliance);
    let mut noise_rng = stream(seed, replicate, Purpose::Noise);
    let sd = spec.outcomes.noise_sd;

    let mut covs = DMatrix::zeros(n, dim);
    let mut row = vec![0.0; dim];
    let (mut y, mut d, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut latent = LatentTruth {
        u: Vec::with_capacity(n),
        y0: Vec::with_capacity(n),
        y1: Vec::with_capacity(n),
        tau: Vec::with_capacity(n),
        e: Vec::with_capacity(n),
    };

    for i in 0..n {
        spec.covariates.draw(&mut cov_rng, &mut row);
        for (j, v) in row.iter().enumerate() {
            covs[(i, j)] = *v;
        }

        let e = spec.propensity.eval(&row);
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::InvalidSpec(format!("propensity {e} outside [0, 1] at x = {row:?}")));
        }
        let zi = if z_rng.gen::<f64>() < e { 1.0 } else { 0.0 };

        let [pa, pc, _] = spec.compliance.probabilities(&row)?;
        let draw: f64 = u_rng.gen();
        let u = if draw < pa {
            ComplianceType::Always
        } else if draw < pa + pc {
            ComplianceType::Complier
        } else {
            ComplianceType::Never
        };
        let di = u.treatment(zi);

        let (mut y0, mut y1) = (spec.outcomes.y0.eval(&row, u), spec.outcomes.y1.eval(&row, u));
        if sd > 0.0 {
            let (a, b): (f64, f64) = (StandardNormal.sample(&mut noise_rng), StandardNormal.sample(&mut noise_rng));
            y0 += sd * a;
            y1 += sd * b;
        }
        y.push(if di == 1.0 { y1 } else { y0 });
        d.push(di);
        z.push(zi);
        latent.u.push(u);
        latent.y0.push(y0);
        latent.y1.push(y1);
        latent.tau.push(y1 - y0);
        latent.e.push(e);
    }

    let data = Dataset::with_intercept(DVector::from_vec(y), DVector::from_vec(d), DVector::from_vec(z), &covs)?;
    Ok((data, latent))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_evaluation() {
        let p = Polynomial(vec![
            Term { coef: 2.0, powers: vec![] },
            Term { coef: 3.0, powers: vec![1, 2] },
        ]);
        assert_eq!(p.eval(&[2.0, 3.0]), 2.0 + 3.0 * 2.0 * 9.0);
        assert_eq!(Polynomial::sum_of_squares(2).eval(&[3.0, 4.0]), 25.0);
        assert_eq!(Polynomial::affine(0.5, &[0.4]).eval(&[1.0]), 0.9);
    }

    #[test]
    fn named_specs_resolve() {
        assert_eq!(DgpSpec::named("dgp-a").unwrap().name, "A");
        assert_eq!(DgpSpec::named("D").unwrap().covariates, DgpSpec::dgp_c().covariates);
        assert!(DgpSpec::named("unknown").is_none());
    }

    #[test]
    fn spec_round_trips_through_json() {
        for spec in [DgpSpec::dgp_a(), DgpSpec::dgp_b(), DgpSpec::dgp_c()] {
            let s = serde_json::to_string(&spec).unwrap();
            let back: DgpSpec = serde_json::from_str(&s).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn all_always_takers_are_always_treated() {
        let mut spec = DgpSpec::dgp_a();
        spec.compliance = Compliance {
            always: Polynomial::constant(1.0),
            complier: Polynomial::constant(0.0),
        };
        let (data, latent) = generate(&spec, 200, 3).unwrap();
        assert!(data.d().iter().all(|&d| d == 1.0));
        assert!(latent.u.iter().all(|&u| u == ComplianceType::Always));
    }

    #[test]
    fn generation_reconstructs_observables() {
        let mut spec = DgpSpec::dgp_b();
        spec.outcomes.noise_sd = 0.5;
        let (data, latent) = generate(&spec, 500, 11).unwrap();
        for i in 0..500 {
            let d = latent.u[i].treatment(data.z()[i]);
            assert_eq!(data.d()[i], d);
            assert_eq!(data.y()[i], d * latent.y1[i] + (1.0 - d) * latent.y0[i]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&DgpSpec::dgp_c(), 100, 5).unwrap();
        let b = generate(&DgpSpec::dgp_c(), 100, 5).unwrap();
        assert_eq!(a.0, b.0);
        assert_ne!(a.0, generate_replicate(&DgpSpec::dgp_c(), 100, 5, 1).unwrap().0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = DgpSpec::dgp_a();
        spec.compliance.complier = Polynomial::constant(0.95);
        assert!(matches!(generate(&spec, 50, 1), Err(Error::InvalidSpec(_))));

        let mut spec = DgpSpec::dgp_a();
        spec.outcomes.y1 = TypedPolynomial::uniform(Polynomial::affine(0.0, &[0.0, 1.0]));
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
    }
}
