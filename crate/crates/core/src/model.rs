//! Data-generating models with analytic population quantities.
//!
//! Features are `X_j = w_jᵀu / ‖w_j‖₂` for a Rademacher factor vector
//! `u ∈ {−1, +1}^k` and integer loadings `w_j ∈ {−1, 0, 1}^k`. Each feature
//! then has mean zero, unit variance and `|X_j| ≤ ‖w_j‖₁/‖w_j‖₂`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GramMatrix, Scope};
use crate::error::{Error, Result};
use crate::linalg;

/// Supports larger than this fall back to Monte Carlo for the sine moments.
const MAX_EXACT_FACTORS: usize = 20;
const MOMENT_MC_DRAWS: usize = 2_000_000;
const MOMENT_MC_SEED: u64 = 0x51_4e_e5;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    loadings: DMatrix<f64>,
    normalized: DMatrix<f64>,
}

impl DesignSpec {
    pub fn new(loadings: DMatrix<f64>) -> Result<Self> {
        let (p, k) = loadings.shape();
        if p == 0 || k == 0 {
            return Err(Error::invalid("loadings must be nonempty"));
        }
        if loadings.iter().any(|&w| w != 0.0 && w != 1.0 && w != -1.0) {
            return Err(Error::invalid("loadings must take values in {-1, 0, 1}"));
        }
        let mut normalized = loadings.clone();
        for j in 0..p {
            let norm = loadings.row(j).norm();
            if norm == 0.0 {
                return Err(Error::invalid(format!("loading row {} is all zero", j + 1)));
            }
            normalized.row_mut(j).scale_mut(1.0 / norm);
        }
        Ok(DesignSpec {
            loadings,
            normalized,
        })
    }

    /// Independent Rademacher features, `Σ = I`.
    pub fn identity(p: usize) -> Result<Self> {
        Self::new(DMatrix::identity(p, p))
    }

    /// The first `g` features share one extra factor: `Σ_jl = 1/2` within
    /// that block, `B_X = √2` and `‖Σ⁻¹‖ = 2`.
    pub fn shared(p: usize, g: usize) -> Result<Self> {
        if g < 2 || g > p {
            return Err(Error::invalid(format!(
                "shared block size must lie in 2..={p}, got {g}"
            )));
        }
        let mut w = DMatrix::zeros(p, p + 1);
        for j in 0..p {
            w[(j, j)] = 1.0;
            if j < g {
                w[(j, p)] = 1.0;
            }
        }
        Self::new(w)
    }

    pub fn p(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn factor_count(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    /// Rows `w_j / ‖w_j‖₂`.
    pub fn normalized_loadings(&self) -> &DMatrix<f64> {
        &self.normalized
    }

    /// Per-feature bounds `‖w_j‖₁/‖w_j‖₂`.
    pub fn feature_bounds(&self) -> Vec<f64> {
        (0..self.p())
            .map(|j| self.normalized.row(j).iter().map(|x| x.abs()).sum())
            .collect()
    }

    /// `B_X = max_j ‖w_j‖₁/‖w_j‖₂`.
    pub fn feature_bound(&self) -> f64 {
        self.feature_bounds().into_iter().fold(0.0, f64::max)
    }

    pub fn population_covariance(&self) -> GramMatrix {
        let mut sigma = &self.normalized * self.normalized.transpose();
        for j in 0..self.p() {
            sigma[(j, j)] = 1.0;
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        GramMatrix::new_unchecked(sigma, Scope::Population)
    }

    /// `‖Σ⁻¹‖ = 1/λ_min(Σ)`, infinite when `Σ` is singular.
    pub fn sigma_inv_norm(&self) -> f64 {
        let lmin = linalg::lambda_min(self.population_covariance().matrix());
        if lmin <= 1e-12 {
            f64::INFINITY
        } else {
            1.0 / lmin
        }
    }

    pub fn sample_factors<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.factor_count(), |_, _| {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        })
    }

    pub fn sample_row<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        &self.normalized * self.sample_factors(rng)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DesignKind {
    #[default]
    Identity,
    Shared(usize),
}

impl DesignKind {
    pub fn build(self, p: usize) -> Result<DesignSpec> {
        match self {
            DesignKind::Identity => DesignSpec::identity(p),
            DesignKind::Shared(g) => DesignSpec::shared(p, g),
        }
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignKind::Identity => f.write_str("identity"),
            DesignKind::Shared(g) => write!(f, "shared:{g}"),
        }
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "identity" {
            return Ok(DesignKind::Identity);
        }
        if let Some(g) = s.strip_prefix("shared:") {
            let g = g
                .parse()
                .map_err(|_| Error::invalid(format!("bad shared block size in {s:?}")))?;
            return Ok(DesignKind::Shared(g));
        }
        Err(Error::invalid(format!(
            "unknown design {s:?} (expected identity or shared:<g>)"
        )))
    }
}

impl TryFrom<String> for DesignKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DesignKind> for String {
    fn from(d: DesignKind) -> String {
        d.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Nonlinearity {
    None,
    /// `α·X₁X₂`.
    BoundedInteraction {
        alpha: f64,
    },
    /// `α·sin(X₁)`.
    BoundedSine {
        alpha: f64,
    },
}

impl Nonlinearity {
    pub fn alpha(&self) -> f64 {
        match *self {
            Nonlinearity::None => 0.0,
            Nonlinearity::BoundedInteraction { alpha } | Nonlinearity::BoundedSine { alpha } => {
                alpha
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Nonlinearity::None => 0.0,
            Nonlinearity::BoundedInteraction { alpha } => alpha * x[0] * x[1],
            Nonlinearity::BoundedSine { alpha } => alpha * x[0].sin(),
        }
    }

    /// Bound on `|g(x)|/|α|` given the feature bound.
    fn unit_bound(&self, bx: f64) -> f64 {
        match self {
            Nonlinearity::None => 0.0,
            Nonlinearity::BoundedInteraction { .. } => bx * bx,
            Nonlinearity::BoundedSine { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    beta_star: DVector<f64>,
    nonlinearity: Nonlinearity,
    noise_halfwidth: f64,
    design: DesignSpec,
}

impl ModelSpec {
    pub fn new(
        beta_star: DVector<f64>,
        nonlinearity: Nonlinearity,
        noise_halfwidth: f64,
        design: DesignSpec,
    ) -> Result<Self> {
        if beta_star.len() != design.p() {
            return Err(Error::DimensionMismatch {
                expected: design.p(),
                found: beta_star.len(),
            });
        }
        if beta_star.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("beta_star must be finite"));
        }
        if !(noise_halfwidth >= 0.0 && noise_halfwidth.is_finite()) {
            return Err(Error::invalid(
                "noise half-width must be finite and nonnegative",
            ));
        }
        if !nonlinearity.alpha().is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        if matches!(nonlinearity, Nonlinearity::BoundedInteraction { .. }) && design.p() < 2 {
            return Err(Error::invalid("the interaction term needs p >= 2"));
        }
        Ok(ModelSpec {
            beta_star,
            nonlinearity,
            noise_halfwidth,
            design,
        })
    }

    /// `β*_j = magnitude` on the first `s_star` coordinates.
    pub fn sparse(
        design: DesignSpec,
        s_star: usize,
        magnitude: f64,
        nonlinearity: Nonlinearity,
        noise_halfwidth: f64,
    ) -> Result<Self> {
        let p = design.p();
        if s_star > p {
            return Err(Error::invalid(format!("s_star = {s_star} exceeds p = {p}")));
        }
        let beta = DVector::from_fn(p, |j, _| if j < s_star { magnitude } else { 0.0 });
        Self::new(beta, nonlinearity, noise_halfwidth, design)
    }

    pub fn beta_star(&self) -> &DVector<f64> {
        &self.beta_star
    }

    pub fn design(&self) -> &DesignSpec {
        &self.design
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn noise_halfwidth(&self) -> f64 {
        self.noise_halfwidth
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.beta_star.len())
            .filter(|&j| self.beta_star[j] != 0.0)
            .collect()
    }

    pub fn s_star(&self) -> usize {
        self.support().len()
    }

    pub fn is_well_specified(&self) -> bool {
        self.nonlinearity.alpha() == 0.0
    }

    pub fn f_star(&self, x: &[f64]) -> f64 {
        let lin: f64 = x
            .iter()
            .zip(self.beta_star.iter())
            .map(|(a, b)| a * b)
            .sum();
        lin + self.nonlinearity.eval(x)
    }

    pub fn feature_bound(&self) -> f64 {
        self.design.feature_bound()
    }

    /// `B_Y = ‖β*‖₁B_X + |α|·g_max + h`.
    pub fn label_bound(&self) -> f64 {
        let bx = self.feature_bound();
        linalg::l1_norm(&self.beta_star) * bx
            + self.nonlinearity.alpha().abs() * self.nonlinearity.unit_bound(bx)
            + self.noise_halfwidth
    }

    /// Exact `Σ`, `μ = E[f*(X)X]` and `E[f*(X)²]`.
    pub fn moments(&self) -> PopulationMoments {
        let sigma = self.design.population_covariance().into_matrix();
        let sigma_beta = &sigma * &self.beta_star;
        let lin_sq = self.beta_star.dot(&sigma_beta);
        let alpha = self.nonlinearity.alpha();
        let (g_x, g_sq) = match self.nonlinearity {
            Nonlinearity::None => (DVector::zeros(self.design.p()), 0.0),
            Nonlinearity::BoundedInteraction { .. } => {
                let a = self.design.normalized.row(0);
                let b = self.design.normalized.row(1);
                let ab = a.dot(&b);
                let cross: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * x * y * y).sum();
                (
                    DVector::zeros(self.design.p()),
                    1.0 + 2.0 * ab * ab - 2.0 * cross,
                )
            }
            Nonlinearity::BoundedSine { .. } => sine_moments(&self.design),
        };
        let mu = &sigma_beta + alpha * &g_x;
        let f_sq = lin_sq + 2.0 * alpha * self.beta_star.dot(&g_x) + alpha * alpha * g_sq;
        PopulationMoments { sigma, mu, f_sq }
    }
}

/// `(E[sin(X₁)X], E[sin²(X₁)])`.
fn sine_moments(design: &DesignSpec) -> (DVector<f64>, f64) {
    let w = &design.normalized;
    let p = design.p();
    let support: Vec<usize> = (0..design.factor_count())
        .filter(|&i| w[(0, i)] != 0.0)
        .collect();
    // E[sin(X₁) u_l] for l in the support; other factors are independent.
    let mut e_su = vec![0.0; support.len()];
    let mut e_ss = 0.0;
    if support.len() <= MAX_EXACT_FACTORS {
        let count = 1usize << support.len();
        for mask in 0..count {
            let signs: Vec<f64> = (0..support.len())
                .map(|i| if mask & (1 << i) != 0 { 1.0 } else { -1.0 })
                .collect();
            let x0: f64 = support
                .iter()
                .zip(&signs)
                .map(|(&i, s)| w[(0, i)] * s)
                .sum();
            let sx = x0.sin();
            for (acc, s) in e_su.iter_mut().zip(&signs) {
                *acc += sx * s;
            }
            e_ss += sx * sx;
        }
        for acc in e_su.iter_mut() {
            *acc /= count as f64;
        }
        e_ss /= count as f64;
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(MOMENT_MC_SEED);
        for _ in 0..MOMENT_MC_DRAWS {
            let signs: Vec<f64> = support
                .iter()
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let x0: f64 = support
                .iter()
                .zip(&signs)
                .map(|(&i, s)| w[(0, i)] * s)
                .sum();
            let sx = x0.sin();
            for (acc, s) in e_su.iter_mut().zip(&signs) {
                *acc += sx * s;
            }
            e_ss += sx * sx;
        }
        for acc in e_su.iter_mut() {
            *acc /= MOMENT_MC_DRAWS as f64;
        }
        e_ss /= MOMENT_MC_DRAWS as f64;
    }
    let g_x = DVector::from_fn(p, |k, _| {
        support.iter().zip(&e_su).map(|(&i, e)| w[(k, i)] * e).sum()
    });
    (g_x, e_ss)
}

/// Second-order population quantities of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMoments {
    pub sigma: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub f_sq: f64,
}

impl PopulationMoments {
    /// `E[(Xᵀβ − f*(X))²] = E[f*²] − 2μᵀβ + βᵀΣβ`.
    pub fn excess_risk(&self, beta: &DVector<f64>) -> f64 {
        (self.f_sq - 2.0 * self.mu.dot(beta) + linalg::quad_form(&self.sigma, beta)).max(0.0)
    }

    /// Minimizer of the excess risk over vectors supported on `support`.
    pub fn refit(&self, support: &[usize]) -> Result<DVector<f64>> {
        let p = self.mu.len();
        let mut beta = DVector::zeros(p);
        if support.is_empty() {
            return Ok(beta);
        }
        let s = support.len();
        let sub = DMatrix::from_fn(s, s, |a, b| self.sigma[(support[a], support[b])]);
        let rhs = DVector::from_fn(s, |a, _| self.mu[support[a]]);
        let sol = sub
            .cholesky()
            .ok_or_else(|| Error::invalid("population covariance is singular on the support"))?
            .solve(&rhs);
        for (a, &k) in support.iter().enumerate() {
            beta[k] = sol[a];
        }
        Ok(beta)
    }
}
