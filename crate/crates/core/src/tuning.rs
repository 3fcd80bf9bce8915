//! Closed-form tuning parameters and concentration levels.
//!
//! Every λ returned here is the smallest value admitted by the matching
//! risk bound. Logarithms are natural.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub bx: f64,
    pub by: f64,
    pub n: usize,
    pub m: usize,
    pub n_total: usize,
    pub p: usize,
    pub delta: f64,
    pub sigma_inv_norm: f64,
    pub gamma: f64,
    /// `L_Y = (E[Y²])^{1/2}`. When set, the variance term of the noise
    /// quantiles uses `L_Y·B_X` instead of `B_Y`.
    pub label_rms: Option<f64>,
}

impl BoundInputs {
    pub fn new(bx: f64, by: f64, n: usize, n_total: usize, p: usize, delta: f64) -> Result<Self> {
        let inputs = BoundInputs {
            bx,
            by,
            n,
            m: n_total.saturating_sub(n),
            n_total,
            p,
            delta,
            sigma_inv_norm: 1.0,
            gamma: 2.0,
            label_rms: None,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn with_sigma_inv_norm(mut self, s: f64) -> Self {
        self.sigma_inv_norm = s;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bx >= 0.0 && self.by >= 0.0 && self.bx.is_finite() && self.by.is_finite()) {
            return Err(Error::invalid("B_X and B_Y must be finite and nonnegative"));
        }
        if self.n == 0 || self.p == 0 {
            return Err(Error::invalid("n and p must be positive"));
        }
        if self.n + self.m != self.n_total {
            return Err(Error::invalid(format!(
                "n + m = {} + {} differs from N = {}",
                self.n, self.m, self.n_total
            )));
        }
        check_delta(self.delta)?;
        if !(self.gamma > 1.0) {
            return Err(Error::invalid(format!(
                "gamma must exceed 1, got {}",
                self.gamma
            )));
        }
        if !(self.sigma_inv_norm >= 0.0) {
            return Err(Error::invalid("‖Σ⁻¹‖ must be nonnegative"));
        }
        Ok(())
    }

    pub fn n_star(&self) -> usize {
        self.n.min(self.m)
    }

    /// `c_γ = (γ + 1)/(γ − 1)`.
    pub fn c_gamma(&self) -> f64 {
        (self.gamma + 1.0) / (self.gamma - 1.0)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Two-sided Bernstein deviation of a mean of `N` independent centered
/// variables bounded by `b` with average variance `σ_N²`.
///
/// ```
/// let q = pllasso::tuning::bernstein_quantile(1.0, 2.0, 100, 0.05).unwrap();
/// assert!((q - 0.27187).abs() < 1e-4);
/// ```
pub fn bernstein_quantile(sigma: f64, b: f64, n_total: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n_total == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let nf = n_total as f64;
    let root = (2.0 * (2.0 / delta).ln() / nf).sqrt();
    Ok(sigma * root * (1.0 + b / (6.0 * nf * sigma) * root))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `(1/n)ΣYᵢXᵢ − E[YX]`.
    Zeta1,
    /// Labeled moment minus its unlabeled counterpart.
    Zeta,
    /// Labeled moment minus its full-sample counterpart.
    ZetaBar,
}

/// Level below which `‖ζ‖_∞` falls with probability at least `1 − δ`.
pub fn noise_quantile(kind: NoiseKind, inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let (count, coef) = match kind {
        NoiseKind::Zeta1 => (inputs.n, 1.0 / 3.0),
        NoiseKind::Zeta => {
            if inputs.m == 0 {
                return Err(Error::EmptyScope(crate::data::Scope::Unlabeled));
            }
            (inputs.n_star(), 1.0 / 3.0)
        }
        NoiseKind::ZetaBar => (inputs.n, 0.5),
    };
    let root = ((2.0 * inputs.p as f64 / inputs.delta).ln() / count as f64).sqrt();
    let variance = inputs.label_rms.map_or(inputs.by, |ly| ly * inputs.bx);
    Ok(2.0 * variance * root + 2.0 * inputs.by * coef * inputs.bx * root * root)
}

/// Level for the deviation of the full-sample Gram matrix acting on the
/// population coefficients.
pub fn zeta2_quantile(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let nf = inputs.n_total as f64;
    let l = (6.0 * inputs.p as f64 / inputs.delta).ln();
    let lead = inputs.bx * inputs.by * (2.0 * l / nf).sqrt();
    let corr = inputs.bx / 3.0 * (2.0 * inputs.p as f64 * inputs.sigma_inv_norm * l / nf).sqrt();
    Ok(lead * (1.0 + corr))
}

/// λ for the transductive lasso: `γ` times the `ζ` quantile.
///
/// ```
/// use pllasso::tuning::{lambda_transductive, BoundInputs};
/// let inputs = BoundInputs::new(1.0, 1.0, 100, 200, 10, 0.1).unwrap();
/// assert!((lambda_transductive(&inputs).unwrap() - 0.99137).abs() < 1e-4);
/// ```
pub fn lambda_transductive(inputs: &BoundInputs) -> Result<f64> {
    Ok(inputs.gamma * noise_quantile(NoiseKind::Zeta, inputs)?)
}

/// λ for the semi-supervised lasso under a well-specified linear model.
pub fn lambda_semisup_wellspec(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let root = ((4.0 * inputs.p as f64 / inputs.delta).ln() / inputs.n as f64).sqrt();
    Ok(4.0 * inputs.by * root * (1.0 + inputs.bx / 2.0 * root))
}

fn misspec_form(bx: f64, by: f64, n: usize, log_arg: f64) -> f64 {
    let root = (log_arg.ln() / n as f64).sqrt();
    8.0 * bx * by * root * (1.0 + bx / 3.0 * root)
}

/// λ for the semi-supervised lasso without a linearity assumption.
pub fn lambda_semisup_misspec(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(misspec_form(
        inputs.bx,
        inputs.by,
        inputs.n,
        6.0 * inputs.p as f64 / inputs.delta,
    ))
}

/// [`lambda_semisup_misspec`] at `δ = N⁻²`.
pub fn lambda_expectation(bx: f64, by: f64, n: usize, n_total: usize, p: usize) -> Result<f64> {
    if n == 0 || p == 0 || n_total < 2 {
        return Err(Error::invalid("need n ≥ 1, p ≥ 1 and N ≥ 2"));
    }
    let nf = n_total as f64;
    Ok(misspec_form(bx, by, n, 6.0 * p as f64 * nf * nf))
}

/// `⌈18 B_X² p ‖Σ⁻¹‖ log(3p/δ)⌉`.
pub fn min_overall_sample(p: usize, bx: f64, sigma_inv_norm: f64, delta: f64) -> Result<u64> {
    check_delta(delta)?;
    let pf = p as f64;
    Ok((18.0 * bx * bx * pf * sigma_inv_norm * (3.0 * pf / delta).ln()).ceil() as u64)
}

/// `16 s★ B_X² √(2 log(4p²/δ)) ≤ κ̄ √N`.
pub fn wellspec_n_condition(
    s_star: usize,
    bx: f64,
    kappa_bar: f64,
    p: usize,
    delta: f64,
    n_total: usize,
) -> Result<bool> {
    check_delta(delta)?;
    let pf = p as f64;
    let lhs = 16.0 * s_star as f64 * bx * bx * (2.0 * (4.0 * pf * pf / delta).ln()).sqrt();
    Ok(lhs <= kappa_bar * (n_total as f64).sqrt())
}

/// `B_Y² N / (2nλ)`, an a priori bound on `‖β̂‖₁` for the semi-supervised
/// lasso.
pub fn l1_budget(by: f64, n: usize, n_total: usize, lambda: f64) -> f64 {
    by * by * n_total as f64 / (2.0 * n as f64 * lambda)
}

/// Right-hand side minus left-hand side of the cone inequality
///
/// `2μγ⁻¹(‖β−β′‖₁ + γ‖β‖₁ − γ‖β′‖₁) − (β−β′)ᵀM(β−β′)
///   ≤ 4μ‖β_Jᶜ‖₁ + (γ+1)²μ²|J| / (γ² κ_M(J, c_γ))`.
///
/// The support term is dropped when `J` is empty.
pub fn lemma2_gap(
    mu: f64,
    gamma: f64,
    m: &DMatrix<f64>,
    support: &[usize],
    beta: &DVector<f64>,
    beta_prime: &DVector<f64>,
) -> Result<f64> {
    if !(mu > 0.0 && gamma > 1.0) {
        return Err(Error::invalid("need mu > 0 and gamma > 1"));
    }
    let p = m.nrows();
    if beta.len() != p || beta_prime.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: if beta.len() != p {
                beta.len()
            } else {
                beta_prime.len()
            },
        });
    }
    let u = beta - beta_prime;
    let lhs = 2.0 * mu / gamma
        * (linalg::l1_norm(&u) + gamma * linalg::l1_norm(beta)
            - gamma * linalg::l1_norm(beta_prime))
        - linalg::quad_form(m, &u);
    let mut in_j = vec![false; p];
    for &k in support {
        if k >= p {
            return Err(Error::invalid(format!("support index {k} out of range")));
        }
        in_j[k] = true;
    }
    let tail: f64 = (0..p).filter(|&k| !in_j[k]).map(|k| beta[k].abs()).sum();
    let mut rhs = 4.0 * mu * tail;
    if !support.is_empty() {
        let c_gamma = (gamma + 1.0) / (gamma - 1.0);
        let kappa = geometry::compatibility(m, support, c_gamma)?.value;
        let size = in_j.iter().filter(|&&b| b).count() as f64;
        let term = (gamma + 1.0).powi(2) * mu * mu * size / (gamma * gamma * kappa);
        rhs += if term.is_nan() { f64::INFINITY } else { term };
    }
    Ok(rhs - lhs)
}
