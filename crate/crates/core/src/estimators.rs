//! Problem assembly for each lasso variant.
//!
//! | variant                  | `G`          | `b`                               |
//! |--------------------------|--------------|-----------------------------------|
//! | `Supervised`             | `Σ̂_lab`      | `(1/n) X_labᵀ Y`                  |
//! | `Transductive`           | `Σ̂_unlab`    | `(1/n) X_labᵀ Y`                  |
//! | `TransductiveProjected`  | `Σ̂_unlab`    | `Π_unlab (1/n) X_labᵀ Y`          |
//! | `SemiSupervised`         | `Σ̂_all`      | `(1/n) X_labᵀ Y`                  |
//! | `KnownSigma(Σ)`          | `Σ`          | `(1/n) X_labᵀ Y`                  |
//! | `Alquier`                | `Σ̂_unlab`    | `Σ̂_unlab Σ̂_lab⁺ (1/n) X_labᵀ Y`   |

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::data::{gram, labeled_moment, GramMatrix, PartiallyLabeledDataset, Scope};
use crate::error::{Error, Result};
use crate::linalg;
use crate::solver::PenalizedQuadraticProblem;

/// Eigenvalues below `DEFAULT_RANK_TOL * λ_max` are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorVariant {
    Supervised,
    Transductive,
    TransductiveProjected,
    SemiSupervised,
    KnownSigma(GramMatrix),
    Alquier,
}

impl EstimatorVariant {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorVariant::Supervised => "supervised",
            EstimatorVariant::Transductive => "transductive",
            EstimatorVariant::TransductiveProjected => "transductive_projected",
            EstimatorVariant::SemiSupervised => "semisupervised",
            EstimatorVariant::KnownSigma(_) => "known_sigma",
            EstimatorVariant::Alquier => "alquier",
        }
    }

    pub fn needs_unlabeled(&self) -> bool {
        matches!(
            self,
            EstimatorVariant::Transductive
                | EstimatorVariant::TransductiveProjected
                | EstimatorVariant::Alquier
        )
    }
}

impl fmt::Display for EstimatorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses every variant except `known_sigma`, which needs a matrix.
impl FromStr for EstimatorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" | "lasso" => Ok(EstimatorVariant::Supervised),
            "transductive" => Ok(EstimatorVariant::Transductive),
            "transductive_projected" => Ok(EstimatorVariant::TransductiveProjected),
            "semisupervised" | "semi_supervised" => Ok(EstimatorVariant::SemiSupervised),
            "alquier" => Ok(EstimatorVariant::Alquier),
            "known_sigma" => Err(Error::invalid(
                "known_sigma needs a population covariance; construct it directly",
            )),
            other => Err(Error::invalid(format!(
                "unknown estimator variant {other:?}"
            ))),
        }
    }
}

pub fn build_problem(
    d: &PartiallyLabeledDataset,
    v: &EstimatorVariant,
    lambda: f64,
) -> Result<PenalizedQuadraticProblem> {
    if v.needs_unlabeled() && d.m() == 0 {
        return Err(Error::EmptyScope(Scope::Unlabeled));
    }
    let b = labeled_moment(d);
    let (g, b) = match v {
        EstimatorVariant::Supervised => (gram(d, Scope::Labeled)?.into_matrix(), b),
        EstimatorVariant::Transductive => (gram(d, Scope::Unlabeled)?.into_matrix(), b),
        EstimatorVariant::TransductiveProjected => {
            let g = gram(d, Scope::Unlabeled)?.into_matrix();
            let proj = range_projector(&g, DEFAULT_RANK_TOL)?;
            let b = &proj * b;
            (g, b)
        }
        EstimatorVariant::SemiSupervised => (gram(d, Scope::All)?.into_matrix(), b),
        EstimatorVariant::KnownSigma(sigma) => {
            if sigma.dim() != d.p() {
                return Err(Error::DimensionMismatch {
                    expected: d.p(),
                    found: sigma.dim(),
                });
            }
            (sigma.matrix().clone(), b)
        }
        EstimatorVariant::Alquier => {
            let g = gram(d, Scope::Unlabeled)?.into_matrix();
            let lab = gram(d, Scope::Labeled)?.into_matrix();
            let lab_pinv = pseudo_inverse(&lab, DEFAULT_RANK_TOL)?;
            let b = &g * (lab_pinv * b);
            (g, b)
        }
    };
    PenalizedQuadraticProblem::new(g, b, lambda)
}

/// Spectral Moore–Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn pseudo_inverse(m: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    linalg::ensure_symmetric(m)?;
    Ok(linalg::spectral_map(m, rank_tol, |ev| 1.0 / ev))
}

/// Orthogonal projector onto the range of a symmetric PSD matrix.
pub fn range_projector(m: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    linalg::ensure_symmetric(m)?;
    Ok(linalg::spectral_map(m, rank_tol, |_| 1.0))
}
