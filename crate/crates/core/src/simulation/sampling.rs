use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Bounds, GramMatrix, PartiallyLabeledDataset, Scope};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DesignSpec, ModelSpec};

/// Draws `N` feature rows, labeling the first `n`.
///
/// Row `i` consumes its factor draws and then, when labeled, one noise draw.
/// The attached bounds are the model's analytic `B_X` and `B_Y`.
pub fn sample_dataset(
    model: &ModelSpec,
    n: usize,
    n_total: usize,
    seed: u64,
) -> Result<PartiallyLabeledDataset> {
    if n == 0 || n > n_total {
        return Err(Error::invalid(format!(
            "need 1 ≤ n ≤ N, got n = {n}, N = {n_total}"
        )));
    }
    let design = model.design();
    let p = design.p();
    let h = model.noise_halfwidth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n_total, p);
    let mut y = DVector::zeros(n);
    for i in 0..n_total {
        let row = design.sample_row(&mut rng);
        x.row_mut(i).copy_from(&row.transpose());
        if i < n {
            let noise = if h > 0.0 {
                rng.random_range(-h..=h)
            } else {
                0.0
            };
            y[i] = model.f_star(row.as_slice()) + noise;
        }
    }
    let bounds = Bounds {
        bx: model.feature_bound(),
        by: model.label_bound(),
        inferred: false,
    };
    PartiallyLabeledDataset::new(x, y, Some(bounds))
}

pub fn population_covariance(design: &DesignSpec) -> GramMatrix {
    design.population_covariance()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    /// Zero when `value` is exact.
    pub std_error: f64,
}

/// `E[(Xᵀβ − f*(X))²]`: exact for linear models, otherwise a Monte Carlo
/// average over `mc_points` fresh feature draws.
pub fn excess_risk(
    beta: &DVector<f64>,
    model: &ModelSpec,
    mc_points: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    let p = model.design().p();
    if beta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: beta.len(),
        });
    }
    if model.is_well_specified() {
        let diff = beta - model.beta_star();
        let sigma = model.design().population_covariance();
        return Ok(RiskEstimate {
            value: linalg::quad_form(sigma.matrix(), &diff).max(0.0),
            std_error: 0.0,
        });
    }
    if mc_points < 2 {
        return Err(Error::invalid("mc_points must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..mc_points {
        let x = model.design().sample_row(&mut rng);
        let r = x.dot(beta) - model.f_star(x.as_slice());
        let v = r * r;
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (mc_points - 1) as f64;
    Ok(RiskEstimate {
        value: mean,
        std_error: (var / mc_points as f64).sqrt(),
    })
}

/// `(1/m) Σ_unlabeled (xᵀβ − f*(x))²`.
pub fn transductive_risk(
    beta: &DVector<f64>,
    model: &ModelSpec,
    unlabeled_features: &DMatrix<f64>,
) -> Result<f64> {
    let m = unlabeled_features.nrows();
    if m == 0 {
        return Err(Error::EmptyScope(Scope::Unlabeled));
    }
    if unlabeled_features.ncols() != beta.len() {
        return Err(Error::DimensionMismatch {
            expected: unlabeled_features.ncols(),
            found: beta.len(),
        });
    }
    let fitted = unlabeled_features * beta;
    let mut total = 0.0;
    let mut row = vec![0.0; beta.len()];
    for i in 0..m {
        for (j, r) in row.iter_mut().enumerate() {
            *r = unlabeled_features[(i, j)];
        }
        let e = fitted[i] - model.f_star(&row);
        total += e * e;
    }
    Ok(total / m as f64)
}
