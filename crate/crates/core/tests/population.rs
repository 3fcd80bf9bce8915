//! Checks against exactly enumerated populations.

use nalgebra::{DMatrix, DVector};
use pllasso::data::{Bounds, PartiallyLabeledDataset};
use pllasso::estimators::{build_problem, EstimatorVariant};
use pllasso::linalg;
use pllasso::model::{DesignSpec, ModelSpec, Nonlinearity};
use pllasso::solver;

/// Every factor outcome once, labeled without noise, so labeled averages
/// are population expectations.
fn enumerated(model: &ModelSpec) -> PartiallyLabeledDataset {
    let d = model.design();
    let k = d.factor_count();
    let rows = 1usize << k;
    let mut x = DMatrix::zeros(rows, d.p());
    let mut y = DVector::zeros(rows);
    for mask in 0..rows {
        let u = DVector::from_fn(k, |i, _| if mask & (1 << i) != 0 { 1.0 } else { -1.0 });
        let row = d.normalized_loadings() * u;
        y[mask] = model.f_star(row.as_slice());
        x.row_mut(mask).copy_from(&row.transpose());
    }
    let bounds = Bounds {
        bx: model.feature_bound(),
        by: model.label_bound(),
        inferred: false,
    };
    PartiallyLabeledDataset::new(x, y, Some(bounds)).unwrap()
}

#[test]
fn energy_of_population_minimizer_is_bounded() {
    let designs = [
        DesignSpec::identity(5).unwrap(),
        DesignSpec::shared(5, 3).unwrap(),
    ];
    let nonlinearities = [
        Nonlinearity::None,
        Nonlinearity::BoundedInteraction { alpha: 0.6 },
        Nonlinearity::BoundedSine { alpha: -0.8 },
    ];
    for design in designs {
        for nl in nonlinearities {
            let beta = DVector::from_vec(vec![0.9, -0.4, 0.0, 0.7, 0.0]);
            let model = ModelSpec::new(beta, nl, 0.0, design.clone()).unwrap();
            let data = enumerated(&model);
            let moments = model.moments();
            let b = pllasso::data::labeled_moment(&data);
            assert!((&b - &moments.mu).amax() < 1e-12);

            let sigma = design.population_covariance();
            let variant = EstimatorVariant::KnownSigma(sigma.clone());
            let by2 = model.label_bound().powi(2);
            for lambda in [1e-6, 1e-3, 0.05, 0.3, 2.0] {
                let problem = build_problem(&data, &variant, lambda).unwrap();
                let sol = solver::solve(&problem, 1e-12, solver::DEFAULT_MAX_SWEEPS).unwrap();
                let energy = linalg::quad_form(sigma.matrix(), &sol.beta());
                assert!(energy <= by2 + 1e-9, "{nl:?} λ={lambda}: {energy} > {by2}");
                // The sharper form: energy never exceeds E[f*(X)²].
                assert!(energy <= moments.f_sq + 1e-9);
            }
        }
    }
}

#[test]
fn interaction_leaves_linear_part_identified() {
    let model = ModelSpec::sparse(
        DesignSpec::shared(4, 2).unwrap(),
        2,
        1.0,
        Nonlinearity::BoundedInteraction { alpha: 0.5 },
        0.0,
    )
    .unwrap();
    let moments = model.moments();
    let ls = moments.refit(&[0, 1, 2, 3]).unwrap();
    assert!((ls - model.beta_star()).amax() < 1e-12);
    assert!(moments.excess_risk(model.beta_star()) > 0.0);
}
