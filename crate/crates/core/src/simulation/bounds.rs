use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::{gram, PartiallyLabeledDataset, Scope};
use crate::error::{Error, Result};
use crate::geometry::{self, ConeKind};
use crate::linalg;
use crate::model::{ModelSpec, PopulationMoments};
use crate::simulation::sampling::transductive_risk;
use crate::tuning::{self, BoundInputs};

/// Oracle inequalities whose right-hand sides can be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Transductive risk of the transductive lasso.
    T1,
    /// Well-specified semi-supervised bound through the empirical constants.
    T2a,
    /// Well-specified semi-supervised bound through the population constant.
    T2b,
    /// Semi-supervised oracle inequality on a fixed support.
    T3,
    /// The previous bound with the constant replaced by `‖Σ⁻¹‖`.
    Cor1,
    /// Expected excess risk with `λ` tuned at level `N⁻²`.
    T4,
}

impl Theorem {
    pub fn name(&self) -> &'static str {
        match self {
            Theorem::T1 => "T1",
            Theorem::T2a => "T2_a",
            Theorem::T2b => "T2_b",
            Theorem::T3 => "T3",
            Theorem::Cor1 => "Cor1",
            Theorem::T4 => "T4",
        }
    }

    /// Required `λ` at the given inputs (before any slack).
    pub fn lambda(&self, inputs: &BoundInputs) -> Result<f64> {
        match self {
            Theorem::T1 => tuning::lambda_transductive(inputs),
            Theorem::T2a | Theorem::T2b => tuning::lambda_semisup_wellspec(inputs),
            Theorem::T3 | Theorem::Cor1 => tuning::lambda_semisup_misspec(inputs),
            Theorem::T4 => {
                tuning::lambda_expectation(inputs.bx, inputs.by, inputs.n, inputs.n_total, inputs.p)
            }
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "t1" => Ok(Theorem::T1),
            "t2" | "t2_a" | "t2a" => Ok(Theorem::T2a),
            "t2_b" | "t2b" => Ok(Theorem::T2b),
            "t3" => Ok(Theorem::T3),
            "cor1" => Ok(Theorem::Cor1),
            "t4" => Ok(Theorem::T4),
            _ => Err(Error::invalid(format!(
                "unknown theorem {s:?} (expected T1, T2_a, T2_b, T3, Cor1 or T4)"
            ))),
        }
    }
}

/// A comparison point `(β, J)` for the infimum in a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub beta: Vec<f64>,
    /// 0-based, sorted, nonempty.
    pub support: Vec<usize>,
}

impl Candidate {
    fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    fn off_support_l1(&self) -> f64 {
        self.beta
            .iter()
            .enumerate()
            .filter(|(k, _)| self.support.binary_search(k).is_err())
            .map(|(_, b)| b.abs())
            .sum()
    }
}

fn clip_l1(mut beta: DVector<f64>, cap: Option<f64>) -> DVector<f64> {
    if let Some(cap) = cap {
        let norm = linalg::l1_norm(&beta);
        if norm > cap && norm > 0.0 {
            beta *= cap / norm;
        }
    }
    beta
}

/// `β*` and population refits on `J*` and on its top-`k` subsets, plus the
/// full population least-squares vector on `J*`. Refits are scaled into
/// the ℓ1 ball of radius `l1_cap` when one is given.
pub fn candidates(
    model: &ModelSpec,
    moments: &PopulationMoments,
    l1_cap: Option<f64>,
) -> Result<Vec<Candidate>> {
    let j_star = model.support();
    if j_star.is_empty() {
        return Err(Error::invalid("the model needs a nonempty support"));
    }
    let beta_star = model.beta_star();
    let make = |label: String, beta: DVector<f64>, support: Vec<usize>| Candidate {
        label,
        beta: beta.as_slice().to_vec(),
        support,
    };
    let mut out = vec![
        make("beta_star".into(), beta_star.clone(), j_star.clone()),
        make(
            "refit".into(),
            clip_l1(moments.refit(&j_star)?, l1_cap),
            j_star.clone(),
        ),
    ];
    let mut order = j_star.clone();
    order.sort_by(|&a, &b| {
        beta_star[b]
            .abs()
            .total_cmp(&beta_star[a].abs())
            .then(a.cmp(&b))
    });
    for k in 1..j_star.len() {
        let mut sup = order[..k].to_vec();
        sup.sort_unstable();
        out.push(make(
            format!("beta_star_top{k}"),
            beta_star.clone(),
            sup.clone(),
        ));
        out.push(make(
            format!("refit_top{k}"),
            clip_l1(moments.refit(&sup)?, l1_cap),
            sup,
        ));
    }
    let all: Vec<usize> = (0..beta_star.len()).collect();
    if let Ok(ls) = moments.refit(&all) {
        out.push(make("least_squares".into(), clip_l1(ls, l1_cap), j_star));
    }
    Ok(out)
}

/// Inputs for [`oracle_rhs`]. `dataset` is needed by the bounds that use
/// empirical constants or the transductive risk.
#[derive(Debug, Clone, Copy)]
pub struct RhsContext<'a> {
    pub model: &'a ModelSpec,
    pub moments: &'a PopulationMoments,
    pub dataset: Option<&'a PartiallyLabeledDataset>,
    pub n: usize,
    pub n_total: usize,
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
    pub candidates: &'a [Candidate],
}

impl RhsContext<'_> {
    pub fn bound_inputs(&self) -> Result<BoundInputs> {
        Ok(BoundInputs::new(
            self.model.feature_bound(),
            self.model.label_bound(),
            self.n,
            self.n_total,
            self.model.design().p(),
            self.delta,
        )?
        .with_sigma_inv_norm(self.model.design().sigma_inv_norm())
        .with_gamma(self.gamma))
    }

    fn dataset(&self, theorem: Theorem) -> Result<&PartiallyLabeledDataset> {
        let d = self
            .dataset
            .ok_or_else(|| Error::invalid(format!("{theorem} needs a dataset")))?;
        if d.n() != self.n || d.n_total() != self.n_total {
            return Err(Error::invalid("dataset sizes disagree with the context"));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhsValue {
    pub value: f64,
    pub candidate: Candidate,
    pub cone_constant: Option<f64>,
    pub cone_kind: Option<ConeKind>,
}

fn require_lambda(theorem: Theorem, lambda: f64, inputs: &BoundInputs) -> Result<()> {
    let need = theorem.lambda(inputs)?;
    if lambda < need * (1.0 - 1e-12) {
        return Err(Error::Precondition(format!(
            "{theorem} needs lambda ≥ {need:.6e}, got {lambda:.6e}"
        )));
    }
    Ok(())
}

fn require_well_specified(theorem: Theorem, model: &ModelSpec) -> Result<()> {
    if !model.is_well_specified() {
        return Err(Error::Precondition(format!(
            "{theorem} needs a linear regression function"
        )));
    }
    Ok(())
}

fn require_overall_sample(theorem: Theorem, inputs: &BoundInputs, log_arg: f64) -> Result<()> {
    let need =
        18.0 * inputs.bx * inputs.bx * inputs.p as f64 * inputs.sigma_inv_norm * log_arg.ln();
    if (inputs.n_total as f64) < need {
        return Err(Error::Precondition(format!(
            "{theorem} needs N ≥ {:.0}, got N = {}",
            need.ceil(),
            inputs.n_total
        )));
    }
    Ok(())
}

fn best<'c>(
    cands: &'c [Candidate],
    mut eval: impl FnMut(&Candidate) -> Result<(f64, Option<f64>)>,
) -> Result<(f64, &'c Candidate, Option<f64>)> {
    let mut best: Option<(f64, &Candidate, Option<f64>)> = None;
    for c in cands {
        if c.support.is_empty() {
            continue;
        }
        let (v, kappa) = eval(c)?;
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, c, kappa));
        }
    }
    best.ok_or_else(|| Error::invalid("no usable candidate"))
}

fn kappa_term(coef: f64, kappa: f64) -> f64 {
    if kappa > 0.0 {
        coef / kappa
    } else {
        f64::INFINITY
    }
}

/// Smallest right-hand side of `theorem` over the candidates in `ctx`.
///
/// Each bound's preconditions on `λ`, `N` and the model are checked first,
/// so an inapplicable bound is an error rather than a number.
pub fn oracle_rhs(theorem: Theorem, ctx: &RhsContext<'_>) -> Result<RhsValue> {
    let inputs = ctx.bound_inputs()?;
    require_lambda(theorem, ctx.lambda, &inputs)?;
    let lam = ctx.lambda;
    let p = inputs.p;
    let pf = p as f64;
    let nf = ctx.n_total as f64;
    let j_star = ctx.model.support();
    let s = j_star.len() as f64;
    let star = Candidate {
        label: "beta_star".into(),
        beta: ctx.model.beta_star().as_slice().to_vec(),
        support: j_star.clone(),
    };
    let done = |value: f64, candidate: Candidate, kappa: Option<f64>, kind: Option<ConeKind>| {
        Ok(RhsValue {
            value,
            candidate,
            cone_constant: kappa,
            cone_kind: kind,
        })
    };

    match theorem {
        Theorem::T1 => {
            let d = ctx.dataset(theorem)?;
            let m = gram(d, Scope::Unlabeled)?;
            let unlab = d.unlabeled_features();
            let g = ctx.gamma;
            let c = inputs.c_gamma();
            let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
            let (v, cand, kappa) = best(ctx.candidates, |cand| {
                let kappa = match cache.get(&cand.support) {
                    Some(&k) => k,
                    None => {
                        let k = geometry::compatibility(m.matrix(), &cand.support, c)?.value;
                        cache.insert(cand.support.clone(), k);
                        k
                    }
                };
                let risk = transductive_risk(&cand.vector(), ctx.model, &unlab)?;
                let coef = (g + 1.0).powi(2) * lam * lam * cand.support.len() as f64 / (g * g);
                Ok((
                    risk + 4.0 * lam * cand.off_support_l1() + kappa_term(coef, kappa),
                    Some(kappa),
                ))
            })?;
            done(v, cand.clone(), kappa, Some(ConeKind::Compatibility))
        }
        Theorem::T2a => {
            require_well_specified(theorem, ctx.model)?;
            let d = ctx.dataset(theorem)?;
            let m = gram(d, Scope::All)?;
            let kbar = geometry::weak_compatibility(m.matrix(), &j_star, 3.0)?.value;
            let re =
                geometry::restricted_eigenvalue_over_supports(m.matrix(), j_star.len(), 3.0)?.value;
            let norm_sigma = linalg::lambda_max(&ctx.moments.sigma);
            let first = if kbar > 0.0 {
                (6.0 * lam * s / kbar).powi(2)
            } else {
                f64::INFINITY
            };
            let second = kappa_term(9.0 * norm_sigma * lam * lam * s, re * re);
            if first <= second {
                done(first, star, Some(kbar), Some(ConeKind::WeakCompatibility))
            } else {
                done(second, star, Some(re), Some(ConeKind::RestrictedEigenvalue))
            }
        }
        Theorem::T2b => {
            require_well_specified(theorem, ctx.model)?;
            let kbar = geometry::weak_compatibility(&ctx.moments.sigma, &j_star, 3.0)?.value;
            if !tuning::wellspec_n_condition(
                j_star.len(),
                inputs.bx,
                kbar,
                p,
                ctx.delta,
                ctx.n_total,
            )? {
                let pf2 = pf * pf;
                let lhs =
                    16.0 * s * inputs.bx.powi(2) * (2.0 * (4.0 * pf2 / ctx.delta).ln()).sqrt();
                return Err(Error::Precondition(format!(
                    "{theorem} needs 16s★B_X²√(2log(4p²/δ)) = {lhs:.4} ≤ κ̄√N = {:.4}",
                    kbar * nf.sqrt()
                )));
            }
            done(
                kappa_term(9.0 * lam * lam * s, kbar),
                star,
                Some(kbar),
                Some(ConeKind::WeakCompatibility),
            )
        }
        Theorem::T3 => {
            require_overall_sample(theorem, &inputs, 3.0 * pf / ctx.delta)?;
            let d = ctx.dataset(theorem)?;
            let m = gram(d, Scope::All)?;
            let kappa = geometry::compatibility(m.matrix(), &j_star, 3.0)?.value;
            let tail = kappa_term(9.0 * lam * lam * s / 2.0, kappa);
            let (v, cand, _) = best(ctx.candidates, |cand| {
                let fixed = Candidate {
                    support: j_star.clone(),
                    ..cand.clone()
                };
                Ok((
                    ctx.moments.excess_risk(&cand.vector())
                        + 4.0 * lam * fixed.off_support_l1()
                        + tail,
                    None,
                ))
            })?;
            let used = Candidate {
                support: j_star.clone(),
                ..cand.clone()
            };
            done(v, used, Some(kappa), Some(ConeKind::Compatibility))
        }
        Theorem::Cor1 | Theorem::T4 => {
            let log_arg = if theorem == Theorem::Cor1 {
                3.0 * pf / ctx.delta
            } else {
                3.0 * pf * nf * nf
            };
            require_overall_sample(theorem, &inputs, log_arg)?;
            let inv = inputs.sigma_inv_norm;
            let (v, cand, _) = best(ctx.candidates, |cand| {
                Ok((
                    ctx.moments.excess_risk(&cand.vector())
                        + 4.0 * lam * cand.off_support_l1()
                        + 27.0 * inv * lam * lam * cand.support.len() as f64 / 4.0,
                    None,
                ))
            })?;
            let mut value = v;
            if theorem == Theorem::T4 {
                let by2 = inputs.by * inputs.by;
                let l = (6.0 * pf * nf * nf).ln();
                value += 2.0 * by2 / (nf * nf) + by2 / (128.0 * inputs.n as f64 * l * l);
            }
            done(value, cand.clone(), None, None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DesignSpec, Nonlinearity};
    use crate::simulation::sample_dataset;

    fn ctx_parts(p: usize, s: usize, nl: Nonlinearity) -> (ModelSpec, PopulationMoments) {
        let model = ModelSpec::sparse(DesignSpec::identity(p).unwrap(), s, 1.0, nl, 0.5).unwrap();
        let mom = model.moments();
        (model, mom)
    }

    #[test]
    fn theorem_names_round_trip() {
        for t in [
            Theorem::T1,
            Theorem::T2a,
            Theorem::T2b,
            Theorem::T3,
            Theorem::Cor1,
            Theorem::T4,
        ] {
            assert_eq!(t.name().parse::<Theorem>().unwrap(), t);
        }
        assert!("T9".parse::<Theorem>().is_err());
    }

    #[test]
    fn candidate_list() {
        let (model, mom) = ctx_parts(6, 3, Nonlinearity::None);
        let c = candidates(&model, &mom, None).unwrap();
        let labels: Vec<&str> = c.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "beta_star",
                "refit",
                "beta_star_top1",
                "refit_top1",
                "beta_star_top2",
                "refit_top2",
                "least_squares"
            ]
        );
        assert!(c.iter().all(|c| !c.support.is_empty()));
        let clipped = candidates(&model, &mom, Some(1.5)).unwrap();
        assert!((clipped[1].beta.iter().map(|b| b.abs()).sum::<f64>() - 1.5).abs() < 1e-12);
        assert_eq!(clipped[0].beta, model.beta_star().as_slice());
    }

    #[test]
    fn t1_exact_candidate_value() {
        // With Σ̂_unlab = I the compatibility constant is 1 and β* has zero
        // transductive risk, so the β* term is 9λ²s★/4.
        let (model, mom) = ctx_parts(3, 3, Nonlinearity::None);
        let labeled = sample_dataset(&model, 4, 4, 0).unwrap();
        // Unlabeled rows: all eight sign vectors, so Σ̂_unlab = I exactly.
        let mut x = nalgebra::DMatrix::zeros(12, 3);
        for i in 0..12 {
            for j in 0..3 {
                x[(i, j)] = if i < 4 {
                    labeled.features()[(i, j)]
                } else if (i - 4) & (1 << j) != 0 {
                    1.0
                } else {
                    -1.0
                };
            }
        }
        let d =
            PartiallyLabeledDataset::new(x, labeled.labels().clone(), labeled.bounds()).unwrap();
        let g = gram(&d, Scope::Unlabeled).unwrap();
        assert!((g.matrix() - nalgebra::DMatrix::identity(3, 3)).amax() < 1e-15);
        let star = vec![Candidate {
            label: "beta_star".into(),
            beta: model.beta_star().as_slice().to_vec(),
            support: model.support(),
        }];
        let inputs = BoundInputs::new(1.0, model.label_bound(), 4, 12, 3, 0.1).unwrap();
        let lam = tuning::lambda_transductive(&inputs).unwrap().max(0.5);
        let ctx = RhsContext {
            model: &model,
            moments: &mom,
            dataset: Some(&d),
            n: 4,
            n_total: 12,
            lambda: lam,
            delta: 0.1,
            gamma: 2.0,
            candidates: &star,
        };
        let r = oracle_rhs(Theorem::T1, &ctx).unwrap();
        assert!((r.value - 9.0 * lam * lam * 3.0 / 4.0).abs() < 1e-9);
        assert!((r.cone_constant.unwrap() - 1.0).abs() < 1e-9);
        // Below the required level the bound does not apply.
        let low = RhsContext {
            lambda: lam * 0.5,
            ..ctx
        };
        if lam * 0.5 < tuning::lambda_transductive(&inputs).unwrap() {
            assert!(matches!(
                oracle_rhs(Theorem::T1, &low),
                Err(Error::Precondition(_))
            ));
        }
    }

    #[test]
    fn t2b_and_preconditions() {
        let (model, mom) = ctx_parts(4, 1, Nonlinearity::None);
        let cands = candidates(&model, &mom, None).unwrap();
        let n_total = 4_000_000;
        let inputs = BoundInputs::new(1.0, model.label_bound(), 100, n_total, 4, 0.1).unwrap();
        let lam = tuning::lambda_semisup_wellspec(&inputs).unwrap();
        let ctx = RhsContext {
            model: &model,
            moments: &mom,
            dataset: None,
            n: 100,
            n_total,
            lambda: lam,
            delta: 0.1,
            gamma: 2.0,
            candidates: &cands,
        };
        let r = oracle_rhs(Theorem::T2b, &ctx).unwrap();
        assert!((r.value - 9.0 * lam * lam).abs() < 1e-9 * r.value);
        let small = RhsContext {
            n_total: 200,
            ..ctx
        };
        assert!(matches!(
            oracle_rhs(Theorem::T2b, &small),
            Err(Error::Precondition(_))
        ));
        assert!(oracle_rhs(Theorem::T2a, &ctx).is_err());
        let (mis, mis_mom) = ctx_parts(4, 1, Nonlinearity::BoundedSine { alpha: 0.3 });
        let mis_ctx = RhsContext {
            model: &mis,
            moments: &mis_mom,
            ..ctx
        };
        assert!(matches!(
            oracle_rhs(Theorem::T2b, &mis_ctx),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn t3_exact_sparsity_and_sample_size() {
        let (model, mom) = ctx_parts(5, 2, Nonlinearity::BoundedInteraction { alpha: 0.2 });
        let cands = candidates(&model, &mom, None).unwrap();
        let need = tuning::min_overall_sample(5, 1.0, 1.0, 0.1).unwrap() as usize;
        let d = sample_dataset(&model, 50, need, 3).unwrap();
        let inputs = BoundInputs::new(1.0, model.label_bound(), 50, need, 5, 0.1).unwrap();
        let lam = tuning::lambda_semisup_misspec(&inputs).unwrap();
        let ctx = RhsContext {
            model: &model,
            moments: &mom,
            dataset: Some(&d),
            n: 50,
            n_total: need,
            lambda: lam,
            delta: 0.1,
            gamma: 2.0,
            candidates: &cands,
        };
        let r = oracle_rhs(Theorem::T3, &ctx).unwrap();
        let kappa = r.cone_constant.unwrap();
        // The interaction is orthogonal to every feature, so β* is the
        // population least-squares vector and the middle term vanishes.
        let floor = mom.excess_risk(model.beta_star()) + 9.0 * lam * lam * 2.0 / (2.0 * kappa);
        assert!((r.value - floor).abs() < 1e-9 * floor);
        let d_small = sample_dataset(&model, 50, need - 1, 3).unwrap();
        let small = RhsContext {
            dataset: Some(&d_small),
            n_total: need - 1,
            ..ctx
        };
        assert!(matches!(
            oracle_rhs(Theorem::T3, &small),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn t4_adds_tail_terms_to_cor1() {
        let (model, mom) = ctx_parts(3, 1, Nonlinearity::BoundedInteraction { alpha: 0.2 });
        let cands = candidates(&model, &mom, None).unwrap();
        let n_total = 5000;
        let lam = tuning::lambda_expectation(1.0, model.label_bound(), 100, n_total, 3).unwrap();
        let ctx = RhsContext {
            model: &model,
            moments: &mom,
            dataset: None,
            n: 100,
            n_total,
            lambda: lam,
            delta: 0.1,
            gamma: 2.0,
            candidates: &cands,
        };
        let t4 = oracle_rhs(Theorem::T4, &ctx).unwrap();
        let cor1 = oracle_rhs(Theorem::Cor1, &ctx).unwrap();
        let by2 = model.label_bound().powi(2);
        let nf = n_total as f64;
        let l = (18.0 * nf * nf).ln();
        let extra = 2.0 * by2 / (nf * nf) + by2 / (128.0 * 100.0 * l * l);
        assert!((t4.value - cor1.value - extra).abs() < 1e-12);
    }
}
