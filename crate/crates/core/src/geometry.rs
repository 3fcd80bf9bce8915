//! Cone constants of a PSD matrix and the concentration thresholds that
//! relate empirical and population Gram matrices.
//!
//! For a support `J` and `c > 0` the cone is `{v : ‖v_Jᶜ‖₁ ≤ c‖v_J‖₁}` and
//!
//! * `κ(J, c)  = inf c²|J| vᵀMv / (c‖v_J‖₁ − ‖v_Jᶜ‖₁)²` (compatibility),
//! * `κ̄(J, c)  = inf |J| vᵀMv / ‖v_J‖₁²` (weak compatibility),
//! * `κᴿᴱ(J, c) = inf vᵀMv / ‖v_J‖₂²` (restricted eigenvalue).
//!
//! The first two are computed exactly by enumerating sign patterns on `J`.
//! Each pattern gives a convex subproblem. The restricted eigenvalue is
//! non-convex and only ever reported as a heuristic upper bound.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest support accepted by the sign-pattern enumeration.
pub const MAX_ENUMERATION_SUPPORT: usize = 14;

const CD_MAX_SWEEPS: usize = 1_000_000;
const CD_TOL: f64 = 1e-13;
const FISTA_MAX_ITER: usize = 1_000_000;
const FISTA_TOL: f64 = 1e-12;
const RE_MAX_ITER: usize = 5_000;
const RE_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
const SAMPLED_SUPPORTS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    Compatibility,
    WeakCompatibility,
    RestrictedEigenvalue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certification {
    ExactEnumeration,
    HeuristicUpper,
    SampledUpper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeConstantReport {
    pub value: f64,
    pub kind: ConeKind,
    /// Zero-based indices, sorted.
    pub support: Vec<usize>,
    pub c: f64,
    pub certification: Certification,
    pub witness: Vec<f64>,
}

impl ConeConstantReport {
    pub fn witness(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.witness)
    }
}

fn normalize_support(p: usize, support: &[usize]) -> Result<Vec<usize>> {
    if support.is_empty() {
        return Err(Error::invalid("support J must be nonempty"));
    }
    let mut j: Vec<usize> = support.to_vec();
    j.sort_unstable();
    j.dedup();
    if let Some(&bad) = j.iter().find(|&&k| k >= p) {
        return Err(Error::invalid(format!(
            "support index {bad} out of range for dimension {p}"
        )));
    }
    Ok(j)
}

fn check_inputs(m: &DMatrix<f64>, support: &[usize], c: f64) -> Result<Vec<usize>> {
    linalg::ensure_psd(m)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!(
            "cone parameter c must be positive, got {c}"
        )));
    }
    normalize_support(m.nrows(), support)
}

fn complement(p: usize, j: &[usize]) -> Vec<usize> {
    let mut in_j = vec![false; p];
    for &k in j {
        in_j[k] = true;
    }
    (0..p).filter(|&k| !in_j[k]).collect()
}

fn split_norms(v: &DVector<f64>, j: &[usize], jc: &[usize]) -> (f64, f64, f64) {
    let l1_j: f64 = j.iter().map(|&k| v[k].abs()).sum();
    let l2_j: f64 = j.iter().map(|&k| v[k] * v[k]).sum::<f64>().sqrt();
    let l1_jc: f64 = jc.iter().map(|&k| v[k].abs()).sum();
    (l1_j, l2_j, l1_jc)
}

/// Defining ratio of `kind` at `v`, or `None` when `v` is outside the
/// closed cone or the denominator vanishes.
pub fn cone_ratio(
    m: &DMatrix<f64>,
    support: &[usize],
    c: f64,
    kind: ConeKind,
    v: &DVector<f64>,
) -> Option<f64> {
    let p = m.nrows();
    let j = normalize_support(p, support).ok()?;
    if v.len() != p {
        return None;
    }
    let jc = complement(p, &j);
    let (l1_j, l2_j, l1_jc) = split_norms(v, &j, &jc);
    if l1_jc > c * l1_j * (1.0 + 1e-12) {
        return None;
    }
    let q = linalg::quad_form(m, v).max(0.0);
    let s = j.len() as f64;
    let ratio = match kind {
        ConeKind::Compatibility => {
            let den = c * l1_j - l1_jc;
            if den <= 0.0 {
                return None;
            }
            c * c * s * q / (den * den)
        }
        ConeKind::WeakCompatibility => {
            if l1_j == 0.0 {
                return None;
            }
            s * q / (l1_j * l1_j)
        }
        ConeKind::RestrictedEigenvalue => {
            if l2_j == 0.0 {
                return None;
            }
            q / (l2_j * l2_j)
        }
    };
    Some(ratio)
}

/// Sign patterns on `J` up to a global sign flip.
fn sign_patterns(size: usize) -> Result<impl Iterator<Item = Vec<f64>>> {
    if size > MAX_ENUMERATION_SUPPORT {
        return Err(Error::EnumerationTooLarge {
            size,
            max: MAX_ENUMERATION_SUPPORT,
        });
    }
    let count = 1usize << (size - 1);
    Ok((0..count).map(move |mask| {
        (0..size)
            .map(|i| {
                if i > 0 && mask & (1 << (i - 1)) != 0 {
                    -1.0
                } else {
                    1.0
                }
            })
            .collect()
    }))
}

fn zero_curvature_witness(m: &DMatrix<f64>, j: &[usize]) -> Option<DVector<f64>> {
    let p = m.nrows();
    let k = *j.iter().find(|&&k| m[(k, k)] <= 0.0)?;
    let mut v = DVector::zeros(p);
    v[k] = 1.0;
    Some(v)
}

fn report(
    m: &DMatrix<f64>,
    j: Vec<usize>,
    c: f64,
    kind: ConeKind,
    certification: Certification,
    witness: DVector<f64>,
) -> ConeConstantReport {
    let value = cone_ratio(m, &j, c, kind, &witness).unwrap_or(0.0);
    ConeConstantReport {
        value,
        kind,
        support: j,
        c,
        certification,
        witness: witness.iter().copied().collect(),
    }
}

/// Compatibility constant `κ_M(J, c)` by exact sign-pattern enumeration.
///
/// Each pattern `s` is solved through the homogeneous problem
/// `min ½vᵀMv − h(v)` with `h(v) = c sᵀv_J − ‖v_Jᶜ‖₁` and `s_j v_j ≥ 0`,
/// whose minimizer `y` gives `min vᵀMv / h(v)² = 1 / h(y)`.
///
/// ```
/// use nalgebra::DMatrix;
/// use pllasso::geometry::{compatibility, Certification};
///
/// let r = compatibility(&DMatrix::identity(5, 5), &[0, 2], 3.0).unwrap();
/// assert!((r.value - 1.0).abs() < 1e-9);
/// assert_eq!(r.certification, Certification::ExactEnumeration);
/// ```
pub fn compatibility(m: &DMatrix<f64>, support: &[usize], c: f64) -> Result<ConeConstantReport> {
    let j = check_inputs(m, support, c)?;
    let kind = ConeKind::Compatibility;
    if let Some(w) = zero_curvature_witness(m, &j) {
        return Ok(report(m, j, c, kind, Certification::ExactEnumeration, w));
    }
    let jc = complement(m.nrows(), &j);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for s in sign_patterns(j.len())? {
        let y = homogeneous_cd(m, &j, &jc, &s, c, 1.0, None)?;
        let val = cone_ratio(m, &j, c, kind, &y).unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, y));
        }
    }
    let (_, w) = best.expect("at least one sign pattern");
    Ok(report(m, j, c, kind, Certification::ExactEnumeration, w))
}

/// Minimizes `½vᵀMv − α sᵀv_J + β‖v_Jᶜ‖₁` subject to `s_j v_j ≥ 0` by
/// cyclic coordinate descent, rescaling along the current ray after each
/// sweep. Returns early once the ratio `vᵀMv / (α sᵀv_J − β‖v_Jᶜ‖₁)²`
/// drops below round-off, which is how unbounded directions show up.
fn homogeneous_cd(
    m: &DMatrix<f64>,
    j: &[usize],
    jc: &[usize],
    s: &[f64],
    alpha: f64,
    beta: f64,
    init: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let p = m.nrows();
    let scale = (0..p).map(|k| m[(k, k)]).fold(0.0_f64, f64::max);
    let floor = 1e-14 * scale / (alpha * alpha * j.len() as f64);
    let mut y = match init {
        Some(v) => v.clone(),
        None => {
            let mut y = DVector::zeros(p);
            for (&k, &sk) in j.iter().zip(s) {
                y[k] = sk;
            }
            y
        }
    };
    let h = |y: &DVector<f64>| -> f64 {
        let lin: f64 = j.iter().zip(s).map(|(&k, &sk)| alpha * sk * y[k]).sum();
        lin - beta * jc.iter().map(|&k| y[k].abs()).sum::<f64>()
    };
    let mut r = m * &y;
    for sweep in 0..CD_MAX_SWEEPS {
        let hy = h(&y);
        let qy = y.dot(&r);
        if hy > 0.0 {
            if qy <= 0.0 || qy / (hy * hy) < floor {
                return Ok(y);
            }
            let t = hy / qy;
            y *= t;
            r *= t;
        }
        let mut change = 0.0_f64;
        for (&k, &sk) in j.iter().zip(s) {
            let mkk = m[(k, k)];
            let rest = r[k] - mkk * y[k];
            let new = sk * ((alpha - sk * rest) / mkk).max(0.0);
            let delta = new - y[k];
            if delta != 0.0 {
                r.axpy(delta, &m.column(k), 1.0);
                y[k] = new;
                change = change.max(delta.abs());
            }
        }
        for &k in jc {
            let mkk = m[(k, k)];
            if mkk <= 0.0 {
                continue;
            }
            let rest = r[k] - mkk * y[k];
            let new = crate::solver::soft_threshold(-rest, beta) / mkk;
            let delta = new - y[k];
            if delta != 0.0 {
                r.axpy(delta, &m.column(k), 1.0);
                y[k] = new;
                change = change.max(delta.abs());
            }
        }
        let size = linalg::sup_norm(&y);
        if change <= CD_TOL * size {
            return Ok(y);
        }
        if sweep + 1 == CD_MAX_SWEEPS {
            return Err(Error::SubproblemNonConvergence {
                gap: change / size.max(f64::MIN_POSITIVE),
                iterations: CD_MAX_SWEEPS,
            });
        }
    }
    unreachable!()
}

fn project_simplex(x: &[f64], radius: f64) -> Vec<f64> {
    let mut u: Vec<f64> = x.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - radius) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            theta = t;
        }
    }
    x.iter().map(|&xi| (xi - theta).max(0.0)).collect()
}

fn project_l1_ball(x: &[f64], radius: f64) -> Vec<f64> {
    let norm: f64 = x.iter().map(|v| v.abs()).sum();
    if norm <= radius {
        return x.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; x.len()];
    }
    let abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    project_simplex(&abs, radius)
        .into_iter()
        .zip(x)
        .map(|(a, &xi)| a.copysign(xi))
        .collect()
}

/// Weak compatibility constant `κ̄_M(J, c)` by exact sign-pattern enumeration.
///
/// With `‖v_J‖₁ = 1` each pattern becomes a convex quadratic over a simplex
/// times an ℓ1 ball, solved by FISTA with gradient restarts until the
/// projected-gradient step falls below `1e-12`.
pub fn weak_compatibility(
    m: &DMatrix<f64>,
    support: &[usize],
    c: f64,
) -> Result<ConeConstantReport> {
    let j = check_inputs(m, support, c)?;
    let kind = ConeKind::WeakCompatibility;
    if let Some(w) = zero_curvature_witness(m, &j) {
        return Ok(report(m, j, c, kind, Certification::ExactEnumeration, w));
    }
    let jc = complement(m.nrows(), &j);
    let lip = 2.0 * linalg::lambda_max(m);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for s in sign_patterns(j.len())? {
        let v = weak_pattern(m, &j, &jc, &s, c, lip)?;
        let val = cone_ratio(m, &j, c, kind, &v).unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, v));
        }
    }
    let (_, w) = best.expect("at least one sign pattern");
    Ok(report(m, j, c, kind, Certification::ExactEnumeration, w))
}

struct Split<'a> {
    m: &'a DMatrix<f64>,
    j: &'a [usize],
    jc: &'a [usize],
    s: &'a [f64],
    c: f64,
}

impl Split<'_> {
    fn embed(&self, x: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.m.nrows());
        let (a, z) = x.split_at(self.j.len());
        for ((&k, &sk), &ak) in self.j.iter().zip(self.s).zip(a) {
            v[k] = sk * ak;
        }
        for (&k, &zk) in self.jc.iter().zip(z) {
            v[k] = zk;
        }
        v
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let g = 2.0 * (self.m * self.embed(x));
        self.j
            .iter()
            .zip(self.s)
            .map(|(&k, &sk)| sk * g[k])
            .chain(self.jc.iter().map(|&k| g[k]))
            .collect()
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let (a, z) = x.split_at(self.j.len());
        let mut out = project_simplex(a, 1.0);
        out.extend(project_l1_ball(z, self.c));
        out
    }

    fn step(&self, x: &[f64], lip: f64) -> Vec<f64> {
        let g = self.grad(x);
        let moved: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gi / lip).collect();
        self.project(&moved)
    }
}

fn weak_pattern(
    m: &DMatrix<f64>,
    j: &[usize],
    jc: &[usize],
    s: &[f64],
    c: f64,
    lip: f64,
) -> Result<DVector<f64>> {
    let split = Split { m, j, jc, s, c };
    let mut x: Vec<f64> = vec![1.0 / j.len() as f64; j.len()];
    x.extend(std::iter::repeat_n(0.0, jc.len()));
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut stationarity = f64::INFINITY;
    for iter in 0..FISTA_MAX_ITER {
        let next = split.step(&y, lip);
        // Gradient restart: drop momentum once it points uphill.
        let uphill: f64 = y
            .iter()
            .zip(&next)
            .zip(&x)
            .map(|((yi, ni), xi)| (yi - ni) * (ni - xi))
            .sum();
        if uphill > 0.0 {
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        y = next
            .iter()
            .zip(&x)
            .map(|(n, o)| n + mom * (n - o))
            .collect();
        x = next;
        t = t_next;
        if iter % 4 == 0 {
            let probe = split.step(&x, lip);
            stationarity = probe
                .iter()
                .zip(&x)
                .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
            if stationarity <= FISTA_TOL {
                return Ok(split.embed(&x));
            }
        }
    }
    Err(Error::SubproblemNonConvergence {
        gap: stationarity,
        iterations: FISTA_MAX_ITER,
    })
}

fn re_retract(v: &mut DVector<f64>, j: &[usize], jc: &[usize], c: f64) -> bool {
    let norm: f64 = j.iter().map(|&k| v[k] * v[k]).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    for &k in j {
        v[k] /= norm;
    }
    let l1_j: f64 = j.iter().map(|&k| v[k].abs()).sum();
    let tail: Vec<f64> = jc.iter().map(|&k| v[k]).collect();
    for (&k, x) in jc.iter().zip(project_l1_ball(&tail, c * l1_j)) {
        v[k] = x;
    }
    true
}

fn re_descend(
    m: &DMatrix<f64>,
    j: &[usize],
    jc: &[usize],
    c: f64,
    mut v: DVector<f64>,
) -> Option<(f64, DVector<f64>)> {
    if !re_retract(&mut v, j, jc, c) {
        return None;
    }
    let lmax = linalg::lambda_max(m).max(f64::MIN_POSITIVE);
    let mut eta = 0.5 / lmax;
    let mut f = linalg::quad_form(m, &v);
    let mut stalls = 0;
    for _ in 0..RE_MAX_ITER {
        let g = 2.0 * (m * &v);
        let mut cand = &v - eta * g;
        if !re_retract(&mut cand, j, jc, c) {
            eta *= 0.5;
            continue;
        }
        let fc = linalg::quad_form(m, &cand);
        if fc < f {
            let rel = (f - fc) / f.abs().max(1e-300);
            v = cand;
            f = fc;
            eta *= 1.5;
            stalls = if rel < 1e-14 { stalls + 1 } else { 0 };
        } else {
            eta *= 0.5;
            stalls += 1;
        }
        if stalls >= 30 || eta < 1e-18 / lmax {
            break;
        }
    }
    Some((f, v))
}

/// Heuristic restricted eigenvalue `κᴿᴱ_M(J, c)` by multi-start projected
/// descent on `{‖v_J‖₂ = 1, ‖v_Jᶜ‖₁ ≤ c‖v_J‖₁}`.
///
/// The κ̄ witness is always one of the starts, so the result never exceeds
/// `κ̄_M(J, c)`.
pub fn restricted_eigenvalue(
    m: &DMatrix<f64>,
    support: &[usize],
    c: f64,
    starts: usize,
) -> Result<ConeConstantReport> {
    let j = check_inputs(m, support, c)?;
    let p = m.nrows();
    let jc = complement(p, &j);
    let mut init: Vec<DVector<f64>> = Vec::new();
    if j.len() <= MAX_ENUMERATION_SUPPORT {
        if let Ok(w) = weak_compatibility(m, &j, c) {
            init.push(w.witness());
        }
    }
    for &k in &j {
        let mut e = DVector::zeros(p);
        e[k] = 1.0;
        init.push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(RE_SEED ^ (j.len() as u64) ^ ((p as u64) << 32));
    for _ in 0..starts {
        init.push(random_cone_point(&mut rng, p, &j, &jc, c));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for v in init {
        if let Some((f, w)) = re_descend(m, &j, &jc, c, v) {
            if best.as_ref().is_none_or(|(b, _)| f < *b) {
                best = Some((f, w));
            }
        }
    }
    let (_, w) = best.expect("coordinate starts are always usable");
    Ok(report(
        m,
        j,
        c,
        ConeKind::RestrictedEigenvalue,
        Certification::HeuristicUpper,
        w,
    ))
}

fn combinations(p: usize, k: usize, out: &mut Vec<Vec<usize>>) {
    fn rec(start: usize, p: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..p {
            if p - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, p, k, cur, out);
            cur.pop();
        }
    }
    rec(0, p, k, &mut Vec::new(), out);
}

/// Candidate supports of size at most `s`: every one when `p ≤ 20` and
/// `s ≤ 3`, otherwise the smallest-diagonal supports plus seeded random ones.
pub fn candidate_supports(m: &DMatrix<f64>, s: usize) -> (Vec<Vec<usize>>, bool) {
    let p = m.nrows();
    let s = s.min(p);
    let mut out = Vec::new();
    if p <= 20 && s <= 3 {
        for k in 1..=s {
            combinations(p, k, &mut out);
        }
        return (out, true);
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| m[(a, a)].total_cmp(&m[(b, b)]).then(a.cmp(&b)));
    for k in 1..=s {
        let mut sup = order[..k].to_vec();
        sup.sort_unstable();
        out.push(sup);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(RE_SEED.rotate_left(17) ^ p as u64);
    while out.len() < SAMPLED_SUPPORTS {
        let k = if out.len() % 2 == 0 {
            s
        } else {
            rng.random_range(1..=s)
        };
        let mut pool: Vec<usize> = (0..p).collect();
        for i in 0..k {
            let pick = rng.random_range(i..p);
            pool.swap(i, pick);
        }
        let mut sup = pool[..k].to_vec();
        sup.sort_unstable();
        if !out.contains(&sup) {
            out.push(sup);
        }
    }
    (out, false)
}

/// `κᴿᴱ_M(s, c) = min over |J| ≤ s of κᴿᴱ_M(J, c)`.
pub fn restricted_eigenvalue_over_supports(
    m: &DMatrix<f64>,
    s: usize,
    c: f64,
) -> Result<ConeConstantReport> {
    linalg::ensure_psd(m)?;
    if s == 0 || s > m.nrows() {
        return Err(Error::invalid(format!(
            "sparsity level must lie in 1..={}, got {s}",
            m.nrows()
        )));
    }
    let (supports, _) = candidate_supports(m, s);
    let mut best: Option<ConeConstantReport> = None;
    for sup in supports {
        let r = restricted_eigenvalue(m, &sup, c, 4)?;
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one support"))
}

fn random_cone_point(
    rng: &mut ChaCha8Rng,
    p: usize,
    j: &[usize],
    jc: &[usize],
    c: f64,
) -> DVector<f64> {
    let mut v = DVector::zeros(p);
    // Half the draws are dense, half put mass on lower-dimensional faces.
    let zero_prob = if rng.random_bool(0.5) { 0.3 } else { 0.0 };
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        if zero_prob > 0.0 && rng.random_bool(zero_prob) {
            0.0
        } else {
            rng.random_range(-1.0..1.0)
        }
    };
    loop {
        for &k in j {
            v[k] = draw(rng);
        }
        if j.iter().any(|&k| v[k] != 0.0) {
            break;
        }
    }
    for &k in jc {
        v[k] = draw(rng);
    }
    let l1_j: f64 = j.iter().map(|&k| v[k].abs()).sum();
    let l1_jc: f64 = jc.iter().map(|&k| v[k].abs()).sum();
    if l1_jc >= c * l1_j {
        // Pull the tail strictly inside the cone.
        let target = rng.random::<f64>() * c * l1_j;
        for &k in jc {
            v[k] *= target / l1_jc;
        }
    }
    v
}

/// Minimum of the defining ratio over `samples` random cone points.
///
/// An upper bound on the constant, deterministic given `seed`. Draws with
/// the same seed are nested, so the result is non-increasing in `samples`.
pub fn cone_sample_min(
    m: &DMatrix<f64>,
    support: &[usize],
    c: f64,
    kind: ConeKind,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let j = check_inputs(m, support, c)?;
    if samples == 0 {
        return Err(Error::invalid("samples must be at least 1"));
    }
    let p = m.nrows();
    let jc = complement(p, &j);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let v = random_cone_point(&mut rng, p, &j, &jc, c);
        if let Some(r) = cone_ratio(m, &j, c, kind, &v) {
            best = best.min(r);
        }
    }
    Ok(best)
}

fn check_level(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// `t = B_X² √(log(2p²/δ) / (2N))`, the Hoeffding level for
/// `‖Σ − Σ̂_N‖_∞`.
///
/// ```
/// let t = pllasso::geometry::sup_norm_deviation_threshold(10, 1000, 1.0, 0.05).unwrap();
/// assert!((t - 0.06440).abs() < 1e-5);
/// ```
pub fn sup_norm_deviation_threshold(p: usize, n_total: usize, bx: f64, delta: f64) -> Result<f64> {
    check_level(delta)?;
    if p == 0 || n_total == 0 || !(bx > 0.0) {
        return Err(Error::invalid("p, N and B_X must be positive"));
    }
    let pf = p as f64;
    Ok(bx * bx * ((2.0 * pf * pf / delta).ln() / (2.0 * n_total as f64)).sqrt())
}

/// `1 − √(2B_X² p ‖Σ⁻¹‖ log(p/δ) / N)`, a lower bound on
/// `λ_min(Σ^{-1/2} Σ̂_N Σ^{-1/2})` valid when the term under the root is at
/// most one.
pub fn lambda_min_threshold(
    p: usize,
    n_total: usize,
    bx: f64,
    sigma_inv_norm: f64,
    delta: f64,
) -> Result<f64> {
    check_level(delta)?;
    if p == 0 || n_total == 0 || !(bx > 0.0) || !(sigma_inv_norm > 0.0) {
        return Err(Error::invalid("p, N, B_X and ‖Σ⁻¹‖ must be positive"));
    }
    let need = 2.0 * bx * bx * p as f64 * sigma_inv_norm * (p as f64 / delta).ln();
    if need > n_total as f64 {
        return Err(Error::Precondition(format!(
            "lambda_min bound needs N ≥ 2B_X²p‖Σ⁻¹‖log(p/δ) = {need:.1}, got N = {n_total}"
        )));
    }
    Ok(1.0 - (need / n_total as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_psd(seed: u64, p: usize, rank: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(rank, p, |_, _| rng.random_range(-1.0..1.0));
        a.transpose() * a / rank as f64
    }

    #[test]
    fn identity_constants_are_one() {
        let m = DMatrix::identity(6, 6);
        for c in [0.5, 1.0, 3.0] {
            for j in [vec![0], vec![1, 4], vec![0, 2, 5]] {
                assert!((compatibility(&m, &j, c).unwrap().value - 1.0).abs() < 1e-9);
                assert!((weak_compatibility(&m, &j, c).unwrap().value - 1.0).abs() < 1e-9);
                assert!((restricted_eigenvalue(&m, &j, c, 4).unwrap().value - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn homogeneity_in_m() {
        let m = random_psd(3, 5, 8);
        let j = [1, 3];
        let base = compatibility(&m, &j, 2.0).unwrap().value;
        let wbase = weak_compatibility(&m, &j, 2.0).unwrap().value;
        for t in [0.5, 2.0] {
            let tm = &m * t;
            assert!((compatibility(&tm, &j, 2.0).unwrap().value - t * base).abs() < 1e-8 * t);
            assert!((weak_compatibility(&tm, &j, 2.0).unwrap().value - t * wbase).abs() < 1e-8 * t);
        }
    }

    #[test]
    fn rank_deficient_kernel_in_support() {
        // Null vector (1, -1, 0) lives on J = {0, 1}.
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let r = weak_compatibility(&m, &[0, 1], 3.0).unwrap();
        assert!(r.value < 1e-10, "{}", r.value);
        let r = compatibility(&m, &[0, 1], 3.0).unwrap();
        assert!(r.value < 1e-10, "{}", r.value);
    }

    #[test]
    fn zero_diagonal_on_support() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(compatibility(&m, &[0], 1.0).unwrap().value, 0.0);
        assert_eq!(weak_compatibility(&m, &[0], 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn enumeration_limit() {
        let m = DMatrix::identity(16, 16);
        let j: Vec<usize> = (0..15).collect();
        assert!(matches!(
            compatibility(&m, &j, 1.0),
            Err(Error::EnumerationTooLarge { size: 15, max: 14 })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = DMatrix::identity(3, 3);
        assert!(compatibility(&m, &[], 1.0).is_err());
        assert!(compatibility(&m, &[3], 1.0).is_err());
        assert!(compatibility(&m, &[0], 0.0).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(weak_compatibility(&indef, &[0], 1.0).is_err());
    }

    #[test]
    fn diagonal_re_example() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.01]));
        let re = restricted_eigenvalue(&m, &[0], 3.0, 8).unwrap();
        assert!(re.value <= 1.0 + 1e-12);
        // v = (1, ±3) gives 1 + 9·0.01.
        assert!((re.value - 1.0).abs() < 1e-9);
        let oracle =
            cone_sample_min(&m, &[0], 3.0, ConeKind::RestrictedEigenvalue, 1_000_000, 5).unwrap();
        assert!(re.value <= oracle + 1e-8);
    }

    #[test]
    fn diagonal_argmin_support() {
        let mut d = vec![1.0; 6];
        d[4] = 0.05;
        let m = DMatrix::from_diagonal(&DVector::from_vec(d));
        let r = restricted_eigenvalue_over_supports(&m, 2, 3.0).unwrap();
        assert!(r.support.contains(&4));
        assert!(r.value <= 0.05 + 1e-12);
        let id = restricted_eigenvalue_over_supports(&DMatrix::identity(5, 5), 2, 3.0).unwrap();
        assert!((id.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn over_supports_matches_explicit_enumeration() {
        let m = random_psd(11, 8, 12);
        let r = restricted_eigenvalue_over_supports(&m, 2, 3.0).unwrap();
        let mut all = Vec::new();
        combinations(8, 1, &mut all);
        combinations(8, 2, &mut all);
        assert_eq!(all.len(), 8 + 28);
        let explicit = all
            .iter()
            .map(|j| restricted_eigenvalue(&m, j, 3.0, 4).unwrap().value)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.value, explicit);
    }

    #[test]
    fn enumeration_agrees_with_dense_sampling() {
        let m = random_psd(17, 4, 6);
        let j = [0, 1];
        for (kind, exact) in [
            (
                ConeKind::Compatibility,
                compatibility(&m, &j, 3.0).unwrap().value,
            ),
            (
                ConeKind::WeakCompatibility,
                weak_compatibility(&m, &j, 3.0).unwrap().value,
            ),
        ] {
            let sampled = cone_sample_min(&m, &j, 3.0, kind, 1_000_000, 8).unwrap();
            assert!(sampled >= exact - 1e-8, "{kind:?}: {sampled} < {exact}");
            assert!(sampled <= 1.02 * exact, "{kind:?}: {sampled} vs {exact}");
        }
    }

    #[test]
    fn sampled_min_is_monotone_in_samples() {
        let m = random_psd(4, 4, 6);
        let mut prev = f64::INFINITY;
        for samples in [1, 10, 100, 1000, 10000] {
            let v =
                cone_sample_min(&m, &[0, 1], 3.0, ConeKind::Compatibility, samples, 42).unwrap();
            assert!(v <= prev);
            prev = v;
        }
        let id = DMatrix::identity(4, 4);
        for kind in [
            ConeKind::Compatibility,
            ConeKind::WeakCompatibility,
            ConeKind::RestrictedEigenvalue,
        ] {
            assert!(cone_sample_min(&id, &[0, 1], 3.0, kind, 2000, 1).unwrap() >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn thresholds() {
        let t = sup_norm_deviation_threshold(10, 1000, 1.0, 0.05).unwrap();
        assert!((t - 0.06440).abs() < 1e-5);
        let t2 = sup_norm_deviation_threshold(10, 1000, 2.0, 0.05).unwrap();
        assert!((t2 - 4.0 * t).abs() < 1e-14);
        let l = lambda_min_threshold(10, 10_000, 1.0, 1.0, 0.01).unwrap();
        assert!((l - 0.88246).abs() < 1e-5);
        let mut prev = 0.0;
        for n in [1_000, 10_000, 100_000, 1_000_000] {
            let v = lambda_min_threshold(10, n, 1.0, 1.0, 0.01).unwrap();
            assert!(v > prev && v < 1.0);
            prev = v;
        }
        assert!(matches!(
            lambda_min_threshold(10, 100, 1.0, 1.0, 0.01),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn simplex_and_ball_projections() {
        let x = project_simplex(&[0.5, 2.0, -1.0], 1.0);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(x, vec![0.0, 1.0, 0.0]);
        let y = project_l1_ball(&[0.3, -0.2], 1.0);
        assert_eq!(y, vec![0.3, -0.2]);
        let z = project_l1_ball(&[3.0, -1.0], 1.0);
        assert!((z[0] - 1.0).abs() < 1e-15 && z[1] == 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ordering_and_witnesses(seed in 0u64..10_000, p in 3usize..7, rank in 1usize..9) {
            let m = random_psd(seed, p, rank);
            let j = vec![0, p - 1];
            let k = compatibility(&m, &j, 3.0).unwrap();
            let kb = weak_compatibility(&m, &j, 3.0).unwrap();
            let re = restricted_eigenvalue(&m, &j, 3.0, 4).unwrap();
            prop_assert!(re.value <= kb.value + 1e-8);
            prop_assert!(kb.value <= k.value + 1e-8);
            for r in [&k, &kb, &re] {
                let direct = cone_ratio(&m, &j, 3.0, r.kind, &r.witness()).unwrap();
                prop_assert!((direct - r.value).abs() <= 1e-6 * r.value.max(1e-12));
            }
        }

        #[test]
        fn sandwich_relation(seed in 0u64..10_000, p in 3usize..7) {
            let m = random_psd(seed, p, p + 2);
            let j = vec![1];
            let kb = weak_compatibility(&m, &j, 3.0).unwrap().value;
            let k3 = compatibility(&m, &j, 3.0).unwrap().value;
            let k4 = compatibility(&m, &j, 4.0).unwrap().value;
            prop_assert!(k4 / 16.0 <= kb + 1e-8);
            prop_assert!(kb <= k3 + 1e-8);
        }

        #[test]
        fn monotone_in_c(seed in 0u64..10_000) {
            let m = random_psd(seed, 5, 7);
            let j = vec![0, 2];
            let k1 = compatibility(&m, &j, 1.0).unwrap().value;
            let k3 = compatibility(&m, &j, 3.0).unwrap().value;
            let w1 = weak_compatibility(&m, &j, 1.0).unwrap().value;
            let w3 = weak_compatibility(&m, &j, 3.0).unwrap().value;
            prop_assert!(k3 <= k1 + 1e-8);
            prop_assert!(w3 <= w1 + 1e-8);
        }

        #[test]
        fn sampling_never_beats_enumeration(seed in 0u64..10_000) {
            let m = random_psd(seed, 4, 6);
            let j = [0, 1];
            let k = compatibility(&m, &j, 3.0).unwrap().value;
            let kb = weak_compatibility(&m, &j, 3.0).unwrap().value;
            let sk = cone_sample_min(&m, &j, 3.0, ConeKind::Compatibility, 2000, seed).unwrap();
            let sb = cone_sample_min(&m, &j, 3.0, ConeKind::WeakCompatibility, 2000, seed).unwrap();
            prop_assert!(sk >= k - 1e-8);
            prop_assert!(sb >= kb - 1e-8);
        }
    }
}
