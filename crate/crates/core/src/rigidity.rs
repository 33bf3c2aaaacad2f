//! Nonlinear mixed-growth rigidity: `Du = Q + Σ F_α` with `Q ∈ SO(n)`.
//!
//! The Lipschitz case linearizes at the identity and calls the linear Korn
//! engine on `Qᵀu − x` with majorants enlarged by the quadratic Taylor
//! remainder. When the exponents are more than a factor two apart it first
//! solves the problem for the doubled exponents and uses `|F_α|²` as the
//! remainder. The general case truncates `u` at `λ = 2n` and charges the
//! exceptional set to the dominant majorant.

use serde::{Deserialize, Serialize};

use crate::decomposition::{Branch, ConstantKind, DecompositionReport, MixedDecomposition};
use crate::error::{LabError, Result};
use crate::fields::{gradient, lp_norm, split_by_majorants_n, ExponentList, MatrixField, ScalarField, VectorField};
use crate::korn::{korn_engine, KornContext};
use crate::mat::{Mat, Vector};
use crate::rotations::{dist_field, dist_so, nearest_rotation, procrustes_mean};
use crate::truncation::truncate_with;

/// Constant in `|sym A − Id| ≤ c·dist(A, SO(n)) + c|A − Id|²`, frozen from
/// [`taylor_constant_sweep`] (whose supremum approaches 1 from below).
pub const TAYLOR_CONSTANT: f64 = 1.0;

/// `(lhs, rhs, lhs ≤ rhs)` for the Taylor bound at `A` with constant `c`.
pub fn taylor_check(a: &Mat, c: f64) -> Result<(f64, f64, bool)> {
    if !(c > 0.0) {
        return Err(LabError::Parameter(format!("Taylor constant must be positive, got {c}")));
    }
    let id = Mat::identity(a.dim());
    let lhs = (a.sym() - id).norm();
    let rhs = c * dist_so(a)? + c * (*a - id).norm_squared();
    Ok((lhs, rhs, lhs <= rhs))
}

/// Smallest `c` making [`taylor_check`] pass on `samples` random matrices
/// with `|A| ≤ bound`. A third are perturbations `Id + εB` of the identity,
/// a third perturbations `Q(Id + εB)` of random rotations (`ε` log-uniform),
/// the rest uniform in the cube.
pub fn taylor_constant_sweep(n: usize, samples: usize, bound: f64, seed: u64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    if !(n == 2 || n == 3) {
        return Err(LabError::Parameter(format!("dimension must be 2 or 3, got {n}")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |rng: &mut rand_chacha::ChaCha8Rng| {
        let entries: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        Mat::from_rows(n, &entries)
    };
    let id = Mat::identity(n);
    let mut worst = 0.0f64;
    for k in 0..samples {
        let mut a = if k % 3 < 2 {
            let q = if k % 3 == 0 { id } else { nearest_rotation(&gaussian(&mut rng))?.rotation };
            let b = gaussian(&mut rng);
            let eps = 10f64.powf(rng.random_range(-4.0..bound.log10()));
            q * (id + b.scale(eps / b.norm().max(1e-300)))
        } else {
            let entries: Vec<f64> = (0..n * n).map(|_| rng.random_range(-bound..bound)).collect();
            Mat::from_rows(n, &entries)
        };
        if a.norm() > bound {
            a = a.scale(bound / a.norm());
        }
        let (lhs, _, _) = taylor_check(&a, 1.0)?;
        let den = dist_so(&a)? + (a - id).norm_squared();
        if den > 0.0 {
            worst = worst.max(lhs / den);
        }
    }
    Ok(worst)
}

/// Single-exponent baseline: `Q` = nearest rotation to the mean of `Du`,
/// ratio `‖Du − Q‖_p / ‖dist(Du, SO(n))‖_p` (roundoff-level norms count as zero).
pub fn rigidity_lp(u: &VectorField, p: f64) -> Result<(Mat, f64)> {
    let du = gradient(u)?;
    let q = procrustes_mean(&du)?;
    let num = lp_norm(&du.sub_const(&q), p)?;
    let den = lp_norm(&dist_field(&du)?, p)?;
    let scale = lp_norm(&du, p)?;
    Ok((q, crate::decomposition::ratio_above_roundoff(num, den, scale)))
}

/// `Λ_k` index: the `k` with `2^k p₁ < p_N ≤ 2^{k+1} p₁` (0 when `p_N ≤ 2p₁`).
pub fn lambda_level(exponents: &[f64]) -> u32 {
    let (first, last) = (exponents[0], exponents[exponents.len() - 1]);
    let mut k = 0;
    while last > 2f64.powi(k as i32 + 1) * first {
        k += 1;
    }
    k
}

/// Exponents of the induction step: `q₁ = 2p₁`, `q_α = min(2p_α, p_N)`, `q_N = p_N`.
pub fn doubled_exponents(exponents: &[f64]) -> Vec<f64> {
    let n = exponents.len();
    let last = exponents[n - 1];
    exponents
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            if k == 0 {
                2.0 * p
            } else if k == n - 1 {
                last
            } else {
                (2.0 * p).min(last)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationStats {
    pub lambda: f64,
    pub c_e: f64,
    /// Componentwise Lipschitz constant of the McShane extension.
    pub lipschitz_m: f64,
    /// Bound `M ≥ |Du_M|` handed to the Lipschitz case.
    pub gradient_bound: f64,
    pub excess_cells: usize,
    /// Cells outside `E` or where `Du_M ≠ Du`; charged with `2M`.
    pub exceptional_cells: usize,
    pub excess_measure: f64,
    pub bound_rhs: f64,
    pub charged_to: usize,
}

#[derive(Clone, Debug)]
pub struct RigidityReport {
    pub decomposition: MixedDecomposition,
    pub truncation: Option<TruncationStats>,
    pub taylor_constant: f64,
    /// `M` of the Lipschitz case, when it ran.
    pub gradient_bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RigiditySummary {
    #[serde(flatten)]
    pub decomposition: DecompositionReport,
    pub level: Option<u32>,
    pub truncation: Option<TruncationStats>,
    pub taylor_constant: f64,
    pub gradient_bound: Option<f64>,
}

impl RigidityReport {
    pub fn rotation(&self) -> Mat {
        self.decomposition.constant
    }

    /// Deepest `Λ_k` level reached, if the Lipschitz case ran.
    pub fn level(&self) -> Option<u32> {
        self.decomposition
            .branches
            .iter()
            .filter_map(|b| match b {
                Branch::RigidityLevel { k } => Some(*k),
                Branch::RigiditySmallRatio => Some(0),
                _ => None,
            })
            .max()
    }

    pub fn summary(&self, du: &MatrixField) -> RigiditySummary {
        RigiditySummary {
            decomposition: self.decomposition.report(du),
            level: self.level(),
            truncation: self.truncation.clone(),
            taylor_constant: self.taylor_constant,
            gradient_bound: self.gradient_bound,
        }
    }
}

/// A majorant group after merging: the output slot it writes to and its
/// exponent.
#[derive(Clone)]
struct Group {
    slot: usize,
    majorant: ScalarField,
    exponent: f64,
}

fn pow_norm(f: &ScalarField, p: f64) -> Result<f64> {
    Ok(lp_norm(f, p)?.powf(p))
}

fn check_dist_majorant(du: &MatrixField, total: &ScalarField, what: &str) -> Result<()> {
    let dist = dist_field(du)?;
    let domain = du.domain();
    let mut worst = (0usize, 0.0f64);
    for c in domain.inside_cells() {
        let excess = dist.get(c) - total.get(c);
        if excess > worst.1 {
            worst = (c, excess);
        }
    }
    if worst.1 > 1e-10 {
        return Err(LabError::Contract { what: what.into(), cell: worst.0, excess: worst.1 });
    }
    Ok(())
}

fn sum_abs(fields: &[ScalarField]) -> ScalarField {
    let mut total = ScalarField::zeros(fields[0].domain());
    for f in fields {
        total = total.add(&f.map(|v| v.abs()));
    }
    total
}

/// `Qᵀu − x`, whose gradient is `QᵀDu − Id`.
fn rotated_displacement(u: &VectorField, q: &Mat) -> VectorField {
    u.left_mul(&q.transpose()).sub(&VectorField::from_fn(u.domain(), |x| *x))
}

/// Clips to `|F_α| ≤ M + √n`: at cells where some part exceeds the bound,
/// the first such part takes `Du − Q` and the others vanish.
fn clip_parts(du: &MatrixField, q: &Mat, parts: &mut [MatrixField], groups: &[Group], m: f64) {
    let domain = du.domain();
    let bound = m + (domain.dim() as f64).sqrt();
    let zero = Mat::zeros(domain.dim());
    for c in domain.inside_cells() {
        if let Some(hit) = groups.iter().position(|g| parts[g.slot].get(c).norm() > bound) {
            for (k, g) in groups.iter().enumerate() {
                parts[g.slot].set(c, if k == hit { du.get(c) - *q } else { zero });
            }
        }
    }
}

/// Linearization at `Id`: Korn on `Qᵀu − x`, then the nearest rotation to
/// `Id + S`. Returns the rotation and the parts (in the output slots).
fn linearize(
    ctx: &KornContext,
    u: &VectorField,
    du: &MatrixField,
    q: &Mat,
    groups: &[Group],
    tilde: Vec<ScalarField>,
    n_out: usize,
) -> Result<(Mat, Vec<MatrixField>)> {
    let domain = u.domain();
    let n = domain.dim();
    let shifted = rotated_displacement(u, q);
    let exponents: Vec<f64> = groups.iter().map(|g| g.exponent).collect();
    let lin = korn_engine(&shifted, &tilde, &exponents, &ctx.cover, &ctx.plan)?;
    let id = Mat::identity(n);
    let r = nearest_rotation(&(id + lin.constant))?.rotation;
    let rotation = *q * r;
    // the constant correction Id + S − R goes to the largest majorant (ties: last)
    let mut chosen = 0;
    let mut best = f64::NEG_INFINITY;
    for (k, g) in groups.iter().enumerate() {
        let v = lp_norm(&g.majorant, g.exponent)?;
        if v >= best {
            best = v;
            chosen = k;
        }
    }
    let mut parts = vec![MatrixField::zeros(domain); n_out];
    for (k, g) in groups.iter().enumerate() {
        if k != chosen {
            parts[g.slot] = lin.parts[k].left_mul(q);
        }
    }
    let mut closing = du.sub_const(&rotation);
    for (k, g) in groups.iter().enumerate() {
        if k != chosen {
            closing = closing.sub(&parts[g.slot]);
        }
    }
    parts[groups[chosen].slot] = closing;
    Ok((rotation, parts))
}

/// Online Taylor check on `A = QᵀDu`.
fn check_taylor(du: &MatrixField, q: &Mat) -> Result<()> {
    let domain = du.domain();
    let qt = q.transpose();
    let mut worst = (0usize, 0.0f64);
    for c in domain.inside_cells() {
        let (lhs, rhs, _) = taylor_check(&(qt * du.get(c)), TAYLOR_CONSTANT)?;
        if lhs - rhs > worst.1 {
            worst = (c, lhs - rhs);
        }
    }
    if worst.1 > 1e-12 {
        return Err(LabError::Contract { what: "Taylor bound at the identity".into(), cell: worst.0, excess: worst.1 });
    }
    Ok(())
}

/// The Lipschitz case on groups whose exponents are nondecreasing.
fn lipschitz_case(
    ctx: &KornContext,
    u: &VectorField,
    groups: Vec<Group>,
    m: f64,
    n_out: usize,
    trace: &mut Vec<Branch>,
) -> Result<(Mat, Vec<MatrixField>)> {
    let du = gradient(u)?;
    let domain = u.domain();
    let c = TAYLOR_CONSTANT;
    let mut groups: Vec<Group> =
        groups.into_iter().map(|g| Group { majorant: g.majorant.map(|v| v.abs().min(2.0 * m)), ..g }).collect();
    let exponents: Vec<f64> = groups.iter().map(|g| g.exponent).collect();
    let level = lambda_level(&exponents);
    let (rotation, mut parts) = if level == 0 {
        // fold α into α+1 while ‖f_α‖^{p_α} ≤ ‖f_{α+1}‖^{p_{α+1}}
        'merge: while groups.len() > 1 {
            for k in 0..groups.len() - 1 {
                if pow_norm(&groups[k].majorant, groups[k].exponent)?
                    <= pow_norm(&groups[k + 1].majorant, groups[k + 1].exponent)?
                {
                    let lower = groups.remove(k);
                    trace.push(Branch::RigidityMerge { eliminated: lower.slot, into: groups[k].slot });
                    groups[k].majorant = groups[k].majorant.add(&lower.majorant);
                    continue 'merge;
                }
            }
            break;
        }
        trace.push(Branch::RigiditySmallRatio);
        let q = procrustes_mean(&du)?;
        if groups.len() == 1 {
            let mut parts = vec![MatrixField::zeros(domain); n_out];
            parts[groups[0].slot] = du.sub_const(&q);
            (q, parts)
        } else {
            check_taylor(&du, &q)?;
            let id = Mat::identity(domain.dim());
            let qt = q.transpose();
            let remainder = du.map(|a| (qt * *a - id).norm_squared());
            let tilde: Vec<ScalarField> = groups
                .iter()
                .enumerate()
                .map(|(k, g)| if k == 0 { g.majorant.add(&remainder).scale(c) } else { g.majorant.scale(c) })
                .collect();
            linearize(ctx, u, &du, &q, &groups, tilde, n_out)?
        }
    } else {
        trace.push(Branch::RigidityLevel { k: level });
        let doubled = doubled_exponents(&exponents);
        let inner_groups: Vec<Group> =
            groups.iter().zip(&doubled).map(|(g, &q)| Group { exponent: q, ..g.clone() }).collect();
        let (q, inner) = lipschitz_case(ctx, u, inner_groups, m, n_out, trace)?;
        check_taylor(&du, &q)?;
        let count = groups.len() as f64;
        let tilde: Vec<ScalarField> =
            groups.iter().map(|g| g.majorant.add(&inner[g.slot].map(|a| count * a.norm_squared())).scale(c)).collect();
        linearize(ctx, u, &du, &q, &groups, tilde, n_out)?
    };
    clip_parts(&du, &rotation, &mut parts, &groups, m);
    Ok((rotation, parts))
}

fn check_inputs(majorants: &[ScalarField], exponents: &[f64]) -> Result<()> {
    if majorants.len() != exponents.len() {
        return Err(LabError::Parameter("need one majorant per exponent".into()));
    }
    ExponentList::new(exponents.to_vec()).map(|_| ())
}

/// Lipschitz case for `N` exponents with an explicit bound `|Du| ≤ M`, `M > n`.
pub fn rigidity_lipschitz_multi(
    ctx: &KornContext,
    u: &VectorField,
    majorants: &[ScalarField],
    exponents: &[f64],
    m: f64,
) -> Result<RigidityReport> {
    check_inputs(majorants, exponents)?;
    let domain = u.domain();
    let n = domain.dim() as f64;
    if !(m > n && m.is_finite()) {
        return Err(LabError::Parameter(format!("gradient bound must exceed n = {n}, got {m}")));
    }
    let du = gradient(u)?;
    if let Some(c) = domain.inside_cells().find(|&c| du.get(c).norm() > m * (1.0 + 1e-12)) {
        return Err(LabError::Contract { what: "|Du| ≤ M".into(), cell: c, excess: du.get(c).norm() - m });
    }
    check_dist_majorant(&du, &sum_abs(majorants), "dist(Du, SO(n)) ≤ Σ f_α")?;
    let groups = majorants
        .iter()
        .zip(exponents)
        .enumerate()
        .map(|(slot, (f, &p))| Group { slot, majorant: f.clone(), exponent: p })
        .collect();
    let mut trace = Vec::new();
    let (q, parts) = lipschitz_case(ctx, u, groups, m, majorants.len(), &mut trace)?;
    let decomposition =
        MixedDecomposition::assemble(q, ConstantKind::Rotation, parts, majorants, exponents, trace, None)?;
    Ok(RigidityReport { decomposition, truncation: None, taylor_constant: TAYLOR_CONSTANT, gradient_bound: Some(m) })
}

pub fn rigidity_lipschitz(
    u: &VectorField,
    f: &ScalarField,
    g: &ScalarField,
    p: f64,
    q: f64,
    m: f64,
) -> Result<RigidityReport> {
    let ctx = KornContext::new(u.domain())?;
    rigidity_lipschitz_multi(&ctx, u, &[f.clone(), g.clone()], &[p, q], m)
}

/// General case for `N` exponents.
pub fn rigidity_multi_with(
    ctx: &KornContext,
    u: &VectorField,
    majorants: &[ScalarField],
    exponents: &[f64],
) -> Result<RigidityReport> {
    check_inputs(majorants, exponents)?;
    let domain = u.domain();
    let n = domain.dim();
    let du = gradient(u)?;
    if !du.all_finite() {
        return Err(LabError::NonFinite("Du".into()));
    }
    check_dist_majorant(&du, &sum_abs(majorants), "dist(Du, SO(n)) ≤ Σ f_α")?;
    let mut groups: Vec<Group> = majorants
        .iter()
        .zip(exponents)
        .enumerate()
        .map(|(slot, (f, &p))| Group { slot, majorant: f.map(|v| v.abs()), exponent: p })
        .collect();
    let mut trace = Vec::new();
    // fold α+1 into α while ‖f_α‖_{p_α} ≥ ‖f_{α+1}‖_{p_{α+1}}
    'merge: while groups.len() > 1 {
        for k in 0..groups.len() - 1 {
            if lp_norm(&groups[k].majorant, groups[k].exponent)?
                >= lp_norm(&groups[k + 1].majorant, groups[k + 1].exponent)?
            {
                let upper = groups.remove(k + 1);
                trace.push(Branch::RigidityMerge { eliminated: upper.slot, into: groups[k].slot });
                groups[k].majorant = groups[k].majorant.add(&upper.majorant);
                continue 'merge;
            }
        }
        break;
    }
    let n_out = majorants.len();
    if groups.len() == 1 {
        trace.push(Branch::RigidityShortcut);
        let q = procrustes_mean(&du)?;
        let mut parts = vec![MatrixField::zeros(domain); n_out];
        parts[groups[0].slot] = du.sub_const(&q);
        let decomposition =
            MixedDecomposition::assemble(q, ConstantKind::Rotation, parts, majorants, exponents, trace, None)?;
        return Ok(RigidityReport {
            decomposition,
            truncation: None,
            taylor_constant: TAYLOR_CONSTANT,
            gradient_bound: None,
        });
    }

    let lambda = 2.0 * n as f64;
    let trunc = truncate_with(u, lambda, &ctx.plan)?;
    let u_m = trunc.extended().clone();
    let du_m = gradient(&u_m)?;
    let m = domain.inside_cells().map(|c| du_m.get(c).norm()).fold(lambda, f64::max);
    let exceptional: Vec<bool> =
        (0..domain.num_cells()).map(|c| domain.inside(c) && (!trunc.good_set[c] || du_m.get(c) != du.get(c))).collect();
    let exceptional_cells = exceptional.iter().filter(|&&b| b).count();

    // β maximizes ‖f_β‖^{p_β}; ties go to the smallest index
    let mut beta = 0;
    let mut best = f64::NEG_INFINITY;
    for (k, g) in groups.iter().enumerate() {
        let v = pow_norm(&g.majorant, g.exponent)?;
        if v > best {
            best = v;
            beta = k;
        }
    }
    let charge = ScalarField::from_fn(domain, |_| 0.0);
    let mut charge = charge;
    for c in domain.inside_cells().filter(|&c| exceptional[c]) {
        charge.set(c, 2.0 * m);
    }
    groups[beta].majorant = groups[beta].majorant.add(&charge);
    let charged: Vec<ScalarField> = groups.iter().map(|g| g.majorant.clone()).collect();
    check_dist_majorant(&du_m, &sum_abs(&charged), "dist(Du_M, SO(n)) ≤ Σ f^M_α")?;
    trace.push(Branch::Truncation { lambda, exceptional_cells, charged_to: groups[beta].slot });

    let (r, lipschitz_parts) = lipschitz_case(ctx, &u_m, groups.clone(), m, n_out, &mut trace)?;
    // Du − Du_M lives on the exceptional set and is split by the charged majorants
    let jump = du.sub(&du_m);
    let pieces = split_by_majorants_n(&jump, &charged)?;
    let mut parts = lipschitz_parts;
    for (k, g) in groups.iter().enumerate() {
        parts[g.slot] = parts[g.slot].add(&pieces[k]);
    }
    let last = groups[groups.len() - 1].slot;
    let mut closing = du.sub_const(&r);
    for g in &groups[..groups.len() - 1] {
        closing = closing.sub(&parts[g.slot]);
    }
    parts[last] = closing;
    if parts.iter().any(|f| !f.all_finite()) {
        return Err(LabError::NonFinite("rigidity parts".into()));
    }
    let decomposition =
        MixedDecomposition::assemble(r, ConstantKind::Rotation, parts, majorants, exponents, trace, None)?;
    Ok(RigidityReport {
        decomposition,
        truncation: Some(TruncationStats {
            lambda,
            c_e: trunc.c_e,
            lipschitz_m: trunc.lipschitz_m,
            gradient_bound: m,
            excess_cells: trunc.excess_cells,
            exceptional_cells,
            excess_measure: trunc.excess_measure,
            bound_rhs: trunc.bound_rhs,
            charged_to: groups[beta].slot,
        }),
        taylor_constant: TAYLOR_CONSTANT,
        gradient_bound: Some(m),
    })
}

pub fn rigidity_multi(u: &VectorField, majorants: &[ScalarField], exponents: &[f64]) -> Result<RigidityReport> {
    let ctx = KornContext::new(u.domain())?;
    rigidity_multi_with(&ctx, u, majorants, exponents)
}

/// Two-exponent decomposition `Du = Q + F + G`.
pub fn rigidity_mixed(u: &VectorField, f: &ScalarField, g: &ScalarField, p: f64, q: f64) -> Result<RigidityReport> {
    rigidity_multi(u, &[f.clone(), g.clone()], &[p, q])
}

pub fn rigidity_mixed_with(
    ctx: &KornContext,
    u: &VectorField,
    f: &ScalarField,
    g: &ScalarField,
    p: f64,
    q: f64,
) -> Result<RigidityReport> {
    rigidity_multi_with(ctx, u, &[f.clone(), g.clone()], &[p, q])
}

/// `u(x) = Q₀x + b`.
pub fn rigid_motion(domain: &std::sync::Arc<crate::fields::GridDomain>, q0: &Mat, b: &Vector) -> VectorField {
    VectorField::from_fn(domain, |x| q0.mul_vec(x) + *b)
}
