//! Linear mixed-growth Korn decomposition `Du = S + Σ F_α`.
//!
//! The construction covers `Ω` by balls, solves for the Newtonian potentials
//! `u_α` of each strain part on every ball, takes the local skew matrix of
//! the harmonic remainder `w = u − Σ u_α`, and patches the local pieces over
//! the disjoint sets `A_i = (B_i \ ∪_{j<i} A_j) ∩ Ω`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{Branch, ConstantKind, CoverStats, MixedDecomposition};
use crate::error::{LabError, Result};
use crate::extension::{extend_ball, extension_feasible, moment_weight};
use crate::fields::{
    gradient, lp_norm, lp_norm_on, split_by_majorants_n, GridDomain, MatrixField, ScalarField, VectorField,
};
use crate::mat::{Mat, Vector};
use crate::newtonian::{potential_field, MultiplierPlan};
use crate::rotations::skew_mean_on;

/// Korn's second inequality on `region`: `S` = mean skew part of `Du` and
/// the ratio `‖Du − S‖_p / ‖Eu‖_p` over the region (norms at roundoff level
/// of `‖Du‖_p` count as zero).
pub fn korn_classical(u: &VectorField, region: &[bool], p: f64) -> Result<(Mat, f64)> {
    let domain = u.domain();
    let subset: Vec<bool> = (0..domain.num_cells()).map(|c| region[c] && domain.inside(c)).collect();
    if !subset.iter().any(|&b| b) {
        return Err(LabError::Parameter("Korn region is empty".into()));
    }
    let du = gradient(u)?;
    let s = skew_mean_on(&du, &subset);
    let num = lp_norm_on(&du.sub_const(&s), p, &subset)?;
    let den = lp_norm_on(&du.map(|a| a.sym()), p, &subset)?;
    let scale = lp_norm_on(&du, p, &subset)?;
    Ok((s, crate::decomposition::ratio_above_roundoff(num, den, scale)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallKind {
    /// `B(x, 2ρ)` lies inside `Ω`.
    Interior,
    /// `B(x, 2ρ)` crosses only the graph part of `∂Ω`; the data are extended
    /// across it before solving.
    Graph,
    /// Any other boundary ball: everything is restricted to `B ∩ Ω`.
    Clipped,
}

#[derive(Clone, Debug)]
pub struct CoverBall {
    pub center: Vector,
    pub kind: BallKind,
    /// `B(x, ρ) ∩ Ω` as a cell set.
    pub cells: Vec<bool>,
}

/// Balls `B(x_ℓ, ρ)` covering the mask; the potentials of ball `ℓ` live on
/// `B(x_ℓ, 2ρ)`.
#[derive(Clone, Debug)]
pub struct BallCover {
    pub radius: f64,
    pub gamma: f64,
    pub balls: Vec<CoverBall>,
    /// Smallest nonempty `|B_i ∩ B_j ∩ Ω|` (including `i = j`).
    pub alpha: f64,
}

/// `γ = 1/(2√(1+L²))`.
pub fn shrink_factor(lipschitz: f64) -> f64 {
    1.0 / (2.0 * (1.0 + lipschitz * lipschitz).sqrt())
}

/// A quarter of the bounding-box extent, or an eighth on graph domains where
/// the extension needs room below the ball.
pub fn default_cover_radius(domain: &GridDomain) -> f64 {
    let extent = bounding_box(domain).iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    if domain.boundary_graph().is_some() {
        extent / 8.0
    } else {
        extent / 4.0
    }
}

fn bounding_box(domain: &GridDomain) -> Vec<(f64, f64)> {
    let n = domain.dim();
    let h = domain.spacing();
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
    for c in domain.inside_cells() {
        let x = domain.center(c);
        for k in 0..n {
            bounds[k].0 = bounds[k].0.min(x[k] - h / 2.0);
            bounds[k].1 = bounds[k].1.max(x[k] + h / 2.0);
        }
    }
    bounds
}

pub fn build_cover(domain: &GridDomain) -> Result<BallCover> {
    build_cover_with_radius(domain, default_cover_radius(domain))
}

/// Lattice cover: spacing at most `2ρ/√n` so the balls overlap and cover
/// the bounding box.
pub fn build_cover_with_radius(domain: &GridDomain, radius: f64) -> Result<BallCover> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(LabError::Parameter(format!("cover radius must be positive, got {radius}")));
    }
    let n = domain.dim();
    let bounds = bounding_box(domain);
    let max_step = 2.0 * radius / (n as f64).sqrt();
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let m = ((hi - lo) / max_step).ceil().max(1.0) as usize;
            let step = (hi - lo) / m as f64;
            (0..m).map(|k| lo + (k as f64 + 0.5) * step).collect()
        })
        .collect();
    let mut centers: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        centers = centers
            .iter()
            .flat_map(|c| {
                axis.iter().map(move |&t| {
                    let mut v = c.clone();
                    v.push(t);
                    v
                })
            })
            .collect();
    }
    let lipschitz = domain.boundary_graph().map_or(0.0, |g| g.lipschitz);
    let mut balls = Vec::new();
    for center in centers.iter().map(|c| Vector::from_slice(c)) {
        let ball = domain.cells_in_ball(&center, radius);
        let cells: Vec<bool> = ball.iter().enumerate().map(|(c, &b)| b && domain.inside(c)).collect();
        let count = cells.iter().filter(|&&b| b).count();
        if count == 0 {
            continue;
        }
        let kind = classify(domain, &center, 2.0 * radius);
        balls.push(CoverBall { center, kind, cells });
    }
    // slivers at the corners of curved domains are dropped when their cells
    // are held by a larger ball
    let sizes: Vec<usize> = balls.iter().map(|b| b.cells.iter().filter(|&&x| x).count()).collect();
    let mut keep = vec![true; balls.len()];
    for i in 0..balls.len() {
        if sizes[i] >= 4 {
            continue;
        }
        let covered = (0..domain.num_cells())
            .filter(|&c| balls[i].cells[c])
            .all(|c| (0..balls.len()).any(|j| j != i && keep[j] && sizes[j] >= 4 && balls[j].cells[c]));
        if !covered {
            return Err(LabError::Resolution(format!(
                "cover ball at {:?} holds only {} cells",
                balls[i].center.as_slice(),
                sizes[i]
            )));
        }
        keep[i] = false;
    }
    let balls: Vec<CoverBall> = balls.into_iter().zip(keep).filter_map(|(b, k)| k.then_some(b)).collect();
    if let Some(c) = domain.inside_cells().find(|&c| !balls.iter().any(|b| b.cells[c])) {
        return Err(LabError::Geometry(format!("cell {c} is not covered")));
    }
    let vol = domain.cell_volume();
    let mut alpha = f64::INFINITY;
    for i in 0..balls.len() {
        for j in i..balls.len() {
            let overlap = (0..domain.num_cells()).filter(|&c| balls[i].cells[c] && balls[j].cells[c]).count();
            if overlap > 0 {
                alpha = alpha.min(overlap as f64 * vol);
            }
        }
    }
    Ok(BallCover { radius, gamma: shrink_factor(lipschitz), balls, alpha })
}

fn classify(domain: &GridDomain, center: &Vector, support: f64) -> BallKind {
    let h = domain.spacing();
    let within_box = (0..domain.dim()).all(|k| {
        let lo = domain.origin()[k];
        let hi = lo + domain.shape()[k] as f64 * h;
        center[k] - support >= lo && center[k] + support <= hi
    });
    let ball = domain.cells_in_ball(center, support);
    if within_box && ball.iter().enumerate().all(|(c, &b)| !b || domain.inside(c)) {
        return BallKind::Interior;
    }
    if extension_feasible(domain, center, support) {
        return BallKind::Graph;
    }
    BallKind::Clipped
}

/// `F_α` on the ball's own cells for `α < N`, and the local skew matrix.
struct BallPieces {
    skew: Mat,
    /// `(cell, [Du_α for α < N])` over `B(x, ρ) ∩ Ω`.
    values: Vec<(usize, Vec<Mat>)>,
}

fn ball_pieces(
    ball: &CoverBall,
    radius: f64,
    u: &VectorField,
    du: &MatrixField,
    parts: &[MatrixField],
    plan: &MultiplierPlan,
) -> Result<BallPieces> {
    let domain = u.domain();
    let support_radius = 2.0 * radius;
    // data (possibly extended), the potential support, and the Korn set
    let (data_du, data_parts, support, korn_set): (MatrixField, Vec<MatrixField>, Vec<bool>, Vec<bool>) =
        match ball.kind {
            BallKind::Graph => {
                let ext = extend_ball(u, parts, &ball.center, support_radius, &moment_weight())?;
                let ext_domain = ext.w.domain().clone();
                let korn_set = ext_domain.cells_in_ball(&ball.center, radius);
                let support = ext_domain.mask().to_vec();
                (gradient(&ext.w)?, ext.parts, support, korn_set)
            }
            BallKind::Interior | BallKind::Clipped => {
                let support: Vec<bool> = domain
                    .cells_in_ball(&ball.center, support_radius)
                    .iter()
                    .enumerate()
                    .map(|(c, &b)| b && domain.inside(c))
                    .collect();
                (du.clone(), parts.to_vec(), support, ball.cells.clone())
            }
        };
    let potentials: Vec<MatrixField> =
        data_parts.iter().map(|f| potential_field(f, &support, plan).map(|p| p.du)).collect::<Result<_>>()?;
    let remainder = potentials.iter().fold(data_du.clone(), |acc, d| acc.sub(d));
    let subset: Vec<bool> = (0..korn_set.len()).map(|c| korn_set[c] && data_du.domain().inside(c)).collect();
    let skew = skew_mean_on(&remainder, &subset);
    let last = potentials.len() - 1;
    let values = (0..domain.num_cells())
        .filter(|&c| ball.cells[c])
        .map(|c| (c, potentials[..last].iter().map(|d| d.get(c)).collect()))
        .collect();
    Ok(BallPieces { skew, values })
}

/// Groups of original indices after merging, with their summed majorants.
struct Active {
    members: Vec<usize>,
    majorant: ScalarField,
    exponent: f64,
}

/// Majorant check `|Eu| ≤ Σ f_α` before any branch is chosen.
fn check_majorants(du: &MatrixField, majorants: &[ScalarField]) -> Result<()> {
    let domain = du.domain();
    let mut worst = (0usize, 0.0f64);
    for c in domain.inside_cells() {
        let total: f64 = majorants.iter().map(|f| f.get(c).abs()).sum();
        let excess = du.get(c).sym().norm() - total;
        if excess > worst.1 {
            worst = (c, excess);
        }
    }
    if worst.1 > 1e-10 {
        return Err(LabError::Contract { what: "|Eu| ≤ Σ f_α violated".into(), cell: worst.0, excess: worst.1 });
    }
    Ok(())
}

/// Shared engine: merges exponents while `‖f_α‖_{p_α} ≥ ‖f_{α+1}‖_{p_{α+1}}`,
/// then runs the classical or the cover construction. Exponents must be
/// nondecreasing; ties are allowed here.
pub(crate) fn korn_engine(
    u: &VectorField,
    majorants: &[ScalarField],
    exponents: &[f64],
    cover: &BallCover,
    plan: &MultiplierPlan,
) -> Result<MixedDecomposition> {
    if majorants.is_empty() || majorants.len() != exponents.len() {
        return Err(LabError::Parameter("need one majorant per exponent".into()));
    }
    let domain = u.domain();
    let du = gradient(u)?;
    if !du.all_finite() {
        return Err(LabError::NonFinite("Du".into()));
    }
    check_majorants(&du, majorants)?;
    let mut active: Vec<Active> = majorants
        .iter()
        .zip(exponents)
        .enumerate()
        .map(|(k, (f, &p))| Active { members: vec![k], majorant: f.clone(), exponent: p })
        .collect();
    let mut branches = Vec::new();
    'merge: while active.len() > 1 {
        for k in 0..active.len() - 1 {
            let a = lp_norm(&active[k].majorant, active[k].exponent)?;
            let b = lp_norm(&active[k + 1].majorant, active[k + 1].exponent)?;
            if a >= b {
                let next = active.remove(k + 1);
                branches.push(Branch::KornMerge { eliminated: next.members[0], into: active[k].members[0] });
                active[k].majorant = active[k].majorant.add(&next.majorant);
                active[k].members.extend(next.members);
                continue 'merge;
            }
        }
        break;
    }
    let n_out = majorants.len();
    let mut parts = vec![MatrixField::zeros(domain); n_out];
    let mut stats = None;
    let constant;
    if active.len() == 1 {
        constant = skew_mean_on(&du, domain.mask());
        parts[active[0].members[0]] = du.sub_const(&constant);
        branches.push(Branch::KornClassical);
    } else {
        let eu = du.map(|a| a.sym());
        let split = split_by_majorants_n(&eu, &active.iter().map(|a| a.majorant.clone()).collect::<Vec<_>>())?;
        let pieces: Vec<BallPieces> = cover
            .balls
            .par_iter()
            .map(|ball| ball_pieces(ball, cover.radius, u, &du, &split, plan))
            .collect::<Result<_>>()?;
        constant = pieces[0].skew;
        let last = active.len() - 1;
        let mut assigned = vec![false; domain.num_cells()];
        for piece in &pieces {
            for (c, vals) in &piece.values {
                if assigned[*c] {
                    continue;
                }
                assigned[*c] = true;
                let mut rest = du.get(*c) - constant;
                for (k, v) in vals.iter().enumerate() {
                    parts[active[k].members[0]].set(*c, *v);
                    rest -= *v;
                }
                parts[active[last].members[0]].set(*c, rest);
            }
        }
        if let Some(c) = domain.inside_cells().find(|&c| !assigned[c]) {
            return Err(LabError::Geometry(format!("cell {c} not reached by the patching")));
        }
        let spread = pieces.iter().map(|p| (p.skew - constant).norm()).fold(0.0, f64::max);
        let count = |kind| cover.balls.iter().filter(|b| b.kind == kind).count();
        branches.push(Branch::KornCover {
            balls: cover.balls.len(),
            graph_balls: count(BallKind::Graph),
            clipped_balls: count(BallKind::Clipped),
        });
        stats = Some(CoverStats {
            balls: cover.balls.len(),
            gamma: cover.gamma,
            alpha: cover.alpha,
            radius: cover.radius,
            max_local_spread: spread,
        });
    }
    if parts.iter().any(|f| !f.all_finite()) {
        return Err(LabError::NonFinite("Korn parts".into()));
    }
    MixedDecomposition::assemble(constant, ConstantKind::Skew, parts, majorants, exponents, branches, stats)
}

/// Reusable geometry for repeated decompositions on one domain.
pub struct KornContext {
    pub cover: BallCover,
    pub plan: MultiplierPlan,
}

impl KornContext {
    pub fn new(domain: &Arc<GridDomain>) -> Result<Self> {
        Ok(KornContext { cover: build_cover(domain)?, plan: MultiplierPlan::new(domain) })
    }
}

fn check_exponents(exponents: &[f64]) -> Result<()> {
    crate::fields::ExponentList::new(exponents.to_vec()).map(|_| ())
}

/// Two-exponent decomposition `Du = S + F + G`, `1 < p < q`.
pub fn korn_mixed(u: &VectorField, f: &ScalarField, g: &ScalarField, p: f64, q: f64) -> Result<MixedDecomposition> {
    let ctx = KornContext::new(u.domain())?;
    korn_mixed_with(&ctx, u, f, g, p, q)
}

pub fn korn_mixed_with(
    ctx: &KornContext,
    u: &VectorField,
    f: &ScalarField,
    g: &ScalarField,
    p: f64,
    q: f64,
) -> Result<MixedDecomposition> {
    check_exponents(&[p, q])?;
    korn_engine(u, &[f.clone(), g.clone()], &[p, q], &ctx.cover, &ctx.plan)
}

/// N-exponent decomposition `Du = S + Σ F_α`.
pub fn korn_multi(u: &VectorField, majorants: &[ScalarField], exponents: &[f64]) -> Result<MixedDecomposition> {
    let ctx = KornContext::new(u.domain())?;
    korn_multi_with(&ctx, u, majorants, exponents)
}

pub fn korn_multi_with(
    ctx: &KornContext,
    u: &VectorField,
    majorants: &[ScalarField],
    exponents: &[f64],
) -> Result<MixedDecomposition> {
    check_exponents(exponents)?;
    korn_engine(u, majorants, exponents, &ctx.cover, &ctx.plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_domain, sym_grad, DomainKind};

    fn domain(kind: DomainKind, res: usize) -> Arc<GridDomain> {
        Arc::new(make_domain(kind, 2, 1.0, res, 0.5).unwrap())
    }

    fn skew(a: f64) -> Mat {
        Mat::from_rows(2, &[0.0, a, -a, 0.0])
    }

    /// Independent norm: sorted summation of |A|^p.
    fn sorted_norm(a: &MatrixField, p: f64, subset: &[bool]) -> f64 {
        let mut terms: Vec<f64> =
            a.domain().inside_cells().filter(|&c| subset[c]).map(|c| a.get(c).norm().powf(p)).collect();
        terms.sort_by(f64::total_cmp);
        (terms.iter().sum::<f64>() * a.domain().cell_volume()).powf(1.0 / p)
    }

    /// Smooth field with a sharp peak (the p-part) on top of a wave (the q-part).
    fn mixed_field(d: &Arc<GridDomain>, s0: Mat, eps: f64) -> (VectorField, ScalarField, ScalarField) {
        let peak = VectorField::from_fn(d, |x| {
            let r2 = (x[0] - 0.3).powi(2) + (x[1] - 0.35).powi(2);
            let bump = (-r2 / 0.002).exp();
            Vector::from_slice(&[eps * bump, -0.5 * eps * bump])
        });
        let wave = VectorField::from_fn(d, |x| {
            Vector::from_slice(&[0.2 * eps * (3.0 * x[1]).sin(), 0.1 * eps * (2.0 * x[0]).cos()])
        });
        let u = VectorField::from_fn(d, |x| s0.mul_vec(x)).add(&peak).add(&wave);
        let f = sym_grad(&peak).unwrap().modulus();
        let g = sym_grad(&wave).unwrap().modulus();
        // |Eu| ≤ |E peak| + |E wave| by the triangle inequality
        (u, f, g)
    }

    #[test]
    fn classical_examples() {
        let d = domain(DomainKind::Square, 16);
        let s0 = skew(0.7);
        let rigid = VectorField::from_fn(&d, |x| s0.mul_vec(x) + Vector::from_slice(&[1.0, 2.0]));
        let (s, ratio) = korn_classical(&rigid, d.mask(), 2.0).unwrap();
        assert!(s.max_abs_diff(&s0) < 1e-12);
        assert_eq!(ratio, 0.0);
        assert!(lp_norm(&gradient(&rigid).unwrap().sub_const(&s), 2.0).unwrap() < 1e-12);
        let diag = VectorField::from_fn(&d, |x| Vector::from_slice(&[2.0 * x[0], -x[1]]));
        let (s, ratio) = korn_classical(&diag, d.mask(), 3.0).unwrap();
        assert!(s.norm() < 1e-12 && (ratio - 1.0).abs() < 1e-12);
        assert!(korn_classical(&diag, &vec![false; d.num_cells()], 2.0).is_err());
    }

    #[test]
    fn classical_ratio_matches_independent_norms() {
        let d = domain(DomainKind::Lshape, 16);
        let u = VectorField::from_fn(&d, |x| skew(0.3).mul_vec(x) + Vector::from_slice(&[x[1] * x[1], x[0] * x[1]]));
        let (s, ratio) = korn_classical(&u, d.mask(), 2.5).unwrap();
        let du = gradient(&u).unwrap();
        let expected = sorted_norm(&du.sub_const(&s), 2.5, d.mask()) / sorted_norm(&du.map(|a| a.sym()), 2.5, d.mask());
        assert!((ratio - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn unit_square_cover_has_nine_balls() {
        let d = domain(DomainKind::Square, 32);
        let cover = build_cover_with_radius(&d, 0.25).unwrap();
        assert_eq!(cover.balls.len(), 9);
        // independent containment check of the flags
        for b in &cover.balls {
            let inside = (0..2).all(|k| b.center[k] - 0.5 >= 0.0 && b.center[k] + 0.5 <= 1.0);
            assert_eq!(b.kind == BallKind::Interior, inside);
        }
        assert!(cover.alpha > 0.0);
        assert!((cover.gamma - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_ball_cover_alpha_is_its_measure() {
        let d = domain(DomainKind::Square, 16);
        let cover = build_cover_with_radius(&d, 2.0).unwrap();
        assert_eq!(cover.balls.len(), 1);
        assert!((cover.alpha - d.measure()).abs() < 1e-12);
    }

    #[test]
    fn graph_cover_gamma_and_kinds() {
        let d = domain(DomainKind::GraphHalfball, 64);
        let cover = build_cover(&d).unwrap();
        assert!((cover.gamma - 1.0 / (2.0 * 1.25f64.sqrt())).abs() < 1e-15);
        assert!((cover.gamma - 0.4472).abs() < 1e-4);
        assert!(cover.balls.iter().any(|b| b.kind == BallKind::Graph));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let d = domain(DomainKind::Square, 8);
        assert!(matches!(build_cover_with_radius(&d, 0.05), Err(LabError::Resolution(_))));
    }

    #[test]
    fn rigid_motion_is_recovered_exactly() {
        for kind in [DomainKind::Square, DomainKind::Lshape, DomainKind::GraphHalfball] {
            let d = domain(kind, 32);
            let s0 = skew(-0.4);
            let u = VectorField::from_fn(&d, |x| s0.mul_vec(x) + Vector::from_slice(&[0.5, -1.0]));
            let z = ScalarField::zeros(&d);
            let dec = korn_mixed(&u, &z, &z, 1.5, 3.0).unwrap();
            assert!(dec.constant.max_abs_diff(&s0) < 1e-12);
            assert!(dec.max_part_sup() < 1e-12);
        }
    }

    #[test]
    fn g_zero_takes_the_classical_branch() {
        let d = domain(DomainKind::Square, 32);
        let (u, _, _) = mixed_field(&d, skew(0.2), 0.1);
        let f = sym_grad(&u).unwrap().modulus();
        let z = ScalarField::zeros(&d);
        let dec = korn_mixed(&u, &f, &z, 2.0, 4.0).unwrap();
        assert!(dec.branches.contains(&Branch::KornClassical));
        assert!(dec.parts[1].values().iter().all(|m| m.norm() == 0.0));
        assert!(dec.reconstruction_error(&gradient(&u).unwrap()) < 1e-12);
    }

    #[test]
    fn cover_branch_reconstructs_du() {
        for kind in [DomainKind::Square, DomainKind::Lshape, DomainKind::GraphHalfball] {
            let d = domain(kind, 32);
            let (u, f, g) = mixed_field(&d, skew(0.2), 0.1);
            // make the q-part dominant so the cover pipeline runs
            let g = g.scale(40.0);
            let dec = korn_mixed(&u, &f, &g, 1.5, 3.0).unwrap();
            assert!(matches!(dec.branches.last(), Some(Branch::KornCover { .. })), "{kind:?} {:?}", dec.branches);
            assert!(dec.reconstruction_error(&gradient(&u).unwrap()) < 1e-10);
            assert!((dec.constant + dec.constant.transpose()).norm() < 1e-14);
            assert!(dec.ratios.iter().all(|r| r.is_finite()));
        }
    }

    #[test]
    fn skew_gauge_shifts_only_the_constant() {
        let d = domain(DomainKind::Square, 32);
        let (u, f, g) = mixed_field(&d, skew(0.0), 0.1);
        let g = g.scale(40.0);
        let s1 = skew(0.9);
        let shifted = u.add(&VectorField::from_fn(&d, |x| s1.mul_vec(x)));
        let a = korn_mixed(&u, &f, &g, 2.0, 4.0).unwrap();
        let b = korn_mixed(&shifted, &f, &g, 2.0, 4.0).unwrap();
        assert!((b.constant - a.constant).max_abs_diff(&s1) < 1e-10);
        for k in 0..2 {
            assert!(a.parts[k].max_abs_diff(&b.parts[k]) < 1e-10);
        }
    }

    #[test]
    fn scaling_equivariance() {
        let d = domain(DomainKind::Lshape, 32);
        let (u, f, g) = mixed_field(&d, skew(0.3), 0.1);
        let g = g.scale(40.0);
        let a = korn_mixed(&u, &f, &g, 1.5, 3.0).unwrap();
        let b = korn_mixed(&u.add(&u), &f.scale(2.0), &g.scale(2.0), 1.5, 3.0).unwrap();
        assert!(b.constant.max_abs_diff(&a.constant.scale(2.0)) < 1e-10);
        for k in 0..2 {
            assert!(b.parts[k].max_abs_diff(&a.parts[k].scale(2.0)) < 1e-10);
        }
    }

    #[test]
    fn one_exponent_is_classical() {
        let d = domain(DomainKind::Square, 16);
        let (u, f, g) = mixed_field(&d, skew(0.3), 0.1);
        let total = f.add(&g);
        let dec = korn_multi(&u, &[total], &[2.0]).unwrap();
        let (s, _) = korn_classical(&u, d.mask(), 2.0).unwrap();
        assert_eq!(dec.constant, s);
    }

    #[test]
    fn two_exponents_match_korn_mixed() {
        let d = domain(DomainKind::Square, 32);
        let (u, f, g) = mixed_field(&d, skew(0.3), 0.1);
        let g = g.scale(40.0);
        let a = korn_mixed(&u, &f, &g, 1.5, 3.0).unwrap();
        let b = korn_multi(&u, &[f, g], &[1.5, 3.0]).unwrap();
        assert_eq!(a.constant, b.constant);
        assert_eq!(a.parts, b.parts);
    }

    #[test]
    fn three_exponents_merge_when_middle_dominates() {
        let d = domain(DomainKind::Square, 32);
        let (u, f, g) = mixed_field(&d, skew(0.3), 0.1);
        let f1 = f.scale(0.5);
        let f2 = f.scale(0.5).add(&g.scale(50.0));
        let f3 = g.scale(0.5).add(&ScalarField::from_fn(&d, |_| 1e-6));
        let dec = korn_multi(&u, &[f1, f2, f3], &[1.5, 2.5, 4.0]).unwrap();
        assert!(dec.branches.contains(&Branch::KornMerge { eliminated: 2, into: 1 }), "{:?}", dec.branches);
        assert!(dec.parts[2].values().iter().all(|m| m.norm() == 0.0));
        assert!(dec.reconstruction_error(&gradient(&u).unwrap()) < 1e-10);
    }

    #[test]
    fn majorant_violation_is_a_contract_error() {
        let d = domain(DomainKind::Square, 16);
        let (u, f, _) = mixed_field(&d, skew(0.3), 0.1);
        let z = ScalarField::zeros(&d);
        assert!(matches!(korn_mixed(&u, &f.scale(0.5), &z, 1.5, 3.0), Err(LabError::Contract { .. })));
        assert!(matches!(korn_mixed(&u, &f, &z, 3.0, 1.5), Err(LabError::Parameter(_))));
    }
}
