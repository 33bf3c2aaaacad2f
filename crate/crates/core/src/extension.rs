//! Extension of `(u, f, g)` across the cone graph `x_n = L|x'|` so that
//! `Ew = f̃ + g̃` keeps holding outside `Ω`.
//!
//! Exterior values are averages of `u` along the downward ray
//! `x − λδ(x)e_n`, `λ ∈ [1, 2]`, weighted by a polynomial `ψ` whose zeroth
//! and first moments are 1 and 0. Off-lattice samples use multilinear
//! interpolation.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fields::{gradient, lp_norm_on, BoundaryGraph, Field, GridDomain, MatrixField, VectorField};
use crate::mat::{Mat, Vector};

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
fn gl_interval(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
    rule.0.iter().zip(&rule.1).map(move |(x, w)| (mid + half * x, half * w))
}

const QUAD_NODES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightShape {
    /// `ψ(λ) = a + bλ` on `[1, 2]`, zero elsewhere (jumps at the endpoints).
    Affine,
    /// `ψ(λ) = (a + bλ)·30(λ−1)²(2−λ)²`, which is C¹ on ℝ.
    Blended,
}

/// Weight `ψ` on `[1, 2]` with `∫ψ = 1` and `∫λψ = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentWeight {
    pub shape: WeightShape,
    pub a: f64,
    pub b: f64,
    /// `[m₀, m₁, m₂]`, `m_k = ∫₁² λᵏψ(λ) dλ`, by the quadrature used in [`extend`].
    pub moments: [f64; 3],
}

impl MomentWeight {
    fn envelope(shape: WeightShape, lambda: f64) -> f64 {
        match shape {
            WeightShape::Affine => 1.0,
            WeightShape::Blended => 30.0 * (lambda - 1.0).powi(2) * (2.0 - lambda).powi(2),
        }
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        if !(1.0..=2.0).contains(&lambda) {
            return 0.0;
        }
        (self.a + self.b * lambda) * MomentWeight::envelope(self.shape, lambda)
    }

    fn build(shape: WeightShape) -> Self {
        let rule = gauss_legendre(QUAD_NODES);
        let raw = |k: i32| -> f64 {
            gl_interval(&rule, 1.0, 2.0).map(|(l, w)| w * l.powi(k) * MomentWeight::envelope(shape, l)).sum()
        };
        // a·∫E + b·∫λE = 1,  a·∫λE + b·∫λ²E = 0
        let (e0, e1, e2) = (raw(0), raw(1), raw(2));
        let det = e0 * e2 - e1 * e1;
        let a = e2 / det;
        let b = -e1 / det;
        let mut weight = MomentWeight { shape, a, b, moments: [0.0; 3] };
        for k in 0..3 {
            weight.moments[k] = gl_interval(&rule, 1.0, 2.0).map(|(l, w)| w * l.powi(k as i32) * weight.eval(l)).sum();
        }
        weight
    }
}

/// The affine weight, `(a, b) = (28, −18)`.
pub fn moment_weight() -> MomentWeight {
    MomentWeight::build(WeightShape::Affine)
}

/// The C¹ variant of [`moment_weight`].
pub fn moment_weight_blended() -> MomentWeight {
    MomentWeight::build(WeightShape::Blended)
}

/// Value, gradient and Hessian of the regularized distance at one point.
#[derive(Clone, Copy, Debug)]
pub struct DistanceJet {
    pub delta: f64,
    pub grad: Vector,
    pub hess: Mat,
}

/// Smoothing strength: the blurring radius of `|x'|` is `κ·(x_n − L|x'|)`.
const KAPPA: f64 = 0.5;

/// `δ = 2(x_n − L·M)/√(1+L²)` with `M = √(r² + ε²) − ε`, `r = |x'|`,
/// `ε = κ(x_n − L r)`.
///
/// `M ≤ r` gives `δ ≥ 2 dist`, and `r − M ≤ ε` gives `δ ≤ (2 + 2κL) dist`.
/// `M` is even in `r` up to an `r³` term, so `δ` is C² across the axis.
fn delta_and_grad(graph: &BoundaryGraph, x: &[f64]) -> (f64, Vector) {
    let n = x.len();
    let l = graph.lipschitz;
    let s = (1.0 + l * l).sqrt();
    let r = x[..n - 1].iter().map(|t| t * t).sum::<f64>().sqrt();
    let eps = KAPPA * (x[n - 1] - l * r);
    let q = (r * r + eps * eps).sqrt();
    let m = q - eps;
    let delta = 2.0 * (x[n - 1] - l * m) / s;
    // ∇M = (x'_ext + (ε − Q)∇ε)/Q, ∇ε = κ(e_n − L x'_ext/r)
    let mut grad_m = Vector::zeros(n);
    if q > 0.0 {
        let mut grad_eps = Vector::unit(n, n - 1).scale(KAPPA);
        if r > 0.0 {
            for k in 0..n - 1 {
                grad_eps[k] -= KAPPA * l * x[k] / r;
            }
        }
        for k in 0..n {
            let xk = if k < n - 1 { x[k] } else { 0.0 };
            grad_m[k] = (xk + (eps - q) * grad_eps[k]) / q;
        }
    }
    let mut grad = Vector::zeros(n);
    for k in 0..n {
        grad[k] = -2.0 * l * grad_m[k] / s;
    }
    grad[n - 1] += 2.0 / s;
    (delta, grad)
}

/// Regularized distance jet at a point above the graph; the Hessian is the
/// central difference of the analytic gradient.
pub fn distance_jet(graph: &BoundaryGraph, x: &[f64]) -> DistanceJet {
    let n = x.len();
    let (delta, grad) = delta_and_grad(graph, x);
    let tau = 1e-4 * graph.distance_to_domain(x).max(1e-12);
    let mut hess = Mat::zeros(n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + tau;
        let (_, gp) = delta_and_grad(graph, &xp);
        xp[j] = x[j] - tau;
        let (_, gm) = delta_and_grad(graph, &xp);
        xp[j] = x[j];
        for i in 0..n {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * tau);
        }
    }
    DistanceJet { delta, grad, hess: hess.sym() }
}

/// Regularized distance sampled on the exterior cells of `B(0, R)`.
#[derive(Clone, Debug)]
pub struct RegularizedDistance {
    /// Cells of the grid box with `|x| < R` above the graph.
    pub exterior: Vec<bool>,
    pub delta: Field<f64>,
    pub grad: VectorField,
    pub hess: MatrixField,
    /// Smallest observed `δ/dist` (at least 2 by construction).
    pub lower_ratio: f64,
    /// Largest observed `δ/dist`, the recorded upper constant `C`.
    pub upper_ratio: f64,
    /// Largest observed `|Dδ|`.
    pub grad_bound: f64,
    /// Largest observed `δ·|D²δ|`.
    pub hess_bound: f64,
}

fn full_box(domain: &GridDomain) -> Result<Arc<GridDomain>> {
    Ok(Arc::new(domain.with_mask(vec![true; domain.num_cells()])?))
}

fn graph_of(domain: &GridDomain) -> Result<&BoundaryGraph> {
    domain.boundary_graph().ok_or_else(|| LabError::Geometry("domain has no boundary graph to extend across".into()))
}

fn above_graph(graph: &BoundaryGraph, x: &Vector) -> bool {
    let xs = x.as_slice();
    let n = xs.len();
    xs[n - 1] >= graph.phi(&xs[..n - 1])
}

pub fn regularized_distance(domain: &GridDomain, radius: f64) -> Result<RegularizedDistance> {
    let graph = graph_of(domain)?;
    let boxed = full_box(domain)?;
    let exterior: Vec<bool> = (0..domain.num_cells())
        .map(|c| {
            let x = domain.center(c);
            x.norm() < radius && above_graph(graph, &x)
        })
        .collect();
    if !exterior.iter().any(|&b| b) {
        return Err(LabError::Geometry("no exterior cells: nothing to extend".into()));
    }
    let mut delta = Field::<f64>::zeros(&boxed);
    let mut grad = VectorField::zeros(&boxed);
    let mut hess = MatrixField::zeros(&boxed);
    let (mut lo, mut hi, mut gb, mut hb) = (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
    for c in (0..domain.num_cells()).filter(|&c| exterior[c]) {
        let x = domain.center(c);
        let jet = distance_jet(graph, x.as_slice());
        let dist = graph.distance_to_domain(x.as_slice());
        if dist > 0.0 {
            lo = lo.min(jet.delta / dist);
            hi = hi.max(jet.delta / dist);
        }
        gb = gb.max(jet.grad.norm());
        hb = hb.max(jet.delta * jet.hess.norm());
        delta.set(c, jet.delta);
        grad.set(c, jet.grad);
        hess.set(c, jet.hess);
    }
    Ok(RegularizedDistance {
        exterior,
        delta,
        grad,
        hess,
        lower_ratio: lo,
        upper_ratio: hi,
        grad_bound: gb,
        hess_bound: hb,
    })
}

/// Output radius `r = R/(2√(1+L²))` for data on `Ω ∩ B(0, R)`.
pub fn extension_radius(data_radius: f64, lipschitz: f64) -> f64 {
    data_radius / (2.0 * (1.0 + lipschitz * lipschitz).sqrt())
}

/// Extended fields on a ball, with the exterior cells and the measured
/// identity residual.
#[derive(Clone, Debug)]
pub struct Extension {
    pub w: VectorField,
    /// Extended strain parts, in input order.
    pub parts: Vec<MatrixField>,
    /// Output cells above the graph (where the formulas were applied).
    pub exterior: Vec<bool>,
    /// `max |Ew − f̃ − g̃|` over exterior cells whose axis neighbors are all
    /// exterior, with `Ew` by central differences.
    pub residual: f64,
    pub center: Vector,
    pub radius: f64,
}

/// Samples fields of `Ω` at off-lattice points.
struct Sampler<'a> {
    domain: &'a GridDomain,
    u: &'a VectorField,
    du: MatrixField,
}

struct Stencil {
    corners: Vec<(usize, f64)>,
    nearest: usize,
}

impl Sampler<'_> {
    fn stencil(&self, y: &Vector) -> Result<Stencil> {
        let d = self.domain;
        let n = d.dim();
        let h = d.spacing();
        let mut base = [0isize; 3];
        let mut frac = [0.0; 3];
        let mut near = vec![0usize; n];
        for k in 0..n {
            let s = (y[k] - d.origin()[k]) / h - 0.5;
            let i0 = s.floor();
            base[k] = i0 as isize;
            frac[k] = s - i0;
            let r = s.round();
            if r < 0.0 || r >= d.shape()[k] as f64 {
                return Err(LabError::Geometry(format!("extension ray leaves the sampled box at {:?}", y.as_slice())));
            }
            near[k] = r as usize;
        }
        let nearest = d.linear_index(&near);
        if !d.inside(nearest) {
            return Err(LabError::Geometry(format!("extension ray leaves the sampled region at {:?}", y.as_slice())));
        }
        let mut corners = Vec::with_capacity(1 << n);
        for bits in 0..(1usize << n) {
            let mut idx = vec![0usize; n];
            let mut weight = 1.0;
            let mut valid = true;
            for k in 0..n {
                let up = (bits >> k) & 1 == 1;
                let i = base[k] + up as isize;
                if i < 0 || i >= d.shape()[k] as isize {
                    valid = false;
                    break;
                }
                idx[k] = i as usize;
                weight *= if up { frac[k] } else { 1.0 - frac[k] };
            }
            if valid {
                let c = d.linear_index(&idx);
                corners.push((c, weight));
            }
        }
        Ok(Stencil { corners, nearest })
    }

    /// Multilinear value; with corners outside `Ω`, a first-order Taylor
    /// expansion from the nearest inside cell (exact on affine fields).
    fn vector(&self, y: &Vector) -> Result<Vector> {
        let st = self.stencil(y)?;
        let n = self.domain.dim();
        if st.corners.iter().all(|&(c, w)| w == 0.0 || self.domain.inside(c)) {
            let mut acc = Vector::zeros(n);
            for &(c, w) in &st.corners {
                if w != 0.0 {
                    acc = acc + self.u.get(c).scale(w);
                }
            }
            return Ok(acc);
        }
        let c = st.nearest;
        Ok(self.u.get(c) + self.du.get(c).mul_vec(&(*y - self.domain.center(c))))
    }

    /// Multilinear value, renormalized over the corners inside `Ω`.
    fn matrix(&self, field: &MatrixField, y: &Vector) -> Result<Mat> {
        let st = self.stencil(y)?;
        let mut acc = Mat::zeros(self.domain.dim());
        let mut total = 0.0;
        for &(c, w) in &st.corners {
            if w != 0.0 && self.domain.inside(c) {
                acc += field.get(c).scale(w);
                total += w;
            }
        }
        if total <= 0.0 {
            return Ok(field.get(st.nearest));
        }
        Ok(acc.scale(1.0 / total))
    }
}

/// One exterior cell: `w` and the extended parts.
fn extend_cell(
    sampler: &Sampler<'_>,
    parts: &[MatrixField],
    weight: &MomentWeight,
    rule: &(Vec<f64>, Vec<f64>),
    x: &Vector,
    jet: &DistanceJet,
) -> Result<(Vector, Vec<Mat>)> {
    let n = x.dim();
    let en = Vector::unit(n, n - 1);
    let ray = |t: f64| *x - en.scale(t * jet.delta);
    let dd = Mat::outer(&jet.grad, &jet.grad);
    let mut w = Vector::zeros(n);
    let mut tilde = vec![Mat::zeros(n); parts.len()];
    for (lambda, wl) in gl_interval(rule, 1.0, 2.0) {
        let c = wl * weight.eval(lambda);
        let y = ray(lambda);
        let uy = sampler.vector(&y)?;
        w = w + (uy - jet.grad.scale(lambda * uy[n - 1])).scale(c);
        for (field, out) in parts.iter().zip(tilde.iter_mut()) {
            let m = sampler.matrix(field, &y)?;
            let col = m.column(n - 1);
            // u_n(x − λδe_n) = u_n(x − δe_n) − ∫₁^λ (Eu)_nn(x − sδe_n) δ ds, and the
            // first term drops out against ∫λψ = 0
            let mut inner = 0.0;
            for (s, ws) in gl_interval(rule, 1.0, lambda) {
                inner += ws * sampler.matrix(field, &ray(s))?[(n - 1, n - 1)] * jet.delta;
            }
            let term = m - Mat::outer(&col, &jet.grad).scale(lambda) - Mat::outer(&jet.grad, &col).scale(lambda)
                + dd.scale(lambda * lambda * m[(n - 1, n - 1)])
                + jet.hess.scale(lambda * inner);
            *out += term.scale(c);
        }
    }
    Ok((w, tilde))
}

/// Central-difference symmetric gradient at `c`; `None` unless both
/// neighbors along every axis lie in `subset`.
fn sym_grad_within(w: &VectorField, subset: &[bool], c: usize) -> Option<Mat> {
    let d = w.domain();
    let n = d.dim();
    let h = d.spacing();
    let mut m = Mat::zeros(n);
    let pick = |step: isize, axis: usize| d.neighbor(c, axis, step).filter(|&nb| subset[nb]);
    for j in 0..n {
        let (ua, ub) = (w.get(pick(-1, j)?), w.get(pick(1, j)?));
        for i in 0..n {
            m[(i, j)] = (ub[i] - ua[i]) / (2.0 * h);
        }
    }
    Some(m.sym())
}

fn check_decomposition(u: &VectorField, parts: &[MatrixField]) -> Result<()> {
    if parts.iter().any(|f| f.domain() != u.domain()) {
        return Err(LabError::Input("u and the strain parts must share one domain".into()));
    }
    let eu = crate::fields::sym_grad(u)?;
    for c in u.domain().inside_cells() {
        let e = eu.get(c);
        let total = parts.iter().fold(Mat::zeros(e.dim()), |acc, f| acc + f.get(c));
        let gap = (e - total).norm();
        if gap > 1e-10 * (1.0 + e.norm()) {
            return Err(LabError::Input(format!("Eu differs from the sum of the parts at cell {c} (gap {gap:.3e})")));
        }
    }
    Ok(())
}

/// Extension from `Ω ∩ B(0, R)` to `B(0, r)`, `r = R/(2√(1+L²))`.
pub fn extend(u: &VectorField, f: &MatrixField, g: &MatrixField, data_radius: f64) -> Result<Extension> {
    let graph = graph_of(u.domain())?;
    let r = extension_radius(data_radius, graph.lipschitz);
    extend_ball(u, &[f.clone(), g.clone()], &Vector::zeros(u.domain().dim()), r, &moment_weight())
}

/// Cells of `B(center, radius)` that lie outside `Ω`, provided every one of
/// them is above the graph.
fn exterior_cells(
    domain: &GridDomain,
    graph: &BoundaryGraph,
    center: &Vector,
    radius: f64,
) -> Result<(Vec<bool>, Vec<bool>)> {
    let in_ball: Vec<bool> = (0..domain.num_cells()).map(|c| (domain.center(c) - *center).norm() < radius).collect();
    let exterior: Vec<bool> = (0..domain.num_cells())
        .map(|c| in_ball[c] && !domain.inside(c) && above_graph(graph, &domain.center(c)))
        .collect();
    if let Some(c) = (0..domain.num_cells()).find(|&c| in_ball[c] && !domain.inside(c) && !exterior[c]) {
        return Err(LabError::Geometry(format!("output ball reaches below the graph outside the data (cell {c})")));
    }
    // a ball clipped by the grid box is not a full ball
    let h = domain.spacing();
    for k in 0..domain.dim() {
        let lo = domain.origin()[k];
        let hi = lo + domain.shape()[k] as f64 * h;
        if center[k] - radius < lo || center[k] + radius > hi {
            return Err(LabError::Geometry("output ball leaves the grid box".into()));
        }
    }
    Ok((in_ball, exterior))
}

/// Whether [`extend_ball`] onto `B(center, radius)` would find all of its
/// ray samples inside `Ω`. Depends on geometry only.
pub fn extension_feasible(domain: &GridDomain, center: &Vector, radius: f64) -> bool {
    let Some(graph) = domain.boundary_graph() else { return false };
    let Ok((_, exterior)) = exterior_cells(domain, graph, center, radius) else { return false };
    let rule = gauss_legendre(QUAD_NODES);
    let n = domain.dim();
    let en = Vector::unit(n, n - 1);
    let h = domain.spacing();
    (0..domain.num_cells()).filter(|&c| exterior[c]).all(|c| {
        let x = domain.center(c);
        let delta = distance_jet(graph, x.as_slice()).delta;
        let mut ts: Vec<f64> = gl_interval(&rule, 1.0, 2.0).map(|(t, _)| t).collect();
        ts.extend([1.0, 2.0]);
        ts.iter().all(|&t| {
            let y = x - en.scale(t * delta);
            let idx: Option<Vec<usize>> = (0..n)
                .map(|k| {
                    let r = ((y[k] - domain.origin()[k]) / h - 0.5).round();
                    (r >= 0.0 && r < domain.shape()[k] as f64).then_some(r as usize)
                })
                .collect();
            idx.is_some_and(|idx| domain.inside(domain.linear_index(&idx)))
        })
    })
}

/// Extension of `u` and each strain part onto `B(center, radius)`; rays may
/// sample anywhere in `Ω`.
pub fn extend_ball(
    u: &VectorField,
    parts: &[MatrixField],
    center: &Vector,
    radius: f64,
    weight: &MomentWeight,
) -> Result<Extension> {
    let domain = u.domain();
    let graph = graph_of(domain)?.clone();
    check_decomposition(u, parts)?;
    let (in_ball, exterior) = exterior_cells(domain, &graph, center, radius)?;
    let out_domain = Arc::new(domain.with_mask(in_ball)?);
    let sampler = Sampler { domain, u, du: gradient(u)? };
    let rule = gauss_legendre(QUAD_NODES);
    let cells: Vec<usize> = (0..domain.num_cells()).filter(|&c| exterior[c]).collect();
    let results: Vec<Result<(usize, (Vector, Vec<Mat>))>> = cells
        .par_iter()
        .map(|&c| {
            let x = domain.center(c);
            let jet = distance_jet(&graph, x.as_slice());
            extend_cell(&sampler, parts, weight, &rule, &x, &jet).map(|v| (c, v))
        })
        .collect();
    let n = domain.dim();
    let mut wv = vec![Vector::zeros(n); domain.num_cells()];
    let mut pv = vec![vec![Mat::zeros(n); domain.num_cells()]; parts.len()];
    for c in out_domain.inside_cells().filter(|&c| domain.inside(c)) {
        wv[c] = u.get(c);
        for (k, f) in parts.iter().enumerate() {
            pv[k][c] = f.get(c);
        }
    }
    for r in results {
        let (c, (w, tilde)) = r?;
        wv[c] = w;
        for (k, m) in tilde.into_iter().enumerate() {
            pv[k][c] = m;
        }
    }
    let w = Field::from_values(&out_domain, wv)?;
    let parts_ext = pv.into_iter().map(|v| Field::from_values(&out_domain, v)).collect::<Result<Vec<_>>>()?;
    let residual = cells
        .iter()
        .filter_map(|&c| {
            sym_grad_within(&w, &exterior, c).map(|e| parts_ext.iter().fold(e, |acc, f| acc - f.get(c)).norm())
        })
        .fold(0.0, f64::max);
    Ok(Extension { w, parts: parts_ext, exterior, residual, center: *center, radius })
}

/// `‖F̃‖_{L^p(B(c,r))} / ‖F‖_{L^p(Ω ∩ B(c,R))}`.
pub fn extension_ratio(
    ext: &Extension,
    tilde: &MatrixField,
    original: &MatrixField,
    p: f64,
    data_radius: f64,
) -> Result<f64> {
    let d = original.domain();
    let near: Vec<bool> = (0..d.num_cells()).map(|c| (d.center(c) - ext.center).norm() < data_radius).collect();
    let den = lp_norm_on(original, p, &near)?;
    let num = crate::fields::lp_norm(tilde, p)?;
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}
