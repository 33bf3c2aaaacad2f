//! Regular grids, cell-indexed fields, finite-difference calculus and
//! midpoint L^p quadrature.
//!
//! Cells are indexed row-major with the last axis fastest. Cell `i` has its
//! center at `origin + (idx + ½)·h`. Only cells whose mask bit is set belong
//! to the domain; values stored at outside cells are zero and are never read.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::mat::{Mat, Vector};

/// Boundary description `∂Ω = {x_n = φ(x')}` with `φ(x') = L·|x'|`,
/// `Ω` lying below the graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGraph {
    /// Lipschitz constant L of φ.
    pub lipschitz: f64,
    /// φ sampled at the tangential coordinates of every grid column.
    pub samples: Vec<(Vec<f64>, f64)>,
}

impl BoundaryGraph {
    pub fn new(lipschitz: f64, columns: &[Vec<f64>]) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(LabError::Parameter(format!("Lipschitz constant {lipschitz}")));
        }
        let phi = |xp: &[f64]| lipschitz * xp.iter().map(|t| t * t).sum::<f64>().sqrt();
        let samples: Vec<(Vec<f64>, f64)> = columns.iter().map(|c| (c.clone(), phi(c))).collect();
        let graph = BoundaryGraph { lipschitz, samples };
        graph.check_lipschitz()?;
        Ok(graph)
    }

    /// φ(x') for a tangential coordinate x'.
    pub fn phi(&self, tangential: &[f64]) -> f64 {
        self.lipschitz * tangential.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    /// Verifies |φ(a) − φ(b)| ≤ L|a − b| on all sample pairs.
    pub fn check_lipschitz(&self) -> Result<()> {
        for (i, (a, fa)) in self.samples.iter().enumerate() {
            for (b, fb) in &self.samples[i + 1..] {
                let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                if (fa - fb).abs() > self.lipschitz * d * (1.0 + 1e-12) + 1e-14 {
                    return Err(LabError::Input(format!(
                        "boundary samples violate Lipschitz bound {}",
                        self.lipschitz
                    )));
                }
            }
        }
        Ok(())
    }

    /// Euclidean distance from `x` to the closed set `{x_n ≤ φ(x')}`.
    ///
    /// The graph is a cone; in the half-plane spanned by `e_n` and `x'` the
    /// distance reduces to the distance from `(|x'|, x_n)` to the ray
    /// `{(s, L s) : s ≥ 0}`.
    pub fn distance_to_domain(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let rho = x[..n - 1].iter().map(|t| t * t).sum::<f64>().sqrt();
        let z = x[n - 1];
        if z <= self.lipschitz * rho {
            return 0.0;
        }
        let l = self.lipschitz;
        let s = ((rho + l * z) / (1.0 + l * l)).max(0.0);
        ((rho - s).powi(2) + (z - l * s).powi(2)).sqrt()
    }
}

/// The analytic test domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Square,
    Lshape,
    GraphHalfball,
}

impl std::str::FromStr for DomainKind {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(DomainKind::Square),
            "lshape" => Ok(DomainKind::Lshape),
            "graph_halfball" => Ok(DomainKind::GraphHalfball),
            other => Err(LabError::Parameter(format!("unknown domain kind '{other}'"))),
        }
    }
}

/// A regular n-D grid with an inside-mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    dim: usize,
    shape: Vec<usize>,
    spacing: f64,
    origin: Vec<f64>,
    mask: Vec<bool>,
    boundary_graph: Option<BoundaryGraph>,
}

impl GridDomain {
    /// Builds a domain from raw parts; checks shape consistency and that the
    /// mask is nonempty and face-connected.
    pub fn new(
        shape: Vec<usize>,
        spacing: f64,
        origin: Vec<f64>,
        mask: Vec<bool>,
        boundary_graph: Option<BoundaryGraph>,
    ) -> Result<Self> {
        let dim = shape.len();
        if !(dim == 2 || dim == 3) {
            return Err(LabError::Parameter(format!("dimension must be 2 or 3, got {dim}")));
        }
        if origin.len() != dim {
            return Err(LabError::Input("origin length does not match dimension".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(LabError::Parameter(format!("spacing must be positive, got {spacing}")));
        }
        if mask.len() != shape.iter().product::<usize>() {
            return Err(LabError::Input("mask length does not match shape".into()));
        }
        let domain = GridDomain { dim, shape, spacing, origin, mask, boundary_graph };
        domain.check_connected()?;
        Ok(domain)
    }

    /// Same geometry, different mask (which must again be connected).
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        GridDomain::new(self.shape.clone(), self.spacing, self.origin.clone(), mask, self.boundary_graph.clone())
    }

    fn check_connected(&self) -> Result<()> {
        let Some(start) = self.mask.iter().position(|&m| m) else {
            return Err(LabError::DegenerateDomain("mask is empty".into()));
        };
        let mut seen = vec![false; self.mask.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(c) = queue.pop_front() {
            for axis in 0..self.dim {
                for step in [-1, 1] {
                    if let Some(nb) = self.neighbor(c, axis, step) {
                        if self.mask[nb] && !seen[nb] {
                            seen[nb] = true;
                            count += 1;
                            queue.push_back(nb);
                        }
                    }
                }
            }
        }
        let total = self.mask.iter().filter(|&&m| m).count();
        if count != total {
            return Err(LabError::DegenerateDomain(format!(
                "mask is not connected ({count} of {total} cells reachable)"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn boundary_graph(&self) -> Option<&BoundaryGraph> {
        self.boundary_graph.as_ref()
    }

    #[inline]
    pub fn num_cells(&self) -> usize {
        self.mask.len()
    }

    #[inline]
    pub fn inside(&self, cell: usize) -> bool {
        self.mask[cell]
    }

    pub fn inside_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn inside_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Measure hⁿ of one cell.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// |Ω| of the discrete domain.
    pub fn measure(&self) -> f64 {
        self.inside_count() as f64 * self.cell_volume()
    }

    pub fn multi_index(&self, cell: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut rest = cell;
        for k in (0..self.dim).rev() {
            idx[k] = rest % self.shape[k];
            rest /= self.shape[k];
        }
        idx
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &s)| acc * s + i)
    }

    fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    /// Neighbor along `axis` in direction `step` (±1), if inside the box.
    #[inline]
    pub fn neighbor(&self, cell: usize, axis: usize, step: isize) -> Option<usize> {
        let stride = self.stride(axis);
        let i = (cell / stride) % self.shape[axis];
        if step < 0 {
            (i > 0).then(|| cell - stride)
        } else {
            (i + 1 < self.shape[axis]).then(|| cell + stride)
        }
    }

    /// Neighbor along `axis` that is inside the mask.
    #[inline]
    pub fn inside_neighbor(&self, cell: usize, axis: usize, step: isize) -> Option<usize> {
        self.neighbor(cell, axis, step).filter(|&nb| self.mask[nb])
    }

    pub fn center(&self, cell: usize) -> Vector {
        let idx = self.multi_index(cell);
        let mut x = Vector::zeros(self.dim);
        for k in 0..self.dim {
            x[k] = self.origin[k] + (idx[k] as f64 + 0.5) * self.spacing;
        }
        x
    }

    /// Diameter of the bounding box of the inside cells.
    pub fn diameter(&self) -> f64 {
        let mut lo = vec![usize::MAX; self.dim];
        let mut hi = vec![0usize; self.dim];
        for c in self.inside_cells() {
            for (k, &i) in self.multi_index(c).iter().enumerate() {
                lo[k] = lo[k].min(i);
                hi[k] = hi[k].max(i);
            }
        }
        lo.iter().zip(&hi).map(|(&l, &h)| ((h - l + 1) as f64 * self.spacing).powi(2)).sum::<f64>().sqrt()
    }

    /// Cells of the box (inside or not) whose center lies in B(center, r).
    pub fn cells_in_ball(&self, center: &Vector, r: f64) -> Vec<bool> {
        (0..self.num_cells()).map(|c| (self.center(c) - *center).norm() <= r).collect()
    }
}

/// Test-domain factory.
///
/// * `square`: the box `[0, size]ⁿ`, fully inside.
/// * `lshape`: the square minus the quadrant `x₁, x₂ > size/2`.
/// * `graph_halfball`: `B(0, size) ∩ {x_n < L|x'|}` on the box `[-size, size]ⁿ`.
pub fn make_domain(kind: DomainKind, dim: usize, size: f64, resolution: usize, lipschitz: f64) -> Result<GridDomain> {
    if resolution < 8 {
        return Err(LabError::Parameter(format!("resolution must be ≥ 8, got {resolution}")));
    }
    if !(size > 0.0 && size.is_finite()) {
        return Err(LabError::Parameter(format!("size must be positive, got {size}")));
    }
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(LabError::Parameter(format!("lipschitz_L must be ≥ 0, got {lipschitz}")));
    }
    if !(dim == 2 || dim == 3) {
        return Err(LabError::Parameter(format!("dimension must be 2 or 3, got {dim}")));
    }
    let shape = vec![resolution; dim];
    let total: usize = shape.iter().product();
    match kind {
        DomainKind::Square => GridDomain::new(shape, size / resolution as f64, vec![0.0; dim], vec![true; total], None),
        DomainKind::Lshape => {
            let h = size / resolution as f64;
            let proto = GridDomain {
                dim,
                shape: shape.clone(),
                spacing: h,
                origin: vec![0.0; dim],
                mask: vec![true; total],
                boundary_graph: None,
            };
            let half = size / 2.0;
            let mask = (0..total)
                .map(|c| {
                    let x = proto.center(c);
                    !(x[0] > half && x[1] > half)
                })
                .collect();
            GridDomain::new(shape, h, vec![0.0; dim], mask, None)
        }
        DomainKind::GraphHalfball => {
            let h = 2.0 * size / resolution as f64;
            let mut proto = GridDomain {
                dim,
                shape: shape.clone(),
                spacing: h,
                origin: vec![-size; dim],
                mask: vec![true; total],
                boundary_graph: None,
            };
            // one sample per grid column in the tangential coordinates
            let mut columns = Vec::new();
            for c in 0..total {
                let idx = proto.multi_index(c);
                if idx[dim - 1] == 0 {
                    let x = proto.center(c);
                    columns.push(x.as_slice()[..dim - 1].to_vec());
                }
            }
            let graph = BoundaryGraph::new(lipschitz, &columns)?;
            let mask = (0..total)
                .map(|c| {
                    let x = proto.center(c);
                    let xs = x.as_slice();
                    x.norm() < size && xs[dim - 1] < graph.phi(&xs[..dim - 1])
                })
                .collect();
            proto.mask = mask;
            proto.boundary_graph = Some(graph);
            proto.check_connected()?;
            Ok(proto)
        }
    }
}

/// Pointwise values a field can carry.
pub trait Pointwise: Copy + Send + Sync {
    /// Pointwise modulus: |·| for scalars, Euclidean for vectors, Frobenius
    /// for matrices.
    fn modulus(&self) -> f64;
    fn zero(dim: usize) -> Self;
    fn finite(&self) -> bool;
}

impl Pointwise for f64 {
    fn modulus(&self) -> f64 {
        self.abs()
    }
    fn zero(_: usize) -> Self {
        0.0
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

impl Pointwise for Vector {
    fn modulus(&self) -> f64 {
        self.norm()
    }
    fn zero(dim: usize) -> Self {
        Vector::zeros(dim)
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

impl Pointwise for Mat {
    fn modulus(&self) -> f64 {
        self.norm()
    }
    fn zero(dim: usize) -> Self {
        Mat::zeros(dim)
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
}

/// Cell-indexed values over a [`GridDomain`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    domain: Arc<GridDomain>,
    values: Vec<T>,
}

pub type ScalarField = Field<f64>;
pub type VectorField = Field<Vector>;
pub type MatrixField = Field<Mat>;

impl<T: Pointwise> Field<T> {
    pub fn zeros(domain: &Arc<GridDomain>) -> Self {
        Field { domain: domain.clone(), values: vec![T::zero(domain.dim()); domain.num_cells()] }
    }

    /// Evaluates `f` at every inside cell center; outside cells are zero.
    pub fn from_fn(domain: &Arc<GridDomain>, f: impl Fn(&Vector) -> T) -> Self {
        let values = (0..domain.num_cells())
            .map(|c| if domain.inside(c) { f(&domain.center(c)) } else { T::zero(domain.dim()) })
            .collect();
        Field { domain: domain.clone(), values }
    }

    /// Builds from per-cell values, checking length and finiteness on the mask.
    pub fn from_values(domain: &Arc<GridDomain>, values: Vec<T>) -> Result<Self> {
        if values.len() != domain.num_cells() {
            return Err(LabError::Input(format!(
                "field has {} values, domain has {} cells",
                values.len(),
                domain.num_cells()
            )));
        }
        if let Some(c) = domain.inside_cells().find(|&c| !values[c].finite()) {
            return Err(LabError::Input(format!("non-finite value at cell {c}")));
        }
        let mut values = values;
        for (c, v) in values.iter_mut().enumerate() {
            if !domain.inside(c) {
                *v = T::zero(domain.dim());
            }
        }
        Ok(Field { domain: domain.clone(), values })
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, cell: usize) -> T {
        self.values[cell]
    }

    #[inline]
    pub fn set(&mut self, cell: usize, v: T) {
        self.values[cell] = v;
    }

    /// Applies `f` to every inside value.
    pub fn map<U: Pointwise>(&self, f: impl Fn(&T) -> U) -> Field<U> {
        let dim = self.domain.dim();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(c, v)| if self.domain.inside(c) { f(v) } else { U::zero(dim) })
            .collect();
        Field { domain: self.domain.clone(), values }
    }

    /// Pointwise modulus as a scalar field.
    pub fn modulus(&self) -> ScalarField {
        self.map(|v| v.modulus())
    }

    /// Zeroes the values outside `subset` (restriction followed by extension by zero).
    pub fn restrict(&self, subset: &[bool]) -> Self {
        let dim = self.domain.dim();
        let values = self.values.iter().zip(subset).map(|(v, &s)| if s { *v } else { T::zero(dim) }).collect();
        Field { domain: self.domain.clone(), values }
    }

    pub fn all_finite(&self) -> bool {
        self.domain.inside_cells().all(|c| self.values[c].finite())
    }

    /// Reattaches the values to another domain with the same box.
    pub fn with_domain(&self, domain: &Arc<GridDomain>) -> Result<Self> {
        Field::from_values(domain, self.values.clone())
    }
}

impl Field<Mat> {
    /// Cell average over the mask.
    pub fn mean(&self) -> Mat {
        self.mean_on(self.domain.mask())
    }

    /// Cell average over `subset ∩ mask`; zero for an empty set.
    pub fn mean_on(&self, subset: &[bool]) -> Mat {
        let mut acc = Mat::zeros(self.domain.dim());
        let mut count = 0usize;
        for c in self.domain.inside_cells().filter(|&c| subset[c]) {
            acc += self.values[c];
            count += 1;
        }
        if count == 0 {
            acc
        } else {
            acc.scale(1.0 / count as f64)
        }
    }

    /// Largest entry-wise difference over the mask.
    pub fn max_abs_diff(&self, other: &MatrixField) -> f64 {
        self.domain.inside_cells().map(|c| self.values[c].max_abs_diff(&other.values[c])).fold(0.0, f64::max)
    }

    pub fn add(&self, other: &MatrixField) -> MatrixField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a + *b).collect();
        Field { domain: self.domain.clone(), values }
    }

    pub fn sub(&self, other: &MatrixField) -> MatrixField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a - *b).collect();
        Field { domain: self.domain.clone(), values }
    }

    pub fn scale(&self, s: f64) -> MatrixField {
        self.map(|a| a.scale(s))
    }

    /// Left multiplication by a constant matrix at every cell.
    pub fn left_mul(&self, q: &Mat) -> MatrixField {
        self.map(|a| *q * *a)
    }

    /// Subtracts a constant matrix at every inside cell.
    pub fn sub_const(&self, m: &Mat) -> MatrixField {
        self.map(|a| *a - *m)
    }
}

impl Field<f64> {
    pub fn add(&self, other: &ScalarField) -> ScalarField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Field { domain: self.domain.clone(), values }
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        self.map(|a| a * s)
    }

    /// ∫ over the mask.
    pub fn integral(&self) -> f64 {
        self.domain.inside_cells().map(|c| self.values[c]).sum::<f64>() * self.domain.cell_volume()
    }
}

impl Field<Vector> {
    pub fn add(&self, other: &VectorField) -> VectorField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a + *b).collect();
        Field { domain: self.domain.clone(), values }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a - *b).collect();
        Field { domain: self.domain.clone(), values }
    }

    /// Component `i` as a scalar field.
    pub fn component(&self, i: usize) -> ScalarField {
        self.map(|v| v[i])
    }

    /// Pointwise `x ↦ Q u(x)`.
    pub fn left_mul(&self, q: &Mat) -> VectorField {
        self.map(|v| q.mul_vec(v))
    }
}

/// Strictly increasing exponents `1 < p₁ < … < p_N < ∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ExponentList(Vec<f64>);

impl ExponentList {
    pub fn new(exponents: Vec<f64>) -> Result<Self> {
        if exponents.is_empty() {
            return Err(LabError::Parameter("exponent list is empty".into()));
        }
        if exponents.iter().any(|&p| !(p.is_finite() && p > 1.0)) {
            return Err(LabError::Parameter(format!("exponents must be finite and > 1: {exponents:?}")));
        }
        if exponents.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::Parameter(format!("exponents must be strictly increasing: {exponents:?}")));
        }
        Ok(ExponentList(exponents))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ExponentList {
    type Error = LabError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ExponentList::new(v)
    }
}

impl From<ExponentList> for Vec<f64> {
    fn from(e: ExponentList) -> Self {
        e.0
    }
}

/// Discrete gradient `(Du)_{ij} = ∂u_i/∂x_j`: central differences where both
/// neighbors are inside, one-sided otherwise.
pub fn gradient(u: &VectorField) -> Result<MatrixField> {
    let domain = u.domain();
    let n = domain.dim();
    let h = domain.spacing();
    let mut out = MatrixField::zeros(domain);
    for c in domain.inside_cells() {
        let mut m = Mat::zeros(n);
        for j in 0..n {
            let lo = domain.inside_neighbor(c, j, -1);
            let hi = domain.inside_neighbor(c, j, 1);
            let (a, b, w) = match (lo, hi) {
                (Some(l), Some(r)) => (l, r, 2.0 * h),
                (None, Some(r)) => (c, r, h),
                (Some(l), None) => (l, c, h),
                (None, None) => {
                    return Err(LabError::Stencil { cell: c, reason: format!("no inside neighbor along axis {j}") })
                }
            };
            let (ua, ub) = (u.get(a), u.get(b));
            for i in 0..n {
                m[(i, j)] = (ub[i] - ua[i]) / w;
            }
        }
        out.set(c, m);
    }
    Ok(out)
}

/// Symmetric gradient `Eu = (Du + Duᵀ)/2`.
pub fn sym_grad(u: &VectorField) -> Result<MatrixField> {
    Ok(gradient(u)?.map(|a| a.sym()))
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(LabError::Parameter(format!("L^p exponent must be ≥ 1, got {p}")));
    }
    Ok(())
}

/// Midpoint-rule `L^p` norm over the mask; `p = ∞` gives the max.
pub fn lp_norm<T: Pointwise>(field: &Field<T>, p: f64) -> Result<f64> {
    lp_norm_on(field, p, field.domain().mask())
}

/// `L^p` norm over `subset ∩ mask`.
pub fn lp_norm_on<T: Pointwise>(field: &Field<T>, p: f64, subset: &[bool]) -> Result<f64> {
    check_exponent(p)?;
    let domain = field.domain();
    let cells = domain.inside_cells().filter(|&c| subset[c]);
    if p.is_infinite() {
        return Ok(cells.map(|c| field.get(c).modulus()).fold(0.0, f64::max));
    }
    let sum: f64 = cells.map(|c| field.get(c).modulus().powf(p)).sum();
    Ok((sum * domain.cell_volume()).powf(1.0 / p))
}

/// `‖A‖_p^p`, the integral of `|A|^p` (for finite `p`).
pub fn lp_norm_pow<T: Pointwise>(field: &Field<T>, p: f64) -> Result<f64> {
    check_exponent(p)?;
    if p.is_infinite() {
        return Err(LabError::Parameter("p-th power of the sup norm is undefined".into()));
    }
    let domain = field.domain();
    Ok(domain.inside_cells().map(|c| field.get(c).modulus().powf(p)).sum::<f64>() * domain.cell_volume())
}

/// Splits `A` pointwise in proportion to the majorants,
/// `F = |f|/(|f|+|g|)·A`, `G = |g|/(|f|+|g|)·A`.
///
/// Requires `|A| ≤ |f| + |g|` up to 1e-10; reports the worst cell otherwise.
pub fn split_by_majorants(a: &MatrixField, f: &ScalarField, g: &ScalarField) -> Result<(MatrixField, MatrixField)> {
    let mut parts = split_by_majorants_n(a, &[f.clone(), g.clone()])?;
    let g_part = parts.pop().expect("two parts");
    let f_part = parts.pop().expect("two parts");
    Ok((f_part, g_part))
}

/// N-term version of [`split_by_majorants`]: `F_α = |f_α|/Σ|f_β| · A`.
///
/// The last part absorbs the rounding so that `Σ F_α = A` holds exactly.
pub fn split_by_majorants_n(a: &MatrixField, majorants: &[ScalarField]) -> Result<Vec<MatrixField>> {
    if majorants.is_empty() {
        return Err(LabError::Parameter("no majorants given".into()));
    }
    let domain = a.domain();
    let mut worst = (0usize, 0.0f64);
    for c in domain.inside_cells() {
        let total: f64 = majorants.iter().map(|f| f.get(c).abs()).sum();
        let excess = a.get(c).norm() - total;
        if excess > worst.1 {
            worst = (c, excess);
        }
    }
    if worst.1 > 1e-10 {
        return Err(LabError::Contract {
            what: "majorant |A| ≤ Σ|f_α| violated".into(),
            cell: worst.0,
            excess: worst.1,
        });
    }
    let n = domain.dim();
    let mut parts: Vec<MatrixField> = majorants.iter().map(|_| MatrixField::zeros(domain)).collect();
    for c in domain.inside_cells() {
        let weights: Vec<f64> = majorants.iter().map(|f| f.get(c).abs()).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let value = a.get(c);
        let mut assigned = Mat::zeros(n);
        let last = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            let part = if k == last { value - assigned } else { value.scale(w / total) };
            if k != last {
                assigned += part;
            }
            parts[k].set(c, part);
        }
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn square(res: usize) -> Arc<GridDomain> {
        Arc::new(make_domain(DomainKind::Square, 2, 1.0, res, 0.0).unwrap())
    }

    #[test]
    fn square_domain_is_full_box() {
        let d = square(32);
        assert_eq!(d.inside_count(), 32 * 32);
        assert_eq!(d.spacing(), 1.0 / 32.0);
    }

    #[test]
    fn lshape_removes_upper_right_quadrant() {
        let d = make_domain(DomainKind::Lshape, 2, 1.0, 32, 1.0).unwrap();
        assert_eq!(d.inside_count(), 32 * 32 - 16 * 16);
        for c in 0..d.num_cells() {
            let x = d.center(c);
            assert_eq!(d.inside(c), !(x[0] > 0.5 && x[1] > 0.5));
        }
    }

    #[test]
    fn graph_halfball_matches_pointwise_phi() {
        let d = make_domain(DomainKind::GraphHalfball, 2, 1.0, 64, 0.5).unwrap();
        let g = d.boundary_graph().unwrap();
        assert_eq!(g.lipschitz, 0.5);
        for c in 0..d.num_cells() {
            let x = d.center(c);
            let expected = x[0] * x[0] + x[1] * x[1] < 1.0 && x[1] < 0.5 * x[0].abs();
            assert_eq!(d.inside(c), expected);
        }
        // every inside cell admits a gradient stencil
        let d = Arc::new(d);
        let u = VectorField::from_fn(&d, |x| *x);
        assert!(gradient(&u).is_ok());
    }

    #[test]
    fn rejects_small_resolution_and_disconnected_mask() {
        assert!(matches!(make_domain(DomainKind::Square, 2, 1.0, 4, 0.0), Err(LabError::Parameter(_))));
        let mut mask = vec![false; 64];
        mask[0] = true;
        mask[63] = true;
        assert!(matches!(
            GridDomain::new(vec![8, 8], 0.125, vec![0.0, 0.0], mask, None),
            Err(LabError::DegenerateDomain(_))
        ));
    }

    #[test]
    fn gradient_exact_on_affine_fields() {
        let d = Arc::new(make_domain(DomainKind::Lshape, 2, 1.0, 16, 0.0).unwrap());
        let a = Mat::from_rows(2, &[0.3, -1.2, 2.0, 0.7]);
        let b = Vector::from_slice(&[0.5, -0.25]);
        let u = VectorField::from_fn(&d, |x| a.mul_vec(x) + b);
        let du = gradient(&u).unwrap();
        for c in d.inside_cells() {
            assert!(du.get(c).max_abs_diff(&a) < 1e-12);
        }
        let constant = VectorField::from_fn(&d, |_| b);
        assert!(gradient(&constant).unwrap().values().iter().all(|m| m.norm() == 0.0));
    }

    #[test]
    fn gradient_second_order_in_interior() {
        let err = |res: usize| {
            let d = square(res);
            let u = VectorField::from_fn(&d, |x| Vector::from_slice(&[x[0].sin(), 0.0]));
            let du = gradient(&u).unwrap();
            d.inside_cells()
                .filter(|&c| {
                    (0..2).all(|k| d.inside_neighbor(c, k, -1).is_some() && d.inside_neighbor(c, k, 1).is_some())
                })
                .map(|c| (du.get(c)[(0, 0)] - d.center(c)[0].cos()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(16), err(32));
        assert!(e1 / e2 > 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn sym_grad_examples() {
        let d = square(16);
        let s = Mat::from_rows(2, &[0.0, 1.5, -1.5, 0.0]);
        let e = sym_grad(&VectorField::from_fn(&d, |x| s.mul_vec(x))).unwrap();
        assert!(e.values().iter().all(|m| m.norm() < 1e-12));
        let shear = sym_grad(&VectorField::from_fn(&d, |x| Vector::from_slice(&[x[1], 0.0]))).unwrap();
        let expected = Mat::from_rows(2, &[0.0, 0.5, 0.5, 0.0]);
        assert!(d.inside_cells().all(|c| shear.get(c).max_abs_diff(&expected) < 1e-12));
    }

    #[test]
    fn lp_norm_examples() {
        let d = square(32);
        let c = ScalarField::from_fn(&d, |_| 3.0);
        assert_abs_diff_eq!(lp_norm(&c, 2.5).unwrap(), 3.0, epsilon = 1e-12);
        assert_eq!(lp_norm(&c, f64::INFINITY).unwrap(), 3.0);
        let half = ScalarField::from_fn(&d, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        assert_abs_diff_eq!(lp_norm(&half, 2.0).unwrap(), 0.5f64.sqrt(), epsilon = 1e-12);
        assert!(matches!(lp_norm(&c, 0.5), Err(LabError::Parameter(_))));
    }

    #[test]
    fn split_examples() {
        let d = square(8);
        let a = MatrixField::from_fn(&d, |x| Mat::from_rows(2, &[x[0], 1.0, -x[1], 2.0]));
        let abs = a.modulus();
        let zero = ScalarField::zeros(&d);
        let (f, g) = split_by_majorants(&a, &abs, &zero).unwrap();
        assert_eq!(f, a);
        assert!(g.values().iter().all(|m| m.norm() == 0.0));

        let (f, g) = split_by_majorants(&a, &abs, &abs).unwrap();
        assert!(f.max_abs_diff(&a.scale(0.5)) < 1e-15);
        assert!(g.max_abs_diff(&a.scale(0.5)) < 1e-15);

        let (f, g) = split_by_majorants(&a, &abs.scale(2.0), &abs).unwrap();
        assert!(f.max_abs_diff(&a.scale(2.0 / 3.0)) < 1e-15);
        assert!(g.max_abs_diff(&a.scale(1.0 / 3.0)) < 1e-15);

        let small = abs.scale(0.4);
        assert!(matches!(split_by_majorants(&a, &small, &small), Err(LabError::Contract { .. })));
    }
}
