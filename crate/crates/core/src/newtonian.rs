//! Newtonian-potential derivatives as Fourier multipliers on a zero-padded
//! torus.
//!
//! With `N` the fundamental solution of `−Δ` (`N̂ = 1/|ξ|²`), the operator
//! [`MultiplierPlan::riesz_second`] has symbol `ξᵢξⱼ/|ξ|²`, i.e. it equals
//! `−D_j(N ∗ D_iψ)`. The symbol at `ξ = 0` is set to zero.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{LabError, Result};
use crate::fields::{GridDomain, MatrixField, ScalarField, VectorField};
use crate::mat::{Mat, Vector};

/// Padded transform geometry for one grid; immutable and shareable.
pub struct MultiplierPlan {
    dim: usize,
    shape: Vec<usize>,
    padded: Vec<usize>,
    /// Angular frequencies per axis, `2π m/(P h)` with `m` wrapped to `(−P/2, P/2]`.
    freqs: Vec<Vec<f64>>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for MultiplierPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultiplierPlan").field("shape", &self.shape).field("padded", &self.padded).finish()
    }
}

/// Smallest 5-smooth integer ≥ `n`.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

impl MultiplierPlan {
    /// Plan whose padding margin is at least the diameter of the grid box.
    pub fn new(domain: &GridDomain) -> Self {
        MultiplierPlan::with_margin(domain, 1.0)
    }

    /// Plan with margin `factor × box diameter` (in cells, rounded up).
    pub fn with_margin(domain: &GridDomain, factor: f64) -> Self {
        let shape = domain.shape().to_vec();
        let diameter_cells = shape.iter().map(|&s| (s * s) as f64).sum::<f64>().sqrt();
        let margin = (factor * diameter_cells).ceil() as usize;
        let padded: Vec<usize> = shape.iter().map(|&s| smooth_size(s + margin)).collect();
        let h = domain.spacing();
        let freqs = padded
            .iter()
            .map(|&p| {
                (0..p)
                    .map(|m| {
                        let k = if m <= p / 2 { m as f64 } else { m as f64 - p as f64 };
                        2.0 * std::f64::consts::PI * k / (p as f64 * h)
                    })
                    .collect()
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = padded.iter().map(|&p| planner.plan_fft_forward(p)).collect();
        let inverse = padded.iter().map(|&p| planner.plan_fft_inverse(p)).collect();
        MultiplierPlan { dim: domain.dim(), shape, padded, freqs, forward, inverse }
    }

    pub fn padded_shape(&self) -> &[usize] {
        &self.padded
    }

    pub fn padded_len(&self) -> usize {
        self.padded.iter().product()
    }

    /// Frequency vector at padded linear index `k`.
    fn xi(&self, k: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut rest = k;
        for axis in (0..self.dim).rev() {
            let m = rest % self.padded[axis];
            rest /= self.padded[axis];
            out[axis] = self.freqs[axis][m];
        }
        out
    }

    /// Whether frequency index `k` sits on a Nyquist plane of some axis.
    fn is_nyquist(&self, k: usize) -> bool {
        let mut rest = k;
        for axis in (0..self.dim).rev() {
            let p = self.padded[axis];
            let m = rest % p;
            rest /= p;
            if p % 2 == 0 && m == p / 2 {
                return true;
            }
        }
        false
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let ffts = if inverse { &self.inverse } else { &self.forward };
        let total = data.len();
        for axis in 0..self.dim {
            let p = self.padded[axis];
            let stride: usize = self.padded[axis + 1..].iter().product();
            let fft = &ffts[axis];
            let mut line = vec![Complex64::new(0.0, 0.0); p];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            let outer = total / (p * stride);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * p * stride + s;
                    for (m, v) in line.iter_mut().enumerate() {
                        *v = data[base + m * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (m, v) in line.iter().enumerate() {
                        data[base + m * stride] = *v;
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / total as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
    }

    /// Padded index of a domain cell (the grid box sits at the origin corner).
    fn padded_index(&self, domain: &GridDomain, cell: usize) -> usize {
        let idx = domain.multi_index(cell);
        idx.iter().zip(&self.padded).fold(0, |acc, (&i, &p)| acc * p + i)
    }

    fn check_domain(&self, domain: &GridDomain) -> Result<()> {
        if domain.shape() != self.shape.as_slice() {
            return Err(LabError::Parameter("plan was built for a different grid".into()));
        }
        Ok(())
    }

    fn check_axis(&self, i: usize) -> Result<()> {
        if i >= self.dim {
            return Err(LabError::Parameter(format!("axis {i} out of range for n = {}", self.dim)));
        }
        Ok(())
    }

    /// Embeds a scalar field (zero outside the mask) into the padded box and
    /// transforms it.
    fn spectrum(&self, field: &ScalarField) -> Vec<Complex64> {
        let domain = field.domain();
        let mut data = vec![Complex64::new(0.0, 0.0); self.padded_len()];
        for c in domain.inside_cells() {
            data[self.padded_index(domain, c)] = Complex64::new(field.get(c), 0.0);
        }
        self.transform(&mut data, false);
        data
    }

    fn restrict(&self, data: &[Complex64], domain: &Arc<GridDomain>) -> ScalarField {
        let mut out = ScalarField::zeros(domain);
        for c in domain.inside_cells() {
            out.set(c, data[self.padded_index(domain, c)].re);
        }
        out
    }

    /// `Σ_{|y−x| ≤ r} s(y)` over mask cells for every mask cell, by one
    /// circular convolution. The padding exceeds the grid diameter, so radii
    /// up to the diameter do not wrap.
    pub(crate) fn ball_sums(&self, field: &ScalarField, radius: f64) -> Result<ScalarField> {
        let domain = field.domain();
        self.check_domain(domain)?;
        let h = domain.spacing();
        let mut kernel = vec![Complex64::new(0.0, 0.0); self.padded_len()];
        for (k, v) in kernel.iter_mut().enumerate() {
            let mut rest = k;
            let mut r2 = 0.0;
            for axis in (0..self.dim).rev() {
                let p = self.padded[axis];
                let m = rest % p;
                rest /= p;
                let m = if m > p / 2 { m as f64 - p as f64 } else { m as f64 };
                r2 += (m * h).powi(2);
            }
            if r2.sqrt() <= radius * (1.0 + 1e-12) {
                *v = Complex64::new(1.0, 0.0);
            }
        }
        self.transform(&mut kernel, false);
        let mut data = self.spectrum(field);
        data.iter_mut().zip(&kernel).for_each(|(a, b)| *a *= b);
        self.transform(&mut data, true);
        Ok(self.restrict(&data, domain))
    }

    fn second_symbol(&self, k: usize, i: usize, j: usize) -> f64 {
        let xi = self.xi(k);
        let r2: f64 = xi[..self.dim].iter().map(|x| x * x).sum();
        if r2 == 0.0 {
            0.0
        } else {
            xi[i] * xi[j] / r2
        }
    }

    /// Applies `ξᵢξⱼ/|ξ|²` to `ψ` extended by zero, restricted back to the mask.
    pub fn riesz_second(&self, i: usize, j: usize, psi: &ScalarField) -> Result<ScalarField> {
        self.check_axis(i)?;
        self.check_axis(j)?;
        self.check_domain(psi.domain())?;
        let mut data = self.spectrum(psi);
        for (k, v) in data.iter_mut().enumerate() {
            *v *= self.second_symbol(k, i, j);
        }
        self.transform(&mut data, true);
        Ok(self.restrict(&data, psi.domain()))
    }

    /// Same multiplier on raw padded-torus samples (row-major, padded shape).
    pub fn riesz_second_torus(&self, i: usize, j: usize, samples: &[f64]) -> Result<Vec<f64>> {
        self.check_axis(i)?;
        self.check_axis(j)?;
        if samples.len() != self.padded_len() {
            return Err(LabError::Input("sample count does not match padded shape".into()));
        }
        let mut data: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut data, false);
        for (k, v) in data.iter_mut().enumerate() {
            *v *= self.second_symbol(k, i, j);
        }
        self.transform(&mut data, true);
        Ok(data.iter().map(|v| v.re).collect())
    }

    /// Center of padded cell `k` in physical coordinates, given grid origin and spacing.
    pub fn torus_point(&self, k: usize, origin: &[f64], h: f64) -> Vector {
        let mut x = Vector::zeros(self.dim);
        let mut rest = k;
        for axis in (0..self.dim).rev() {
            let m = rest % self.padded[axis];
            rest /= self.padded[axis];
            x[axis] = origin[axis] + (m as f64 + 0.5) * h;
        }
        x
    }
}

/// Output of [`potential_field`]: the vector potential and its gradient.
#[derive(Clone, Debug)]
pub struct Potential {
    pub u: VectorField,
    pub du: MatrixField,
}

/// `u^{(i)} = −Σⱼ D_jN ∗ ((2f_{ij} − δ_{ij} Tr f)·χ_support)`.
///
/// Solves `Δu = div(2f − (Tr f) Id)` on the whole space; `Du` comes from the
/// second-order multipliers, `(Du)_{ik} = Σⱼ (ξ_kξⱼ/|ξ|²) ψ̂_{ij}`.
pub fn potential_field(f: &MatrixField, support: &[bool], plan: &MultiplierPlan) -> Result<Potential> {
    let domain = f.domain();
    plan.check_domain(domain)?;
    let n = domain.dim();
    if !domain.inside_cells().any(|c| support[c]) {
        return Err(LabError::Parameter("potential support is empty".into()));
    }
    // ψ_ij spectra
    let mut spectra = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let psi = ScalarField::from_values(
                domain,
                (0..domain.num_cells())
                    .map(|c| {
                        if !(domain.inside(c) && support[c]) {
                            return 0.0;
                        }
                        let a = f.get(c);
                        2.0 * a[(i, j)] - if i == j { a.trace() } else { 0.0 }
                    })
                    .collect(),
            )?;
            spectra.push(plan.spectrum(&psi));
        }
    }
    let len = plan.padded_len();
    let mut u = VectorField::zeros(domain);
    let mut du = MatrixField::zeros(domain);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for i in 0..n {
        // u^{(i)}: symbol −Σⱼ iξⱼ/|ξ|² ψ̂_ij, Nyquist planes dropped to keep it real
        for (k, v) in buf.iter_mut().enumerate() {
            let xi = plan.xi(k);
            let r2: f64 = xi[..n].iter().map(|x| x * x).sum();
            *v = if r2 == 0.0 || plan.is_nyquist(k) {
                Complex64::new(0.0, 0.0)
            } else {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    acc += spectra[i * n + j][k] * Complex64::new(0.0, -xi[j] / r2);
                }
                acc
            };
        }
        plan.transform(&mut buf, true);
        let ui = plan.restrict(&buf, domain);
        for c in domain.inside_cells() {
            let mut v = u.get(c);
            v[i] = ui.get(c);
            u.set(c, v);
        }
        for kk in 0..n {
            for (k, v) in buf.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    acc += spectra[i * n + j][k] * plan.second_symbol(k, kk, j);
                }
                *v = acc;
            }
            plan.transform(&mut buf, true);
            let dik = plan.restrict(&buf, domain);
            for c in domain.inside_cells() {
                let mut m = du.get(c);
                m[(i, kk)] = dik.get(c);
                du.set(c, m);
            }
        }
    }
    if !(u.all_finite() && du.all_finite()) {
        return Err(LabError::NonFinite("potential field".into()));
    }
    Ok(Potential { u, du })
}

/// Cells whose ±1 and ±2 neighbors along every axis are inside.
pub fn deep_interior(domain: &GridDomain) -> Vec<bool> {
    (0..domain.num_cells())
        .map(|c| {
            domain.inside(c)
                && (0..domain.dim()).all(|axis| {
                    [-1isize, 1].iter().all(|&s| {
                        domain.inside_neighbor(c, axis, s).and_then(|nb| domain.inside_neighbor(nb, axis, s)).is_some()
                    })
                })
        })
        .collect()
}

/// Compact (2n+1)-point Laplacian of each component, at cells with all
/// ±1 neighbors inside.
pub fn discrete_laplacian(u: &VectorField) -> VectorField {
    let domain = u.domain();
    let n = domain.dim();
    let h2 = domain.spacing().powi(2);
    let mut out = VectorField::zeros(domain);
    for c in domain.inside_cells() {
        let mut acc = Vector::zeros(n);
        let mut ok = true;
        for axis in 0..n {
            match (domain.inside_neighbor(c, axis, -1), domain.inside_neighbor(c, axis, 1)) {
                (Some(l), Some(r)) => {
                    let (ul, ur, uc) = (u.get(l), u.get(r), u.get(c));
                    for i in 0..n {
                        acc[i] += (ul[i] - 2.0 * uc[i] + ur[i]) / h2;
                    }
                }
                _ => ok = false,
            }
        }
        if ok {
            out.set(c, acc);
        }
    }
    out
}

/// Row-wise divergence `(div A)_i = Σⱼ ∂_j A_{ij}` by central differences
/// (one-sided at the mask boundary).
pub fn divergence(a: &MatrixField) -> VectorField {
    let domain = a.domain();
    let n = domain.dim();
    let h = domain.spacing();
    let mut out = VectorField::zeros(domain);
    for c in domain.inside_cells() {
        let mut acc = Vector::zeros(n);
        for j in 0..n {
            let (lo, hi, w) = match (domain.inside_neighbor(c, j, -1), domain.inside_neighbor(c, j, 1)) {
                (Some(l), Some(r)) => (l, r, 2.0 * h),
                (None, Some(r)) => (c, r, h),
                (Some(l), None) => (l, c, h),
                (None, None) => continue,
            };
            for i in 0..n {
                acc[i] += (a.get(hi)[(i, j)] - a.get(lo)[(i, j)]) / w;
            }
        }
        out.set(c, acc);
    }
    out
}

/// Scalar gradient by the same stencil as [`divergence`].
pub fn scalar_gradient(s: &ScalarField) -> VectorField {
    let domain = s.domain();
    let n = domain.dim();
    let diag = s.map(|&v| {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m[(i, i)] = v;
        }
        m
    });
    divergence(&diag)
}

/// Max-norm over deep-interior cells of `Δu − 2 div Eu + D(Tr Eu)`.
///
/// `Δ` is the compact Laplacian while `div Eu` and `D Tr Eu` compose central
/// differences, so the residual is a genuine O(h²) consistency measure that
/// vanishes on polynomials of degree ≤ 2.
pub fn verify_div_identity(u: &VectorField) -> Result<f64> {
    let domain = u.domain();
    let interior = deep_interior(domain);
    if !interior.iter().any(|&b| b) {
        return Err(LabError::Stencil { cell: 0, reason: "no cell has a 5-point interior stencil".into() });
    }
    let e = crate::fields::sym_grad(u)?;
    let lap = discrete_laplacian(u);
    let div_e = divergence(&e);
    let d_tr = scalar_gradient(&e.map(|m| m.trace()));
    let n = domain.dim();
    let mut worst: f64 = 0.0;
    for c in domain.inside_cells().filter(|&c| interior[c]) {
        let (l, d, t) = (lap.get(c), div_e.get(c), d_tr.get(c));
        for i in 0..n {
            worst = worst.max((l[i] - 2.0 * d[i] + t[i]).abs());
        }
    }
    Ok(worst)
}
