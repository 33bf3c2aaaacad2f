//! Decreasing rearrangements, K-functionals between two Lebesgue spaces,
//! Lorentz norms in both the interpolation and the rearrangement form, the
//! Lorentz version of the rigidity estimate, and equiintegrability tails.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fields::{gradient, MatrixField, ScalarField, VectorField};
use crate::korn::KornContext;
use crate::mat::Mat;
use crate::rigidity::rigidity_mixed_with;
use crate::rotations::{dist_field, nearest_rotation};

/// `|w|` sorted decreasingly with tied values merged; `measures[i]` is the
/// measure of the level set `{|w| = values[i]}`. Zero values are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rearrangement {
    pub values: Vec<f64>,
    pub measures: Vec<f64>,
    /// Measure of the whole domain (including the zero set).
    pub total_measure: f64,
}

impl Rearrangement {
    pub fn from_pairs(pairs: &[(f64, f64)], total_measure: f64) -> Result<Self> {
        let mut sorted: Vec<(f64, f64)> = pairs.iter().map(|&(v, m)| (v.abs(), m)).collect();
        if sorted.iter().any(|&(v, m)| !v.is_finite() || !(m >= 0.0)) {
            return Err(LabError::Input("rearrangement pairs must be finite with nonnegative measure".into()));
        }
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut values: Vec<f64> = Vec::new();
        let mut measures: Vec<f64> = Vec::new();
        for (v, m) in sorted {
            if v == 0.0 || m == 0.0 {
                continue;
            }
            if values.last() == Some(&v) {
                *measures.last_mut().expect("nonempty") += m;
            } else {
                values.push(v);
                measures.push(m);
            }
        }
        Ok(Rearrangement { values, measures, total_measure })
    }

    /// `∫ (w*)^p`, or `max w*` for `p = ∞`.
    pub fn lp_pow(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.values.first().copied().unwrap_or(0.0);
        }
        self.values.iter().zip(&self.measures).map(|(v, m)| v.powf(p) * m).sum()
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.lp_pow(p);
        }
        self.lp_pow(p).powf(1.0 / p)
    }

    /// `(‖(|w| − τ)₊‖_{p₁}, ‖min(|w|, τ)‖_{p₂})` for finite `p₁`.
    fn split_norms(&self, tau: f64, p1: f64, p2: f64) -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0f64);
        for (&v, &m) in self.values.iter().zip(&self.measures) {
            a += (v - tau).max(0.0).powf(p1) * m;
            let low = v.min(tau);
            if p2.is_infinite() {
                b = b.max(low);
            } else {
                b += low.powf(p2) * m;
            }
        }
        (a.powf(1.0 / p1), if p2.is_infinite() { b } else { b.powf(1.0 / p2) })
    }
}

pub fn rearrange(w: &ScalarField) -> Rearrangement {
    let d = w.domain();
    let vol = d.cell_volume();
    let pairs: Vec<(f64, f64)> = d.inside_cells().map(|c| (w.get(c), vol)).collect();
    Rearrangement::from_pairs(&pairs, d.measure()).expect("finite field values")
}

fn check_pair(p1: f64, p2: f64) -> Result<()> {
    if !(p1 >= 1.0 && p1.is_finite() && p2 > p1) {
        return Err(LabError::Parameter(format!("need 1 ≤ p₁ < p₂ ≤ ∞, got ({p1}, {p2})")));
    }
    Ok(())
}

/// Most levels scanned before the golden-section refinement.
const LEVEL_GRID: usize = 256;

const GOLDEN_STEPS: usize = 36;

/// `K(w, t)` restricted to the truncation splits `f = (|w| − τ)₊`,
/// `g = min(|w|, τ)`: the best level among `{0} ∪ values` (thinned to
/// [`LEVEL_GRID`] evenly spaced ranks on large fields) is bracketed and
/// refined by golden-section steps. Exact when `p₂ = ∞`.
pub fn k_functional_of(r: &Rearrangement, t: f64, p1: f64, p2: f64) -> Result<f64> {
    check_pair(p1, p2)?;
    check_t(t)?;
    Ok(SplitTable::new(r, p1, p2).k(t))
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(LabError::Parameter(format!("t must be positive, got {t}")))
    }
}

/// Split norms at the scanned levels, shared by every `t`.
struct SplitTable<'a> {
    r: &'a Rearrangement,
    p1: f64,
    p2: f64,
    levels: Vec<f64>,
    norms: Vec<(f64, f64)>,
}

impl<'a> SplitTable<'a> {
    fn new(r: &'a Rearrangement, p1: f64, p2: f64) -> Self {
        let ascending: Vec<f64> = r.values.iter().rev().copied().collect();
        let mut levels = vec![0.0];
        if ascending.len() <= LEVEL_GRID {
            levels.extend(&ascending);
        } else if !ascending.is_empty() {
            let last = ascending.len() - 1;
            levels.extend((0..LEVEL_GRID).map(|k| ascending[k * last / (LEVEL_GRID - 1)]));
        }
        let norms = levels.par_iter().map(|&tau| r.split_norms(tau, p1, p2)).collect();
        Self { r, p1, p2, levels, norms }
    }

    fn k(&self, t: f64) -> f64 {
        if self.r.values.is_empty() {
            return 0.0;
        }
        let cost = |tau: f64| {
            let (a, b) = self.r.split_norms(tau, self.p1, self.p2);
            a + t * b
        };
        let costs: Vec<f64> = self.norms.iter().map(|&(a, b)| a + t * b).collect();
        let best = (0..costs.len()).min_by(|&i, &j| costs[i].total_cmp(&costs[j])).expect("nonempty");
        let n = self.levels.len();
        let (mut lo, mut hi) = (self.levels[best.saturating_sub(1)], self.levels[(best + 1).min(n - 1)]);
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - ratio * (hi - lo);
        let mut x2 = lo + ratio * (hi - lo);
        let (mut c1, mut c2) = (cost(x1), cost(x2));
        for _ in 0..GOLDEN_STEPS {
            if c1 <= c2 {
                hi = x2;
                x2 = x1;
                c2 = c1;
                x1 = hi - ratio * (hi - lo);
                c1 = cost(x1);
            } else {
                lo = x1;
                x1 = x2;
                c1 = c2;
                x2 = lo + ratio * (hi - lo);
                c2 = cost(x2);
            }
        }
        costs[best].min(c1).min(c2)
    }
}

pub fn k_functional(w: &ScalarField, t: f64, p1: f64, p2: f64) -> Result<f64> {
    k_functional_of(&rearrange(w), t, p1, p2)
}

/// `(p, q)` with an interpolation triple `(θ, p₁, p₂)`,
/// `1/p = (1 − θ)/p₁ + θ/p₂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzSpec {
    pub p: f64,
    pub q: f64,
    pub theta: f64,
    pub p1: f64,
    pub p2: f64,
}

impl LorentzSpec {
    pub fn new(p: f64, q: f64, theta: f64, p1: f64, p2: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(LabError::Parameter(format!("p must lie in (1, ∞), got {p}")));
        }
        if !(q >= 1.0) {
            return Err(LabError::Parameter(format!("q must lie in [1, ∞], got {q}")));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(LabError::Parameter(format!("θ must lie in (0, 1), got {theta}")));
        }
        check_pair(p1, p2)?;
        let lhs = 1.0 / p;
        let rhs = (1.0 - theta) / p1 + theta / p2;
        if (lhs - rhs).abs() > 1e-12 {
            return Err(LabError::Parameter(format!("1/p = {lhs} but (1−θ)/p₁ + θ/p₂ = {rhs}")));
        }
        Ok(LorentzSpec { p, q, theta, p1, p2 })
    }

    /// θ = ½ with `1/p₁ = 1/p + δ`, `1/p₂ = 1/p − δ`, `δ = ½·min(1 − 1/p, 1/p)`.
    pub fn with_default_triple(p: f64, q: f64) -> Result<Self> {
        let a = 1.0 / p;
        let delta = 0.5 * (1.0 - a).min(a);
        LorentzSpec::new(p, q, 0.5, 1.0 / (a + delta), 1.0 / (a - delta))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LorentzForm {
    KFunctional,
    Rearrangement,
}

/// Rearrangement form `(∫₀^{|Ω|} (t^{1/p} w*(t))^q dt/t)^{1/q}`, exact on
/// the step function `w*`; `sup_t t^{1/p} w*(t)` for `q = ∞`.
pub fn rearrangement_norm(r: &Rearrangement, p: f64, q: f64) -> f64 {
    let mut acc = 0.0f64;
    let mut cum = 0.0;
    for (&v, &m) in r.values.iter().zip(&r.measures) {
        let next = cum + m;
        if q.is_infinite() {
            acc = acc.max(v * next.powf(1.0 / p));
        } else {
            acc += v.powf(q) * (p / q) * (next.powf(q / p) - cum.powf(q / p));
        }
        cum = next;
    }
    if q.is_infinite() {
        acc
    } else {
        acc.powf(1.0 / q)
    }
}

/// Points per decade of the `t` grid.
const PER_DECADE: usize = 64;

/// Interpolation form `(∫ (t^{−θ}K(w,t))^q dt/t)^{1/q}`.
///
/// Below `t_min` the optimal split is `g = w` (`K = t‖w‖_{p₂}`) and above
/// `t_max` it is `f = w` (`K = ‖w‖_{p₁}`); both tails are integrated in
/// closed form. The window is widened by decades until `K` matches the two
/// regimes to 1e-12, and the middle is integrated by the trapezoid rule in
/// `ln t`.
pub fn k_functional_norm(r: &Rearrangement, spec: &LorentzSpec) -> Result<f64> {
    if r.values.is_empty() {
        return Ok(0.0);
    }
    let (p1, p2, theta, q) = (spec.p1, spec.p2, spec.theta, spec.q);
    let low = r.lp_norm(p2);
    let high = r.lp_norm(p1);
    let pivot = high / low;
    check_pair(p1, p2)?;
    let table = SplitTable::new(r, p1, p2);
    let in_low = |t: f64| -> Result<bool> { Ok((table.k(t) - t * low).abs() <= 1e-12 * t * low) };
    let in_high = |t: f64| -> Result<bool> { Ok((table.k(t) - high).abs() <= 1e-12 * high) };
    let mut t_min = pivot;
    let mut guard = 0;
    while !(in_low(t_min)? && in_low(t_min * 10.0)? || guard > 40) {
        t_min /= 10.0;
        guard += 1;
    }
    let mut t_max = pivot;
    guard = 0;
    while !(in_high(t_max)? && in_high(t_max / 10.0)? || guard > 40) {
        t_max *= 10.0;
        guard += 1;
    }
    let decades = (t_max / t_min).log10();
    let steps = ((decades * PER_DECADE as f64).ceil() as usize).max(PER_DECADE);
    let du = (t_max / t_min).ln() / steps as f64;
    let values: Vec<f64> = (0..=steps)
        .into_par_iter()
        .map(|k| {
            let t = t_min * (du * k as f64).exp();
            t.powf(-theta) * table.k(t)
        })
        .collect();
    if q.is_infinite() {
        return Ok(values.iter().copied().fold(0.0, f64::max));
    }
    let mut middle = 0.0;
    for k in 0..steps {
        middle += 0.5 * (values[k].powf(q) + values[k + 1].powf(q)) * du;
    }
    let head = low.powf(q) * t_min.powf(q * (1.0 - theta)) / (q * (1.0 - theta));
    let tail = high.powf(q) * t_max.powf(-q * theta) / (q * theta);
    Ok((head + middle + tail).powf(1.0 / q))
}

pub fn lorentz_norm(w: &ScalarField, spec: &LorentzSpec, form: LorentzForm) -> Result<f64> {
    let r = rearrange(w);
    match form {
        LorentzForm::Rearrangement => Ok(rearrangement_norm(&r, spec.p, spec.q)),
        LorentzForm::KFunctional => k_functional_norm(&r, spec),
    }
}

/// Lorentz norm of a matrix field through its pointwise Frobenius modulus.
pub fn lorentz_norm_matrix(a: &MatrixField, spec: &LorentzSpec, form: LorentzForm) -> Result<f64> {
    lorentz_norm(&a.modulus(), spec, form)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzRigidity {
    /// `R`: cell average of `Du`.
    pub mean: Mat,
    /// Nearest rotation to `R`.
    pub rotation: Mat,
    pub spec: LorentzSpec,
    pub form: LorentzForm,
    pub norm_du_minus_q: f64,
    pub norm_dist: f64,
    pub ratio: f64,
}

/// `‖Du − Q‖_{p,q} / ‖dist(Du, SO(n))‖_{p,q}` with `Q` the nearest rotation
/// to the mean of `Du`; norms below roundoff of `‖Du‖_{p,q}` count as zero.
pub fn lorentz_rigidity(u: &VectorField, spec: &LorentzSpec, form: LorentzForm) -> Result<LorentzRigidity> {
    let du = gradient(u)?;
    let mean = du.mean();
    let rotation = nearest_rotation(&mean)?.rotation;
    let norm_du_minus_q = lorentz_norm_matrix(&du.sub_const(&rotation), spec, form)?;
    let norm_dist = lorentz_norm(&dist_field(&du)?, spec, form)?;
    let scale = lorentz_norm_matrix(&du, spec, form)?;
    Ok(LorentzRigidity {
        mean,
        rotation,
        spec: *spec,
        form,
        norm_du_minus_q,
        norm_dist,
        ratio: crate::decomposition::ratio_above_roundoff(norm_du_minus_q, norm_dist, scale),
    })
}

/// `∫_{|s| > T} |s|^p`.
pub fn tail_integral(s: &ScalarField, p: f64, level: f64) -> f64 {
    let d = s.domain();
    d.inside_cells().map(|c| s.get(c).abs()).filter(|&v| v > level).fold(0.0, |acc, v| acc + v.powf(p))
        * d.cell_volume()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailProfile {
    pub p: f64,
    pub levels: Vec<f64>,
    /// `sup_k ∫_{d_k > T} d_k^p` per level.
    pub sup_tails: Vec<f64>,
}

impl TailProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("T,tail\n");
        for (t, v) in self.levels.iter().zip(&self.sup_tails) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

pub fn equiintegrability_profile(sequence: &[ScalarField], p: f64, levels: &[f64]) -> Result<TailProfile> {
    if sequence.is_empty() {
        return Err(LabError::Input("empty sequence".into()));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(LabError::Parameter(format!("p must be ≥ 1, got {p}")));
    }
    let sup_tails =
        levels.par_iter().map(|&t| sequence.iter().map(|d| tail_integral(d, p, t)).fold(0.0, f64::max)).collect();
    Ok(TailProfile { p, levels: levels.to_vec(), sup_tails })
}

/// Smallest `T` with `sup_k ∫_{d_k > T} d_k^p ≤ ε`; the candidates are `0`
/// and the attained values, where the tails jump.
pub fn tail_threshold(sequence: &[ScalarField], p: f64, eps: f64) -> Result<f64> {
    if sequence.is_empty() {
        return Err(LabError::Input("empty sequence".into()));
    }
    let mut candidates: Vec<f64> = sequence
        .iter()
        .flat_map(|d| d.domain().inside_cells().map(move |c| d.get(c).abs()).collect::<Vec<_>>())
        .collect();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    // the sup of the tails is nonincreasing in T: bisect over the candidates
    let ok = |t: f64| sequence.iter().all(|d| tail_integral(d, p, t) <= eps);
    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    if ok(candidates[0]) {
        return Ok(candidates[0]);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(candidates[mid]) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(candidates[hi])
}

/// One member of a sequence: the displacement and its scale `η_k`.
#[derive(Clone, Debug)]
pub struct ScaledField {
    pub u: VectorField,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquiintegrabilityCheck {
    pub p: f64,
    pub q: f64,
    pub eps: f64,
    /// `M = sup_k ‖d_k‖_p^p`.
    pub m: f64,
    pub t_eps: f64,
    pub l_eps: f64,
    /// `∫_{|z_k| > 2L_ε} |z_k|^p` per member.
    pub z_tails: Vec<f64>,
    /// `‖η_k F_k‖_p^p` per member.
    pub f_pow: Vec<f64>,
    /// `max_k z-tail / ((1 + M)ε)`.
    pub constant: f64,
}

/// Runs the chain: `T_ε`, the splits `f_k = dist·χ_{d_k > T_ε}`,
/// `g_k = dist·χ_{d_k ≤ T_ε}`, the two-exponent rigidity decomposition with
/// `q = p + 1`, `L_ε = T_ε/ε^{1/(q−p)}` and the tails of `z_k = η_k(Du_k − Q_k)`
/// at `2L_ε`.
pub fn equiintegrability_check(sequence: &[ScaledField], p: f64, eps: f64) -> Result<EquiintegrabilityCheck> {
    if sequence.is_empty() {
        return Err(LabError::Input("empty sequence".into()));
    }
    if !(eps > 0.0) {
        return Err(LabError::Parameter(format!("ε must be positive, got {eps}")));
    }
    let q = p + 1.0;
    let dists: Vec<ScalarField> = sequence.iter().map(|s| dist_field(&gradient(&s.u)?)).collect::<Result<_>>()?;
    let scaled: Vec<ScalarField> = dists.iter().zip(sequence).map(|(d, s)| d.scale(s.eta)).collect();
    let m = scaled.iter().map(|d| tail_integral(d, p, -1.0)).fold(0.0, f64::max);
    let t_eps = tail_threshold(&scaled, p, eps)?;
    let l_eps = t_eps / eps.powf(1.0 / (q - p));
    let domain = sequence[0].u.domain();
    if sequence.iter().any(|s| s.u.domain().as_ref() != domain.as_ref()) {
        return Err(LabError::Input("sequence members live on different domains".into()));
    }
    let ctx = KornContext::new(domain)?;
    let mut z_tails = Vec::new();
    let mut f_pow = Vec::new();
    for ((s, dist), d) in sequence.iter().zip(&dists).zip(&scaled) {
        let mut f = ScalarField::zeros(domain);
        let mut g = ScalarField::zeros(domain);
        for c in domain.inside_cells() {
            if d.get(c) > t_eps {
                f.set(c, dist.get(c));
            } else {
                g.set(c, dist.get(c));
            }
        }
        let rep = rigidity_mixed_with(&ctx, &s.u, &f, &g, p, q)?;
        let z = gradient(&s.u)?.sub_const(&rep.rotation()).scale(s.eta).modulus();
        z_tails.push(tail_integral(&z, p, 2.0 * l_eps));
        f_pow.push(tail_integral(&rep.decomposition.parts[0].scale(s.eta).modulus(), p, -1.0));
    }
    let constant = z_tails.iter().copied().fold(0.0, f64::max) / ((1.0 + m) * eps);
    Ok(EquiintegrabilityCheck { p, q, eps, m, t_eps, l_eps, z_tails, f_pow, constant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_domain, DomainKind, GridDomain};
    use crate::mat::Vector;
    use crate::rigidity::{rigid_motion, rigidity_lp};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn square(res: usize) -> Arc<GridDomain> {
        Arc::new(make_domain(DomainKind::Square, 2, 1.0, res, 0.5).unwrap())
    }

    fn random_field(d: &Arc<GridDomain>, seed: u64) -> ScalarField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..d.num_cells()).map(|_| rng.random_range(-3.0..3.0)).collect();
        ScalarField::from_values(d, values).unwrap()
    }

    /// `min Σ` over per-cell splits `0 ≤ f_i ≤ w_i` of
    /// `‖f‖_{p₁} + t‖w − f‖_{p₂}` by projected gradient with backtracking.
    fn convex_oracle(w: &[f64], t: f64, p1: f64, p2: f64) -> f64 {
        let norm = |v: &[f64], p: f64| v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
        let cost = |f: &[f64]| {
            let g: Vec<f64> = w.iter().zip(f).map(|(a, b)| a - b).collect();
            norm(f, p1) + t * norm(&g, p2)
        };
        let grad = |f: &[f64]| -> Vec<f64> {
            let g: Vec<f64> = w.iter().zip(f).map(|(a, b)| a - b).collect();
            let (nf, ng) = (norm(f, p1), norm(&g, p2));
            f.iter()
                .zip(&g)
                .map(|(&fi, &gi)| {
                    let a = if nf > 0.0 { (fi / nf).powf(p1 - 1.0) } else { 0.0 };
                    let b = if ng > 0.0 { (gi / ng).powf(p2 - 1.0) } else { 0.0 };
                    a - t * b
                })
                .collect()
        };
        let mut best = f64::INFINITY;
        for start in [0.0, 0.5, 1.0] {
            let mut f: Vec<f64> = w.iter().map(|x| x * start).collect();
            let mut c = cost(&f);
            let mut step = 1.0;
            for _ in 0..20_000 {
                let gr = grad(&f);
                loop {
                    let cand: Vec<f64> =
                        f.iter().zip(&gr).zip(w).map(|((x, d), wi)| (x - step * d).clamp(0.0, *wi)).collect();
                    let cc = cost(&cand);
                    if cc < c {
                        f = cand;
                        c = cc;
                        step *= 1.5;
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-14 {
                        break;
                    }
                }
                if step < 1e-14 {
                    break;
                }
            }
            best = best.min(c);
        }
        best
    }

    #[test]
    fn indicator_rearranges_to_one_pair() {
        let d = square(8);
        let w = ScalarField::from_fn(&d, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        let r = rearrange(&w);
        assert_eq!(r.values, vec![1.0]);
        assert!((r.measures[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn two_level_field_rearranges_in_order() {
        let d = square(8);
        let w = ScalarField::from_fn(&d, |x| if x[0] < 0.25 { 3.0 } else { -1.0 });
        let r = rearrange(&w);
        assert_eq!(r.values, vec![3.0, 1.0]);
        assert!((r.measures[0] - 0.25).abs() < 1e-14 && (r.measures[1] - 0.75).abs() < 1e-14);
        assert!((r.measures.iter().sum::<f64>() - r.total_measure).abs() < 1e-14);
    }

    #[test]
    fn rearrangement_preserves_lp_integrals() {
        let d = square(16);
        for seed in 0..5 {
            let w = random_field(&d, seed);
            let r = rearrange(&w);
            for p in [1.0, 1.5, 3.0] {
                let direct: f64 = w.values().iter().map(|v| v.abs().powf(p)).sum::<f64>() * d.cell_volume();
                assert!((r.lp_pow(p) - direct).abs() <= 1e-12 * direct);
            }
        }
    }

    #[test]
    fn atom_k_functional_is_exact() {
        let r = Rearrangement::from_pairs(&[(2.0, 1.0)], 1.0).unwrap();
        for t in [0.01, 0.3, 0.99, 1.0, 1.7, 50.0] {
            let k = k_functional_of(&r, t, 1.0, f64::INFINITY).unwrap();
            assert!((k - 2.0 * t.min(1.0)).abs() < 1e-8, "t = {t}: {k}");
        }
    }

    #[test]
    fn zero_field_has_zero_k_functional() {
        let d = square(8);
        let w = ScalarField::zeros(&d);
        for t in [0.1, 1.0, 10.0] {
            assert_eq!(k_functional(&w, t, 1.5, 3.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn k_functional_is_below_both_extreme_splits() {
        let d = square(8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for seed in 0..20 {
            let w = random_field(&d, seed);
            let t = 10f64.powf(rng.random_range(-2.0..2.0));
            let r = rearrange(&w);
            let k = k_functional(&w, t, 1.5, 4.0).unwrap();
            assert!(k <= r.lp_norm(1.5).min(t * r.lp_norm(4.0)) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn invalid_exponent_order_is_rejected() {
        let d = square(8);
        let w = ScalarField::zeros(&d);
        assert!(matches!(k_functional(&w, 1.0, 3.0, 2.0), Err(LabError::Parameter(_))));
        assert!(matches!(k_functional(&w, 0.0, 1.0, 2.0), Err(LabError::Parameter(_))));
        assert!(matches!(LorentzSpec::new(2.0, 2.0, 0.5, 1.5, 4.0), Err(LabError::Parameter(_))));
    }

    #[test]
    fn truncation_family_is_near_optimal_on_small_fields() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (p1, p2) in [(1.5, 3.0), (2.0, 4.0), (1.2, 6.0)] {
            let mut worst: f64 = 1.0;
            for _ in 0..10 {
                let cells = rng.random_range(2..=6);
                let w: Vec<f64> = (0..cells).map(|_| rng.random_range(0.1..3.0)).collect();
                let t = 10f64.powf(rng.random_range(-1.0..1.0));
                let pairs: Vec<(f64, f64)> = w.iter().map(|&v| (v, 1.0)).collect();
                let r = Rearrangement::from_pairs(&pairs, cells as f64).unwrap();
                let k = k_functional_of(&r, t, p1, p2).unwrap();
                let oracle = convex_oracle(&w, t, p1, p2);
                assert!(k >= oracle * (1.0 - 1e-6), "({p1},{p2}) k {k} below oracle {oracle}");
                worst = worst.max(k / oracle);
            }
            assert!(worst <= 1.05, "({p1},{p2}) gap {worst}");
        }
    }

    #[test]
    fn rearrangement_form_at_q_equal_p_is_lp() {
        let d = square(16);
        for seed in 0..3 {
            let w = random_field(&d, seed);
            for p in [1.5, 2.0, 3.5] {
                let lp = crate::fields::lp_norm(&w, p).unwrap();
                let lpp = rearrangement_norm(&rearrange(&w), p, p);
                assert!((lpp - lp).abs() <= 1e-12 * lp);
            }
        }
    }

    #[test]
    fn indicator_rearrangement_norm_closed_form() {
        let d = square(8);
        let w = ScalarField::from_fn(&d, |x| if x[1] < 0.375 { 1.0 } else { 0.0 });
        let m: f64 = 0.375;
        for (p, q) in [(2.0f64, 1.0f64), (1.5, 4.0), (3.0, 2.0)] {
            let expected = (p / q).powf(1.0 / q) * m.powf(1.0 / p);
            assert!((rearrangement_norm(&rearrange(&w), p, q) - expected).abs() < 1e-12);
        }
        let sup = rearrangement_norm(&rearrange(&w), 2.0, f64::INFINITY);
        assert!((sup - m.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn default_triple_satisfies_the_identity() {
        for p in [1.2, 2.0, 5.0] {
            let s = LorentzSpec::with_default_triple(p, 2.0).unwrap();
            assert!((1.0 / p - ((1.0 - s.theta) / s.p1 + s.theta / s.p2)).abs() < 1e-12);
            assert!(s.p1 >= 1.0 && s.p1 < s.p2);
        }
    }

    #[test]
    fn both_forms_are_homogeneous() {
        let d = square(8);
        let w = random_field(&d, 3);
        let spec = LorentzSpec::with_default_triple(2.0, 3.0).unwrap();
        for form in [LorentzForm::Rearrangement, LorentzForm::KFunctional] {
            let base = lorentz_norm(&w, &spec, form).unwrap();
            for s in [-2.5, 0.1, 7.0] {
                let scaled = lorentz_norm(&w.scale(s), &spec, form).unwrap();
                assert!((scaled - s.abs() * base).abs() <= 1e-10 * s.abs() * base, "{form:?} s={s}");
            }
        }
    }

    #[test]
    fn k_form_of_an_atom_matches_the_direct_integral() {
        // K = 2 min(t, 1) for (1, ∞): ∫ (t^{-θ} K)^q dt/t splits at t = 1
        let r = Rearrangement::from_pairs(&[(2.0, 1.0)], 1.0).unwrap();
        let (theta, q) = (0.5, 2.0);
        let spec = LorentzSpec { p: 2.0, q, theta, p1: 1.0, p2: f64::INFINITY };
        let expected = (2f64.powf(q) * (1.0 / (q * (1.0 - theta)) + 1.0 / (q * theta))).powf(1.0 / q);
        let got = k_functional_norm(&r, &spec).unwrap();
        assert!((got - expected).abs() < 1e-3 * expected, "{got} vs {expected}");
    }

    #[test]
    fn lorentz_rigidity_vanishes_on_rigid_motions() {
        let d = square(16);
        let u = rigid_motion(&d, &Mat::rotation2(0.9), &Vector::from_slice(&[0.2, -1.0]));
        let spec = LorentzSpec::with_default_triple(2.0, 2.0).unwrap();
        for form in [LorentzForm::Rearrangement, LorentzForm::KFunctional] {
            let rep = lorentz_rigidity(&u, &spec, form).unwrap();
            assert_eq!(rep.ratio, 0.0);
            assert!(rep.rotation.max_abs_diff(&Mat::rotation2(0.9)) < 1e-12);
        }
    }

    #[test]
    fn diagonal_lorentz_rigidity_matches_lp_rigidity() {
        let d = square(16);
        let u = VectorField::from_fn(&d, |x| {
            let q = Mat::rotation2(0.3);
            q.mul_vec(&Vector::from_slice(&[x[0] + 0.05 * (3.0 * x[1]).sin(), x[1] + 0.02 * x[0] * x[0]]))
        });
        for p in [1.5, 2.0, 3.0] {
            let spec = LorentzSpec::with_default_triple(p, p).unwrap();
            let rep = lorentz_rigidity(&u, &spec, LorentzForm::Rearrangement).unwrap();
            let (_, lp_ratio) = rigidity_lp(&u, p).unwrap();
            assert!((rep.ratio - lp_ratio).abs() <= 1e-10 * lp_ratio, "p = {p}");
        }
    }

    #[test]
    fn constant_sequence_profile_is_the_single_tail() {
        let d = square(16);
        let w = random_field(&d, 4).modulus();
        let levels: Vec<f64> = (0..8).map(|k| 0.5 * k as f64).collect();
        let prof = equiintegrability_profile(&[w.clone(), w.clone(), w.clone()], 2.0, &levels).unwrap();
        for (t, v) in levels.iter().zip(&prof.sup_tails) {
            assert_eq!(*v, tail_integral(&w, 2.0, *t));
        }
        assert!(prof.sup_tails.windows(2).all(|p| p[1] <= p[0]));
        assert_eq!(*prof.sup_tails.last().unwrap(), 0.0);
        assert!(prof.to_csv().starts_with("T,tail\n"));
    }

    #[test]
    fn spike_profile_is_flat_until_the_spike() {
        let d = square(16);
        let spike_cell = d.inside_cells().nth(40).unwrap();
        let seq: Vec<ScalarField> = (0..3)
            .map(|k| {
                let mut s = ScalarField::from_fn(&d, |_| 0.1 * (k + 1) as f64);
                s.set(spike_cell, 10.0);
                s
            })
            .collect();
        let prof = equiintegrability_profile(&seq, 1.0, &[0.5, 2.0, 9.0, 10.5]).unwrap();
        let spike = 10.0 * d.cell_volume();
        for v in &prof.sup_tails[..3] {
            assert!((v - spike).abs() < 1e-14);
        }
        assert_eq!(prof.sup_tails[3], 0.0);
    }

    #[test]
    fn tail_threshold_is_the_smallest_admissible_level() {
        let d = square(16);
        let seq = vec![random_field(&d, 1).modulus(), random_field(&d, 2).modulus()];
        let eps = 0.5;
        let t = tail_threshold(&seq, 2.0, eps).unwrap();
        assert!(seq.iter().all(|s| tail_integral(s, 2.0, t) <= eps));
        let below = t * (1.0 - 1e-9);
        assert!(seq.iter().any(|s| tail_integral(s, 2.0, below) > eps));
    }

    #[test]
    fn empty_sequences_are_rejected() {
        assert!(matches!(equiintegrability_profile(&[], 2.0, &[1.0]), Err(LabError::Input(_))));
        assert!(matches!(tail_threshold(&[], 2.0, 0.1), Err(LabError::Input(_))));
        assert!(matches!(equiintegrability_check(&[], 2.0, 0.1), Err(LabError::Input(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn k_functional_is_concave_and_nondecreasing(
            w in prop::collection::vec(0.01f64..5.0, 1..12),
            p1 in 1.0f64..2.0,
            gap in 0.5f64..4.0,
        ) {
            let pairs: Vec<(f64, f64)> = w.iter().map(|&v| (v, 0.25)).collect();
            let r = Rearrangement::from_pairs(&pairs, 0.25 * w.len() as f64).unwrap();
            let ts: Vec<f64> = (0..25).map(|k| 10f64.powf(-2.0 + k as f64 / 6.0)).collect();
            let ks: Vec<f64> = ts.iter().map(|&t| k_functional_of(&r, t, p1, p1 + gap).unwrap()).collect();
            for i in 0..ts.len() - 1 {
                prop_assert!(ks[i + 1] >= ks[i] * (1.0 - 1e-8));
            }
            for i in 1..ts.len() - 1 {
                let lam = (ts[i + 1] - ts[i]) / (ts[i + 1] - ts[i - 1]);
                let chord = lam * ks[i - 1] + (1.0 - lam) * ks[i + 1];
                prop_assert!(ks[i] >= chord * (1.0 - 1e-8));
            }
        }

        #[test]
        fn rearrangement_keeps_total_mass(w in prop::collection::vec(-4.0f64..4.0, 1..30)) {
            let pairs: Vec<(f64, f64)> = w.iter().map(|&v| (v, 1.0)).collect();
            let r = Rearrangement::from_pairs(&pairs, w.len() as f64).unwrap();
            prop_assert!(r.values.windows(2).all(|p| p[0] > p[1]));
            let nonzero = w.iter().filter(|v| **v != 0.0).count() as f64;
            prop_assert!((r.measures.iter().sum::<f64>() - nonzero).abs() < 1e-12);
        }
    }
}
