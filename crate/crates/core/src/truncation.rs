//! Lipschitz truncation: the good set `E = {M|Du| ≤ λ}` of the restricted
//! maximal function, the Lipschitz constant of `u` on it, and the McShane
//! extension of `u|_E` back to the whole mask.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fields::{gradient, GridDomain, ScalarField, VectorField};
use crate::mat::Vector;
use crate::newtonian::MultiplierPlan;

/// Largest `|Ω∖E| / ((1/λ)∫_{|Du|>λ}|Du|)` accepted by [`truncate`].
pub const EXCESS_CONSTANT: f64 = 8.0;

/// Radii `h/2, h, 2h, 4h, …` up to the first one reaching the box diameter.
/// The smallest ball holds the cell alone.
pub fn dyadic_radii(domain: &GridDomain) -> Vec<f64> {
    let h = domain.spacing();
    let diam = domain.diameter();
    let mut radii = vec![h / 2.0];
    let mut r = h;
    loop {
        radii.push(r);
        if r >= diam {
            break;
        }
        r *= 2.0;
    }
    radii
}

/// Restricted maximal function `Ms(x) = max_r ⨍_{B(x,r)∩Ω} |s|` over
/// [`dyadic_radii`].
pub fn maximal_function(s: &ScalarField) -> Result<ScalarField> {
    let plan = MultiplierPlan::new(s.domain());
    maximal_function_with(s, &plan)
}

pub fn maximal_function_with(s: &ScalarField, plan: &MultiplierPlan) -> Result<ScalarField> {
    let domain = s.domain();
    let abs = s.map(|v| v.abs());
    let ones = ScalarField::from_fn(domain, |_| 1.0);
    let mut out = abs.clone();
    for &r in &dyadic_radii(domain)[1..] {
        let sums = plan.ball_sums(&abs, r)?;
        let counts = plan.ball_sums(&ones, r)?;
        for c in domain.inside_cells() {
            // the counts are integers up to transform roundoff
            let avg = sums.get(c).max(0.0) / counts.get(c).round();
            if avg > out.get(c) {
                out.set(c, avg);
            }
        }
    }
    Ok(out)
}

/// `E = {M|Du| ≤ λ}`; membership allows a relative slack of 1e-12 for the
/// transform roundoff in the averages.
pub fn good_set(u: &VectorField, lambda: f64) -> Result<Vec<bool>> {
    let plan = MultiplierPlan::new(u.domain());
    good_set_with(u, lambda, &plan)
}

pub fn good_set_with(u: &VectorField, lambda: f64, plan: &MultiplierPlan) -> Result<Vec<bool>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(LabError::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let du = gradient(u)?;
    let ms = maximal_function_with(&du.modulus(), plan)?;
    let domain = u.domain();
    let e: Vec<bool> =
        (0..domain.num_cells()).map(|c| domain.inside(c) && ms.get(c) <= lambda * (1.0 + 1e-12)).collect();
    if !e.iter().any(|&b| b) {
        return Err(LabError::TruncationDegenerate { lambda });
    }
    Ok(e)
}

/// Exact Lipschitz constant of `u` on the cell set `e`: the maximum of
/// `|u(x) − u(y)|/|x − y|` over all pairs.
pub fn lipschitz_constant_on(u: &VectorField, e: &[bool]) -> f64 {
    let domain = u.domain();
    let cells: Vec<usize> = domain.inside_cells().filter(|&c| e[c]).collect();
    let points: Vec<(Vector, Vector)> = cells.iter().map(|&c| (domain.center(c), u.get(c))).collect();
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let (xi, ui) = points[i];
            points[i + 1..].iter().map(|(xj, uj)| (ui - *uj).norm() / (xi - *xj).norm()).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Componentwise McShane extension `u_M^{(i)}(x) = min_{y∈E} (u^{(i)}(y) + M|x−y|)`,
/// clamped to the range of `u^{(i)}` on `E`.
///
/// Each component is `M`-Lipschitz, so the vector field is `√n·M`-Lipschitz.
/// Equals `u` on `E` whenever `u|_E` is `M`-Lipschitz; the clamp keeps
/// constants constant.
pub fn lipschitz_extend(u: &VectorField, e: &[bool], m: f64) -> Result<VectorField> {
    if !(m >= 0.0 && m.is_finite()) {
        return Err(LabError::Parameter(format!("Lipschitz constant must be ≥ 0, got {m}")));
    }
    let domain = u.domain();
    let sources: Vec<(Vector, Vector)> =
        domain.inside_cells().filter(|&c| e[c]).map(|c| (domain.center(c), u.get(c))).collect();
    if sources.is_empty() {
        return Err(LabError::TruncationDegenerate { lambda: f64::NAN });
    }
    if sources.iter().any(|(_, v)| !v.is_finite()) {
        return Err(LabError::NonFinite("u on the good set".into()));
    }
    let n = domain.dim();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (_, v) in &sources {
        for i in 0..n {
            lo[i] = lo[i].min(v[i]);
            hi[i] = hi[i].max(v[i]);
        }
    }
    let values: Vec<Vector> = (0..domain.num_cells())
        .into_par_iter()
        .map(|c| {
            if !domain.inside(c) {
                return Vector::zeros(n);
            }
            if e[c] {
                return u.get(c);
            }
            let x = domain.center(c);
            let mut best = [f64::INFINITY; 3];
            for (y, v) in &sources {
                let cone = m * (x - *y).norm();
                for i in 0..n {
                    best[i] = best[i].min(v[i] + cone);
                }
            }
            for i in 0..n {
                best[i] = best[i].clamp(lo[i], hi[i]);
            }
            Vector::from_slice(&best[..n])
        })
        .collect();
    VectorField::from_values(domain, values)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruncationResult {
    pub good_set: Vec<bool>,
    #[serde(skip)]
    pub u_m: Option<VectorField>,
    pub lambda: f64,
    /// `c_E`: `u` is `c_E·λ`-Lipschitz on `E`.
    pub c_e: f64,
    /// `M = c_E·λ`, the componentwise Lipschitz constant of `u_M`.
    pub lipschitz_m: f64,
    pub excess_measure: f64,
    /// `(1/λ)∫_{|Du|>λ} |Du|`.
    pub bound_rhs: f64,
    pub excess_cells: usize,
}

impl TruncationResult {
    pub fn extended(&self) -> &VectorField {
        self.u_m.as_ref().expect("truncation result carries u_M")
    }

    /// `|Ω∖E| / bound_rhs` (0/0 = 0).
    pub fn excess_ratio(&self) -> f64 {
        crate::decomposition::ratio(self.excess_measure, self.bound_rhs)
    }
}

/// Good set at `λ`, exact `c_E`, and the McShane extension with `M = c_E·λ`.
/// Fails with a contract error if `|Ω∖E|` exceeds [`EXCESS_CONSTANT`] times
/// the right-hand side.
pub fn truncate(u: &VectorField, lambda: f64) -> Result<TruncationResult> {
    let plan = MultiplierPlan::new(u.domain());
    truncate_with(u, lambda, &plan)
}

pub fn truncate_with(u: &VectorField, lambda: f64, plan: &MultiplierPlan) -> Result<TruncationResult> {
    let result = truncate_measured(u, lambda, plan)?;
    if result.excess_measure > EXCESS_CONSTANT * result.bound_rhs {
        return Err(LabError::Contract {
            what: format!("excess measure above {EXCESS_CONSTANT}·(1/λ)∫_{{|Du|>λ}}|Du|"),
            cell: u.domain().inside_cells().find(|&c| !result.good_set[c]).unwrap_or(0),
            excess: result.excess_measure - EXCESS_CONSTANT * result.bound_rhs,
        });
    }
    Ok(result)
}

/// [`truncate_with`] without the excess-measure contract, for measuring the
/// ratio `|Ω∖E| / bound_rhs` itself.
pub fn truncate_measured(u: &VectorField, lambda: f64, plan: &MultiplierPlan) -> Result<TruncationResult> {
    let domain: &Arc<GridDomain> = u.domain();
    let e = good_set_with(u, lambda, plan)?;
    let c_e = lipschitz_constant_on(u, &e) / lambda;
    let m = c_e * lambda;
    let u_m = lipschitz_extend(u, &e, m)?;
    let du = gradient(u)?;
    let vol = domain.cell_volume();
    let tail: f64 =
        domain.inside_cells().map(|c| du.get(c).norm()).filter(|&a| a > lambda).fold(0.0, |acc, a| acc + a) * vol;
    let excess_cells = domain.inside_cells().filter(|&c| !e[c]).count();
    Ok(TruncationResult {
        good_set: e,
        u_m: Some(u_m),
        lambda,
        c_e,
        lipschitz_m: m,
        excess_measure: excess_cells as f64 * vol,
        bound_rhs: tail / lambda,
        excess_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_domain, DomainKind};
    use crate::mat::Mat;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(res: usize) -> Arc<GridDomain> {
        Arc::new(make_domain(DomainKind::Square, 2, 1.0, res, 0.0).unwrap())
    }

    fn noise(d: &Arc<GridDomain>, seed: u64, amp: f64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..d.num_cells())
            .map(|_| Vector::from_slice(&[rng.random_range(-amp..amp), rng.random_range(-amp..amp)]))
            .collect();
        VectorField::from_values(d, values).unwrap()
    }

    /// Brute-force ball averages over all cells.
    fn direct_maximal(s: &ScalarField) -> Vec<f64> {
        let d = s.domain();
        let radii = dyadic_radii(d);
        (0..d.num_cells())
            .map(|c| {
                if !d.inside(c) {
                    return 0.0;
                }
                radii
                    .iter()
                    .map(|&r| {
                        let ball = d.cells_in_ball(&d.center(c), r);
                        let cells: Vec<usize> = d.inside_cells().filter(|&y| ball[y]).collect();
                        cells.iter().map(|&y| s.get(y).abs()).sum::<f64>() / cells.len() as f64
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    #[test]
    fn maximal_function_of_constant_is_constant() {
        let d = square(16);
        let s = ScalarField::from_fn(&d, |_| 2.5);
        let m = maximal_function(&s).unwrap();
        assert!(d.inside_cells().all(|c| (m.get(c) - 2.5).abs() < 1e-12));
    }

    #[test]
    fn maximal_function_matches_direct_averages() {
        let d = Arc::new(make_domain(DomainKind::Lshape, 2, 1.0, 16, 0.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values = (0..d.num_cells()).map(|_| rng.random_range(0.0..3.0)).collect();
        let s = ScalarField::from_values(&d, values).unwrap();
        let m = maximal_function(&s).unwrap();
        let direct = direct_maximal(&s);
        for c in d.inside_cells() {
            assert!((m.get(c) - direct[c]).abs() < 1e-12, "cell {c}");
            assert!(m.get(c) >= s.get(c));
        }
    }

    #[test]
    fn single_spike_average_decays_with_ball_volume() {
        let d = square(32);
        let c0 = d.linear_index(&[10, 12]);
        let mut s = ScalarField::zeros(&d);
        s.set(c0, 4.0);
        let m = maximal_function(&s).unwrap();
        let direct = direct_maximal(&s);
        for c in d.inside_cells() {
            assert!((m.get(c) - direct[c]).abs() < 1e-12);
        }
        let far = d.linear_index(&[30, 30]);
        let near = d.linear_index(&[12, 12]);
        assert!(m.get(far) < m.get(near) && m.get(near) < 4.0);
        assert_eq!(m.get(c0), 4.0);
    }

    #[test]
    fn bounded_gradient_keeps_the_full_mask() {
        let d = square(16);
        let u = VectorField::from_fn(&d, |x| Vector::from_slice(&[x[0].sin(), 0.5 * x[1]]));
        let e = good_set(&u, 1.25f64.sqrt() + 1e-9).unwrap();
        assert!(d.inside_cells().all(|c| e[c]));
    }

    #[test]
    fn spike_is_cut_out_locally() {
        let d = square(32);
        let c0 = d.linear_index(&[16, 16]);
        let mut u = VectorField::from_fn(&d, |x| Vector::from_slice(&[0.2 * x[0], 0.1 * x[1]]));
        u.set(c0, Vector::from_slice(&[0.5, 0.0]));
        let e = good_set(&u, 2.0).unwrap();
        assert!(!e[c0]);
        let removed: Vec<usize> = d.inside_cells().filter(|&c| !e[c]).collect();
        let ms = maximal_function(&gradient(&u).unwrap().modulus()).unwrap();
        for c in d.inside_cells() {
            assert_eq!(e[c], ms.get(c) <= 2.0 * (1.0 + 1e-12));
        }
        for &c in &removed {
            assert!((d.center(c) - d.center(c0)).norm() < 0.35);
        }
    }

    #[test]
    fn tiny_lambda_is_degenerate() {
        let d = square(16);
        let u = VectorField::from_fn(&d, |x| Vector::from_slice(&[x[0], x[1]]));
        assert!(matches!(good_set(&u, 1e-9), Err(LabError::TruncationDegenerate { .. })));
        assert!(matches!(good_set(&u, -1.0), Err(LabError::Parameter(_))));
    }

    #[test]
    fn mcshane_two_point_cones() {
        let d = square(8);
        let a = d.linear_index(&[0, 0]);
        let b = d.linear_index(&[4, 0]);
        let mut e = vec![false; d.num_cells()];
        e[a] = true;
        e[b] = true;
        let dist = (d.center(a) - d.center(b)).norm();
        let mut u = VectorField::zeros(&d);
        u.set(b, Vector::from_slice(&[1.0, 0.0]));
        let m = 1.0 / dist;
        let um = lipschitz_extend(&u, &e, m).unwrap();
        assert_eq!(um.get(a), u.get(a));
        assert_eq!(um.get(b), u.get(b));
        let third = d.linear_index(&[6, 3]);
        let x = d.center(third);
        let expected = (m * (x - d.center(a)).norm()).min(1.0 + m * (x - d.center(b)).norm());
        assert_eq!(um.get(third)[0], expected.clamp(0.0, 1.0));
        let closer = d.linear_index(&[1, 1]);
        let y = d.center(closer);
        assert_eq!(um.get(closer)[0], m * (y - d.center(a)).norm());
    }

    #[test]
    fn mcshane_constant_and_full_set() {
        let d = square(8);
        let u = VectorField::from_fn(&d, |x| Vector::from_slice(&[x[0] * x[1], 2.0 * x[0]]));
        let full = d.mask().to_vec();
        let m = lipschitz_constant_on(&u, &full);
        assert_eq!(lipschitz_extend(&u, &full, m).unwrap().values(), u.values());
        let mut e = vec![false; d.num_cells()];
        e[3] = true;
        e[20] = true;
        let c = VectorField::from_fn(&d, |_| Vector::from_slice(&[1.5, -2.0]));
        let ext = lipschitz_extend(&c, &e, 3.0).unwrap();
        assert!(ext.values().iter().all(|v| *v == Vector::from_slice(&[1.5, -2.0])));
        assert!(lipschitz_extend(&c, &vec![false; d.num_cells()], 1.0).is_err());
    }

    #[test]
    fn globally_lipschitz_field_is_untouched() {
        let d = square(16);
        let u = VectorField::from_fn(&d, |x| Mat::rotation2(0.4).mul_vec(x));
        let t = truncate(&u, 4.0).unwrap();
        assert_eq!(t.excess_cells, 0);
        assert_eq!(t.excess_measure, 0.0);
        assert_eq!(t.extended().values(), u.values());
    }

    #[test]
    fn huge_spike_costs_a_few_cells() {
        let d = square(32);
        let c0 = d.linear_index(&[8, 20]);
        let mut u = VectorField::from_fn(&d, |x| Mat::rotation2(0.3).mul_vec(x));
        u.set(c0, Vector::from_slice(&[1.0, 1.0]));
        let t = truncate(&u, 4.0).unwrap();
        assert!(!t.good_set[c0]);
        assert!(t.excess_cells >= 1 && t.excess_measure <= EXCESS_CONSTANT * t.bound_rhs);
        assert!(t.bound_rhs.is_finite() && t.bound_rhs > 0.0);
        let um = t.extended();
        for c in d.inside_cells().filter(|&c| t.good_set[c]) {
            assert_eq!(um.get(c), u.get(c));
        }
        // the extension obeys √n·M over every pair
        let lip = lipschitz_constant_on(um, d.mask());
        assert!(lip <= 2f64.sqrt() * t.lipschitz_m * (1.0 + 2.0 * d.spacing() / d.diameter()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn good_set_grows_with_lambda(seed in 0u64..1000, l1 in 0.5f64..3.0, dl in 0.0f64..3.0) {
            let d = square(16);
            let u = noise(&d, seed, 0.1);
            match (good_set(&u, l1), good_set(&u, l1 + dl)) {
                (Ok(e1), Ok(e2)) => prop_assert!(d.inside_cells().all(|c| !e1[c] || e2[c])),
                // an empty good set at the larger level forces one at the smaller
                (Ok(_), Err(_)) => prop_assert!(false, "E empty at {} but not at {l1}", l1 + dl),
                (Err(_), _) => {}
            }
        }

        #[test]
        fn good_set_is_scale_invariant(seed in 0u64..1000, t in 0.25f64..4.0) {
            let d = square(16);
            let u = noise(&d, seed, 0.1);
            let scaled = u.left_mul(&Mat::identity(2).scale(t));
            let lambda = 3.0;
            let a = good_set(&u, lambda).unwrap();
            let b = good_set(&scaled, t * lambda).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn extension_is_exact_on_e(seed in 0u64..1000) {
            let d = square(16);
            let u = noise(&d, seed, 0.05).add(&VectorField::from_fn(&d, |x| Vector::from_slice(&[x[0], 0.0])));
            let t = truncate(&u, 4.0).unwrap();
            let um = t.extended();
            for c in d.inside_cells().filter(|&c| t.good_set[c]) {
                prop_assert_eq!(um.get(c), u.get(c));
            }
        }
    }
}
