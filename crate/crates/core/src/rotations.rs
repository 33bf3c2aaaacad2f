//! SO(n) geometry: pointwise distance to the rotation group, nearest
//! rotations, and the constant matrices subtracted by the decompositions.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fields::{MatrixField, ScalarField};
use crate::mat::Mat;

/// Nearest proper rotation and the Frobenius distance to it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationResult {
    pub rotation: Mat,
    pub distance: f64,
}

fn check_finite(a: &Mat) -> Result<()> {
    if !a.is_finite() {
        return Err(LabError::Input("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Nearest rotation in the Frobenius norm.
///
/// n = 2 uses the closed form: `R(θ)` maximizes `tr(R(θ)ᵀA)` at
/// `θ = atan2(a₂₁ − a₁₂, a₁₁ + a₂₂)`. n = 3 goes through the SVD.
pub fn nearest_rotation(a: &Mat) -> Result<RotationResult> {
    check_finite(a)?;
    match a.dim() {
        2 => Ok(nearest_rotation_2d(a)),
        3 => Ok(nearest_rotation_svd(a)),
        n => Err(LabError::Parameter(format!("unsupported dimension {n}"))),
    }
}

fn nearest_rotation_2d(a: &Mat) -> RotationResult {
    let c = a[(0, 0)] + a[(1, 1)];
    let s = a[(1, 0)] - a[(0, 1)];
    let theta = s.atan2(c);
    let rotation = Mat::rotation2(theta);
    // evaluated directly: |A|² − 2√(c² + s²) + 2 cancels badly near SO(2)
    let distance = (*a - rotation).norm();
    RotationResult { rotation, distance }
}

/// SVD route for any n ∈ {2, 3}: `Q = U·diag(1, …, 1, ±1)·Vᵀ` with the sign
/// applied to the direction of the smallest singular value.
pub fn nearest_rotation_svd(a: &Mat) -> RotationResult {
    let n = a.dim();
    let (u, sigma, v_t) = if n == 2 {
        let svd = a.to_na2().svd(true, true);
        let u = Mat::from_na2(&svd.u.expect("u requested"));
        let vt = Mat::from_na2(&svd.v_t.expect("v_t requested"));
        (u, svd.singular_values.as_slice().to_vec(), vt)
    } else {
        let svd = a.to_na3().svd(true, true);
        let u = Mat::from_na3(&svd.u.expect("u requested"));
        let vt = Mat::from_na3(&svd.v_t.expect("v_t requested"));
        (u, svd.singular_values.as_slice().to_vec(), vt)
    };
    let mut d = vec![1.0; n];
    if (u * v_t).det() < 0.0 {
        let smallest = (0..n).min_by(|&i, &j| sigma[i].total_cmp(&sigma[j])).expect("nonempty spectrum");
        d[smallest] = -1.0;
    }
    let rotation = u * Mat::diag(&d) * v_t;
    let distance = (*a - rotation).norm();
    RotationResult { rotation, distance }
}

/// `dist(A, SO(n))`.
pub fn dist_so(a: &Mat) -> Result<f64> {
    Ok(nearest_rotation(a)?.distance)
}

/// Pointwise `dist(Du, SO(n))`.
pub fn dist_field(du: &MatrixField) -> Result<ScalarField> {
    let domain = du.domain();
    let mut out = ScalarField::zeros(domain);
    for c in domain.inside_cells() {
        out.set(c, nearest_rotation(&du.get(c))?.distance);
    }
    Ok(out)
}

/// Nearest rotation to the cell average of `Du`.
pub fn procrustes_mean(du: &MatrixField) -> Result<Mat> {
    Ok(nearest_rotation(&du.mean())?.rotation)
}

/// Cell average of the skew part `(Du − Duᵀ)/2`.
pub fn skew_mean(du: &MatrixField) -> Mat {
    skew_mean_on(du, du.domain().mask())
}

/// Skew average over a subset of the mask.
pub fn skew_mean_on(du: &MatrixField, subset: &[bool]) -> Mat {
    du.mean_on(subset).skew()
}

/// Whether `q` is a proper rotation to tolerance `tol`.
pub fn is_rotation(q: &Mat, tol: f64) -> bool {
    let n = q.dim();
    (q.transpose() * *q).max_abs_diff(&Mat::identity(n)) <= tol && (q.det() - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    use crate::fields::{make_domain, DomainKind, VectorField};

    /// Brute-force minimum of |A − R(θ)| over a θ grid, refined by golden section.
    fn theta_oracle(a: &Mat) -> (f64, f64) {
        let obj = |t: f64| (*a - Mat::rotation2(t)).norm();
        let m = 20_000;
        let (mut best_t, mut best) = (0.0, f64::INFINITY);
        for k in 0..m {
            let t = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / m as f64;
            if obj(t) < best {
                best = obj(t);
                best_t = t;
            }
        }
        let step = 2.0 * std::f64::consts::PI / m as f64;
        let (mut lo, mut hi) = (best_t - step, best_t + step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let x1 = hi - g * (hi - lo);
            let x2 = lo + g * (hi - lo);
            if obj(x1) < obj(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        let t = 0.5 * (lo + hi);
        (t, obj(t))
    }

    fn random_mat(rng: &mut impl Rng, n: usize, scale: f64) -> Mat {
        let e: Vec<f64> = (0..n * n).map(|_| rng.random_range(-scale..scale)).collect();
        Mat::from_rows(n, &e)
    }

    pub(crate) fn random_rotation(rng: &mut impl Rng, n: usize) -> Mat {
        nearest_rotation_svd(&random_mat(rng, n, 1.0)).rotation
    }

    #[test]
    fn identity_and_zero() {
        for n in [2, 3] {
            let r = nearest_rotation(&Mat::identity(n)).unwrap();
            assert!(r.rotation.max_abs_diff(&Mat::identity(n)) < 1e-15);
            assert!(r.distance < 1e-15);
            let z = nearest_rotation(&Mat::zeros(n)).unwrap();
            assert!((z.distance - (n as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn reflection_distance_is_two() {
        let a = Mat::diag(&[1.0, -1.0]);
        let (_, oracle) = theta_oracle(&a);
        assert!((oracle - 2.0).abs() < 1e-9);
        assert!((nearest_rotation(&a).unwrap().distance - 2.0).abs() < 1e-12);
        assert!((nearest_rotation_svd(&a).distance - 2.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_svd_and_theta_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_mat(&mut rng, 2, 2.0);
            let cf = nearest_rotation(&a).unwrap();
            let svd = nearest_rotation_svd(&a);
            let (_, oracle) = theta_oracle(&a);
            assert!((cf.distance - svd.distance).abs() < 1e-10);
            assert!((cf.distance - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn minimality_over_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 3] {
            for _ in 0..1000 {
                let a = random_mat(&mut rng, n, 3.0);
                let r = nearest_rotation(&a).unwrap();
                assert!(is_rotation(&r.rotation, 1e-12));
                for _ in 0..200 {
                    let q = random_rotation(&mut rng, n);
                    assert!(r.distance <= (a - q).norm() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn rotation_invariance_and_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 3] {
            for _ in 0..200 {
                let a = random_mat(&mut rng, n, 2.0);
                let q1 = random_rotation(&mut rng, n);
                let q2 = random_rotation(&mut rng, n);
                let d0 = nearest_rotation(&a).unwrap().distance;
                let d1 = nearest_rotation(&(q1 * a * q2)).unwrap().distance;
                assert!((d0 - d1).abs() < 1e-10);
                let q0 = random_rotation(&mut rng, n);
                let r = nearest_rotation(&q0).unwrap();
                assert!(r.distance <= 1e-12);
                assert!(r.rotation.max_abs_diff(&q0) < 1e-12);
            }
        }
    }

    #[test]
    fn negative_determinant_gives_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [2, 3] {
            for _ in 0..200 {
                let mut a = random_mat(&mut rng, n, 2.0);
                if a.det() > 0.0 {
                    a = Mat::diag(&if n == 2 { vec![1.0, -1.0] } else { vec![1.0, 1.0, -1.0] }) * a;
                }
                let r = nearest_rotation(&a).unwrap();
                assert!((r.rotation.det() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        let a = Mat::from_rows(2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(matches!(nearest_rotation(&a), Err(LabError::Input(_))));
    }

    #[test]
    fn dist_field_examples() {
        let d = Arc::new(make_domain(DomainKind::Square, 2, 1.0, 8, 0.0).unwrap());
        let q0 = Mat::rotation2(0.4);
        let f = MatrixField::from_fn(&d, |_| q0);
        assert!(dist_field(&f).unwrap().values().iter().all(|&v| v < 1e-15));
        let f = MatrixField::from_fn(&d, |_| Mat::identity(2).scale(2.0));
        assert!(d.inside_cells().all(|c| (dist_field(&f).unwrap().get(c) - 2f64.sqrt()).abs() < 1e-14));
        let f = MatrixField::from_fn(&d, |_| Mat::diag(&[1.0, -1.0]));
        assert!(d.inside_cells().all(|c| (dist_field(&f).unwrap().get(c) - 2.0).abs() < 1e-14));
    }

    #[test]
    fn procrustes_and_skew_means() {
        let d = Arc::new(make_domain(DomainKind::Lshape, 2, 1.0, 16, 0.0).unwrap());
        let q0 = Mat::rotation2(-1.1);
        let field = MatrixField::from_fn(&d, |_| q0);
        assert!(procrustes_mean(&field).unwrap().max_abs_diff(&q0) < 1e-14);
        // mean-zero perturbation: antisymmetric about the center of the L
        let pert = MatrixField::from_fn(&d, |x| Mat::from_rows(2, &[x[0] - x[1], 0.0, 0.0, x[1] - x[0]]));
        let total = field.add(&pert.sub_const(&pert.mean()));
        assert!(procrustes_mean(&total).unwrap().max_abs_diff(&q0) < 1e-13);

        let s0 = Mat::from_rows(2, &[0.0, 0.7, -0.7, 0.0]);
        let u = VectorField::from_fn(&d, |x| s0.mul_vec(x));
        let du = crate::fields::gradient(&u).unwrap();
        assert!(skew_mean(&du).max_abs_diff(&s0) < 1e-12);
        let sym = MatrixField::from_fn(&d, |x| Mat::from_rows(2, &[x[0], x[1], x[1], 1.0]));
        assert_eq!(skew_mean(&sym), Mat::zeros(2));
    }

    #[test]
    fn procrustes_matches_theta_oracle_near_reflection() {
        let d = Arc::new(make_domain(DomainKind::Square, 2, 1.0, 8, 0.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let field = MatrixField::from_fn(&d, |_| Mat::diag(&[1.0, -1.0]));
        let mut noisy = field.clone();
        for c in d.inside_cells() {
            noisy.set(c, field.get(c) + random_mat(&mut rng, 2, 0.1));
        }
        let q = procrustes_mean(&noisy).unwrap();
        let (theta, _) = theta_oracle(&noisy.mean());
        assert!(q.max_abs_diff(&Mat::rotation2(theta)) < 1e-6);
    }
}
