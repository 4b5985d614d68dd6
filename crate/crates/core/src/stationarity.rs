//! Second-order stationarity tests from the minimum Hessian eigenvalue.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{gradient_of, FiniteSumProblem};
use crate::vecops::norm;

const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationarityError {
    #[error("matrix is not square ({rows}×{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |H[{row},{col}] − H[{col},{row}]| = {gap}")]
    Asymmetric { row: usize, col: usize, gap: f64 },
    #[error("empty matrix")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    NotFirstOrder,
    SecondOrderStationary,
    StrictSaddle,
    HessianUnavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub grad_norm: f64,
    pub min_eig: Option<f64>,
    pub classification: Classification,
    pub epsilon: f64,
    pub rho: f64,
    /// `√(ρε)`.
    pub threshold: f64,
    /// The point lies outside the ball where the problem's `ρ` is certified.
    pub outside_trust_region: bool,
}

/// Smallest eigenvalue of a symmetric matrix (dense symmetric eigensolver).
pub fn min_eigenvalue(h: &DMatrix<f64>) -> Result<f64, StationarityError> {
    let (rows, cols) = h.shape();
    if rows != cols {
        return Err(StationarityError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(StationarityError::Empty);
    }
    let scale = h.amax().max(1.0);
    for r in 0..rows {
        for c in r + 1..cols {
            let gap = (h[(r, c)] - h[(c, r)]).abs();
            if gap > SYMMETRY_TOLERANCE * scale {
                return Err(StationarityError::Asymmetric { row: r, col: c, gap });
            }
        }
    }
    let eig = h.clone().symmetric_eigenvalues();
    Ok(eig.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Classifies `x` against `‖∇f‖ ≤ ε` and `λ_min(∇²f) ≥ −√(ρε)`.
pub fn classify(
    problem: &dyn FiniteSumProblem,
    x: &[f64],
    epsilon: f64,
    rho: f64,
) -> Result<StationarityReport, StationarityError> {
    let grad_norm = norm(&gradient_of(problem, x));
    let threshold = (rho * epsilon).sqrt();
    let outside_trust_region = !problem.smoothness().contains(x);
    let min_eig = match problem.dense_hessian(x) {
        Some(h) => Some(min_eigenvalue(&h)?),
        None => None,
    };
    let classification = match min_eig {
        None => Classification::HessianUnavailable,
        Some(_) if grad_norm > epsilon => Classification::NotFirstOrder,
        Some(l) if l >= -threshold => Classification::SecondOrderStationary,
        Some(_) => Classification::StrictSaddle,
    };
    Ok(StationarityReport {
        grad_norm,
        min_eig,
        classification,
        epsilon,
        rho,
        threshold,
        outside_trust_region,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quartic_saddle, make_tanh_mlp};
    use crate::samplers::{sample_uniform_ball, RngStream};
    use approx::assert_relative_eq;

    fn random_symmetric(rng: &mut RngStream, d: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.standard_normal());
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn diagonal_and_identity() {
        assert_eq!(min_eigenvalue(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 1.0]))).unwrap(), -1.0);
        assert_relative_eq!(min_eigenvalue(&DMatrix::identity(4, 4)).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn asymmetry_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(min_eigenvalue(&h), Err(StationarityError::Asymmetric { .. })));
        assert!(matches!(
            min_eigenvalue(&DMatrix::zeros(2, 3)),
            Err(StationarityError::NotSquare { .. })
        ));
    }

    #[test]
    fn rayleigh_quotients_bound_from_above() {
        let mut rng = RngStream::new(21, 0);
        let h = random_symmetric(&mut rng, 20);
        let lam = min_eigenvalue(&h).unwrap();
        let mut best = f64::INFINITY;
        for _ in 0..10_000 {
            let v = nalgebra::DVector::from_vec(sample_uniform_ball(&mut rng, 20, 1.0).unwrap());
            let q = v.dot(&(&h * &v)) / v.dot(&v);
            best = best.min(q);
        }
        assert!(lam <= best + 1e-12);
        // Random directions in 20-D rarely align with the bottom eigenvector,
        // but the sample minimum must stay within the spectrum.
        let lam_max = -min_eigenvalue(&(-&h)).unwrap();
        assert!(best <= lam_max);
    }

    #[test]
    fn cubic_characteristic_polynomial_root() {
        let mut rng = RngStream::new(5, 0);
        for _ in 0..20 {
            let h = random_symmetric(&mut rng, 3);
            let lam = min_eigenvalue(&h).unwrap();
            // det(H − λI) by cofactor expansion vanishes at an eigenvalue.
            let m = |r: usize, c: usize| h[(r, c)] - if r == c { lam } else { 0.0 };
            let det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
            let scale = h.amax().powi(3).max(1.0);
            assert!(det.abs() <= 1e-10 * scale, "det {det}");
            // Smallest root: the polynomial keeps one sign below it.
            let below = |x: f64| {
                let m = |r: usize, c: usize| h[(r, c)] - if r == c { x } else { 0.0 };
                m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                    - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                    + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
            };
            assert!(below(lam - 1e-3) > 0.0);
        }
    }

    #[test]
    fn shift_moves_the_minimum() {
        let mut rng = RngStream::new(8, 0);
        for _ in 0..50 {
            let d = 2 + rng.index_inclusive(8);
            let h = random_symmetric(&mut rng, d);
            let c = 4.0 * rng.uniform() - 2.0;
            let shifted = &h + DMatrix::identity(d, d) * c;
            assert!((min_eigenvalue(&shifted).unwrap() - min_eigenvalue(&h).unwrap() - c).abs() <= 1e-8);
        }
    }

    #[test]
    fn quartic_points() {
        let p = make_quartic_saddle(2, 0.0, 0);
        let r = classify(&p, &[0.0, 0.0], 0.01, 12.0).unwrap();
        assert_eq!(r.grad_norm, 0.0);
        assert_relative_eq!(r.min_eig.unwrap(), -1.0, epsilon = 1e-14);
        assert_eq!(r.classification, Classification::StrictSaddle);
        assert_relative_eq!(r.threshold * r.threshold, 0.12, max_relative = 1e-12);
        let r = classify(&p, &[1.0, 0.0], 0.01, 12.0).unwrap();
        assert_relative_eq!(r.min_eig.unwrap(), 1.0, epsilon = 1e-14);
        assert_eq!(r.classification, Classification::SecondOrderStationary);
        let r = classify(&p, &[0.5, 0.0], 0.1, 12.0).unwrap();
        assert_relative_eq!(r.grad_norm, 0.375, epsilon = 1e-14);
        assert_eq!(r.classification, Classification::NotFirstOrder);
        assert!(!r.outside_trust_region);
        assert!(classify(&p, &[3.0, 0.0], 0.1, 12.0).unwrap().outside_trust_region);
    }

    #[test]
    fn threshold_is_invariant_under_reciprocal_scaling() {
        let p = make_quartic_saddle(2, 0.0, 0);
        let a = classify(&p, &[0.0, 0.0], 0.02, 6.0).unwrap();
        let b = classify(&p, &[0.0, 0.0], 0.01, 12.0).unwrap();
        assert_relative_eq!(a.threshold, b.threshold, max_relative = 1e-15);
    }

    #[test]
    fn trichotomy_is_exclusive() {
        let p = make_quartic_saddle(3, 0.2, 11);
        let mut rng = RngStream::new(2, 0);
        for _ in 0..200 {
            let x = sample_uniform_ball(&mut rng, 2, 1.5).unwrap();
            let r = classify(&p, &x, 0.3, 12.0).unwrap();
            let lam = r.min_eig.unwrap();
            let first = r.grad_norm <= r.epsilon;
            let expected = match (first, lam >= -r.threshold) {
                (false, _) => Classification::NotFirstOrder,
                (true, true) => Classification::SecondOrderStationary,
                (true, false) => Classification::StrictSaddle,
            };
            assert_eq!(r.classification, expected);
        }
    }

    #[test]
    fn no_hessian_still_reports_gradient() {
        let data = crate::data_ingest::make_gaussian_blobs(2, 3, 2, 1.0, 0).unwrap();
        let p = make_tanh_mlp(&[2, 3, 2], std::sync::Arc::new(data), 2, 0).unwrap();
        let x = vec![0.0; p.dim()];
        let r = classify(&p, &x, 0.1, 1.0).unwrap();
        assert_eq!(r.classification, Classification::HessianUnavailable);
        assert!(r.min_eig.is_none());
        assert!(r.grad_norm.is_finite());
    }
}
